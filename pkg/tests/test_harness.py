import math

import numpy as np
import pytest
from pytest import approx

from editlab.bench.build import Benchmark
from editlab.editors import EditorConfig
from editlab.errors import ConfigError, ContractError, ProvenanceError
from editlab.harness import (DIMENSIONS, PRE_EDIT, EditReport, RunConfig, InstanceResult, evaluate_instance,
                             run_instance, run_editor, run_experiment, sweep_layers, spearman_trend, check_gates,
                             check_sweep_gates, aggregate_run, suite_counts, editor_configs)
from editlab.layers import LayerImportanceProfile
from editlab.metrics import MetricRecord

from .conftest import ScriptedModel


def make_report(editor, **aem):
    """report whose AEM per dimension is given, every other metric equal to it"""
    dims = {dim: (None if aem.get(dim, 0.0) is None else MetricRecord(*([aem.get(dim, 0.0)] * 4)))
            for dim in DIMENSIONS}
    return EditReport(editor, dims, counts={dim: 1 for dim in DIMENSIONS})


def _bench(model, instances, suites):
    bench = Benchmark(list(instances), {i.id: suites[i.id] for i in instances}, {})
    bench.manifest = {"model_hash": model.checksum(), "counts": suite_counts(bench)}
    return bench


def test_evaluate_instance_scripted(instances, suites):
    inst = instances[0]
    suite = suites[inst.id]
    model = ScriptedModel({tuple(inst.input): inst.target_line}, default=["x", "=", "a"])
    recs = evaluate_instance(model, inst, suite)
    assert recs["effectiveness"].as_tuple() == approx((1.0, 1.0, 1.0, 1.0))
    # the test suites reuse the input as its rephrasing
    assert recs["generalization"].aem == 1.0
    assert recs["portability"].aem == 0.0
    # every specificity truth is the scripted default
    assert recs["specificity"].em == 1.0 and recs["specificity"].aem == 1.0

    suite_no_port = type(suite)(suite.instance_id, suite.generalization, suite.generalization_line, [],
                                suite.specificity)
    assert evaluate_instance(model, inst, suite_no_port)["portability"] is None


def test_aggregate_run_skips_missing():
    r1 = InstanceResult("b", {"effectiveness": MetricRecord(1, 1, 1, 1), "generalization": MetricRecord(),
                              "portability": None, "specificity": MetricRecord(1, 1, 1, 1)})
    r2 = InstanceResult("a", {"effectiveness": MetricRecord(), "generalization": MetricRecord(),
                              "portability": MetricRecord(1, 1, 0.5, 0.5), "specificity": MetricRecord(1, 1, 1, 1)})
    agg = aggregate_run([r1, r2])
    assert agg["effectiveness"].aem == 0.5
    assert agg["portability"].as_tuple() == approx((1.0, 1.0, 0.5, 0.5))
    assert agg["specificity"].em == 1.0


def test_run_instance_rolls_back(model, instances, suites):
    inst = instances[0]
    checksum = model.checksum()
    res = run_instance(model, inst, suites[inst.id], EditorConfig.for_method("lora", epochs=2), max_new=4)
    assert model.checksum() == checksum
    assert model.active_edit is None
    assert set(res.records) == set(DIMENSIONS)
    assert res.wall_ms > 0 and res.touched > 0

    res = run_instance(model, inst, suites[inst.id], None, max_new=4)
    assert res.wall_ms == 0.0 and res.touched == 0


def test_run_editor_medians_and_baseline(model, instances, suites):
    bench = _bench(model, instances[:4], suites)
    seeds = [0, 1, 2]
    pre = run_editor(model, bench, None, seeds, max_new=4)
    assert pre.editor == PRE_EDIT
    assert pre.n_runs == 3
    assert pre.per_run[0] == pre.per_run[2]

    rep = run_editor(model, bench, EditorConfig.for_method("grace", epochs=1), seeds, max_new=4)
    assert rep.editor == "grace"
    assert rep.seeds == seeds
    for dim in DIMENSIONS:
        per = np.array([run[dim].as_tuple() for run in rep.per_run])
        assert rep.dims[dim].as_tuple() == approx(tuple(np.median(per, axis=0)))
    assert rep.settings["method"] == "GRACE"


def test_run_editor_parallel_matches_serial(model, instances, suites):
    bench = _bench(model, instances[:4], suites)
    config = EditorConfig.for_method("lora", epochs=1)
    parallel = run_editor(model, bench, config, [0], max_new=3)
    serial = run_editor(model, bench, config, [0], max_new=3, autopara_info={"num_python_subprocesses": 0})
    assert parallel.dims == serial.dims


def test_run_editor_count_mismatch(model, instances, suites):
    bench = _bench(model, instances[:2], suites)
    bench.manifest["counts"] = {"effectiveness": 99}
    with pytest.raises(ContractError):
        run_editor(model, bench, None, [0], max_new=2)


def test_run_experiment(model, instances, suites):
    bench = _bench(model, instances[:2], suites)
    rc = RunConfig([EditorConfig.for_method("ftl", epochs=1)], n_runs=1, max_new=2)
    reports = run_experiment(model, bench, rc)
    assert [r.editor for r in reports] == [PRE_EDIT, "ftl"]

    with pytest.raises(ConfigError):
        run_experiment(model, bench, RunConfig([EditorConfig.for_method("adalora_l", n_common=1, n_specific=2)],
                                               n_runs=1, max_new=2))

    bench.manifest["model_hash"] = "other"
    with pytest.raises(ProvenanceError):
        run_experiment(model, bench, rc)


def test_run_config():
    assert RunConfig([], n_runs=3, base_seed=10).seeds == [10, 11, 12]
    with pytest.raises(ConfigError):
        RunConfig([], n_runs=0)


def test_editor_configs():
    configs = editor_configs(["pre_edit", "adalora", "AdaLoRA-L"], {"adalora": {"epochs": 3}})
    assert configs[0] == PRE_EDIT
    assert configs[1].epochs == 3
    assert configs[2].n_specific == 4


def test_sweep_skips_infeasible(model, instances, suites, capsys):
    bench = _bench(model, instances[:2], suites)
    profiles = {i.api_id: LayerImportanceProfile(i.api_id, np.array([3.0, 2.0, 1.0]), 1) for i in instances[:2]}
    base = EditorConfig.for_method("adalora_l", epochs=1)
    with pytest.warns(UserWarning, match="infeasible"):
        points = sweep_layers(model, bench, base, profiles, [0, 1, 3], [1, 3], max_new=2)
    assert [(c, s) for c, s, _ in points] == [(0, 1), (0, 3), (1, 1)]
    assert all(r.editor == "adalora_l" for _, _, r in points)
    out = capsys.readouterr().out
    assert "sweep: n_common 0 n_specific 3" in out
    assert "sweep: n_common 1 n_specific 3" not in out

    with pytest.raises(ConfigError):
        sweep_layers(model, bench, EditorConfig.for_method("lora"), profiles, [0], [1])


def test_spearman_trend():
    points = [(0, s, make_report("adalora_l", effectiveness=0.1 * s, specificity=1.0 - 0.1 * s)) for s in (1, 2, 4)]
    assert spearman_trend(points, "n_specific", "effectiveness") == approx(1.0)
    assert spearman_trend(points, "n_specific", "specificity") == approx(-1.0)
    flat = [(0, s, make_report("adalora_l", effectiveness=0.5)) for s in (1, 2, 4)]
    assert math.isnan(spearman_trend(flat, "n_specific", "effectiveness"))
    with pytest.raises(ValueError):
        spearman_trend(points, "n_layers", "effectiveness")


def _passing_reports():
    return [make_report(PRE_EDIT, effectiveness=0.0, generalization=0.0, portability=0.2, specificity=1.0),
            make_report("adalora", effectiveness=0.95, generalization=0.8, portability=0.5, specificity=0.7),
            make_report("grace", effectiveness=1.0, generalization=0.1, portability=0.25, specificity=1.0),
            make_report("adalora_l", effectiveness=0.93, generalization=0.8, portability=0.5, specificity=0.8)]


def test_check_gates_pass():
    assert check_gates(_passing_reports()) == []


def test_check_gates_fail_messages():
    reports = _passing_reports()
    reports[3] = make_report("adalora_l", effectiveness=0.80, specificity=0.6)
    reports[2] = make_report("grace", effectiveness=1.0, portability=0.9, specificity=1.0)
    failures = check_gates(reports)
    assert len(failures) == 3
    assert all(f.startswith("expected ") and ", observed " in f for f in failures)


def test_check_gates_missing_portability():
    reports = _passing_reports()
    reports[0] = make_report(PRE_EDIT, effectiveness=0.0, portability=None, specificity=1.0)
    assert check_gates(reports) == []


def test_check_sweep_gates():
    points = [(2, s, make_report("adalora_l", effectiveness=0.1 * s, specificity=1.0 - 0.05 * s))
              for s in (1, 2, 4, 6)]
    points += [(c, 4, make_report("adalora_l", effectiveness=0.4, specificity=0.5 + 0.05 * c)) for c in (0, 4, 8)]
    assert check_sweep_gates(points) == []

    bad = [(2, s, make_report("adalora_l", effectiveness=0.5 - 0.1 * s, specificity=0.5)) for s in (1, 2, 4)]
    failures = check_sweep_gates(bad)
    assert len(failures) == 2
