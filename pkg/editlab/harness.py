"""Experiment loop: edit, evaluate the four suites, roll back, aggregate over runs

Each editor is run ``n_runs`` times with seeds ``base_seed + r``.  A run visits every
benchmark instance independently (edit -> evaluate -> rollback), the per-dimension
metrics are averaged over instances, and the reported value is the elementwise
median of the per-run means.  The pre-edit model is always reported as a
``pre_edit`` row.
"""
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from editlab.autoparallelize import autoparallelize, autoparallelize_docstring
from editlab.editors import EditMethod, EditorConfig, profile_edit, rollback, n_touched_scalars
from editlab.errors import ContractError, RollbackError, ConfigError, ProvenanceError
from editlab.layers import ApiLayerMap
from editlab.metrics import score, mean_record, median_record, METRIC_NAMES
from editlab.utils.logging import print_log

DIMENSIONS = ("effectiveness", "generalization", "portability", "specificity")
PRE_EDIT = "pre_edit"

DEFAULT_COMMON_RANGE = (0, 4, 8, 12)
DEFAULT_SPECIFIC_RANGE = (1, 2, 4, 6, 8, 10)
SWEEP_FIXED_COMMON = 2
SWEEP_FIXED_SPECIFIC = 4


def evaluate_instance(model, instance, suite, max_new=24):
    """greedy completions of every suite input scored against its ground truth

    Returns
    -------
    dict dimension -> MetricRecord, portability None if the suite has no entry
    """
    out = {}
    c = model.complete_tokens(instance.input, max_new)
    out["effectiveness"] = score(c, instance.target_line, instance.target)
    c = model.complete_tokens(suite.generalization, max_new)
    out["generalization"] = score(c, suite.generalization_line, instance.target)
    out["portability"] = mean_record(score(model.complete_tokens(p.input, max_new), p.target_line, instance.target)
                                     for p in suite.portability)
    out["specificity"] = mean_record(score(model.complete_tokens(s.input, max_new), s.completion, s.api)
                                     for s in suite.specificity)
    return out


@dataclass
class InstanceResult:
    instance_id: str
    records: dict
    wall_ms: float = 0.0
    peak_bytes: int = 0
    touched: int = 0


def run_instance(model, instance, suite, config=None, layer_map=None, max_new=24):
    """edit (unless config is None), evaluate and roll back one instance

    Raises
    ------
    RollbackError if the model checksum after rollback differs from the pre-edit one
    """
    before = model.checksum()
    if config is None:
        return InstanceResult(instance.id, evaluate_instance(model, instance, suite, max_new))

    handle, wall_ms, peak = profile_edit(model, instance, config, layer_map=layer_map)
    try:
        records = evaluate_instance(model, instance, suite, max_new)
        touched = n_touched_scalars(model, handle)
    finally:
        rollback(model, handle)
    if model.checksum() != before:
        raise RollbackError(f"{config.label} rollback of {instance.id} did not restore the pre-edit model")
    return InstanceResult(instance.id, records, wall_ms, peak, touched)


def _run_instances_autopara_wrappable(instances, model, suites, config=None, layer_map=None, max_new=24):
    """edit, evaluate and roll back each instance

    Parameters
    ----------
    instances: list(EditInstance)
        instances to edit
    model: TransformerLM
        pre-edit model, each worker edits its own copy
    suites: dict
        instance id -> EvalSuite
    config: EditorConfig, default None
        editor, None to evaluate the unedited model
    layer_map: ApiLayerMap, default None
        needed by AdaLoRA_L
    max_new: int, default 24
        decoding length limit

    Returns
    -------
    results: list(InstanceResult)
    """
    return [run_instance(model, inst, suites[inst.id], config, layer_map, max_new) for inst in instances]


def run_instances(*args, **kwargs):
    default_autopara_info = {"num_inputs_per_python_subprocess": 2}
    return autoparallelize(_run_instances_autopara_wrappable, *args, default_autopara_info=default_autopara_info,
                           **kwargs)
autoparallelize_docstring(run_instances, _run_instances_autopara_wrappable, "EditInstance")


def aggregate_run(results):
    """per-dimension mean over instances, in instance id order"""
    results = sorted(results, key=lambda r: r.instance_id)
    return {dim: mean_record(r.records[dim] for r in results if r.records[dim] is not None) for dim in DIMENSIONS}


def suite_counts(bench):
    suites = [bench.suites[i.id] for i in bench.instances]
    return {"effectiveness": len(bench.instances),
            "generalization": len(bench.instances),
            "portability": sum(1 for s in suites if s.portability),
            "specificity": sum(len(s.specificity) for s in suites)}


@dataclass
class EditReport:
    """median-of-runs metrics of one editor, with cost figures

    Parameters
    ----------
    editor: str
        editor label, ``pre_edit`` for the unedited baseline
    dims: dict
        dimension -> MetricRecord (median over runs), None for an empty dimension
    counts: dict
        dimension -> number of evaluated inputs
    per_run: list(dict)
        per-run dimension -> MetricRecord means
    wall_ms: float
        mean wall time per edit
    peak_bytes: float
        mean peak traced allocation per edit, approximate
    touched: float
        mean number of scalar weights updated or created per edit
    seeds: list(int)
    settings: dict
        editor configuration
    """
    editor: str
    dims: dict
    counts: dict
    per_run: list = field(default_factory=list)
    wall_ms: float = 0.0
    peak_bytes: float = 0.0
    touched: float = 0.0
    seeds: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def n_runs(self):
        return len(self.per_run)

    def value(self, dim, metric):
        rec = self.dims.get(dim)
        return None if rec is None else getattr(rec, metric)


@dataclass
class RunConfig:
    """one experiment

    Parameters
    ----------
    editors: list(EditorConfig or "pre_edit")
    n_runs: int, default 5
    base_seed: int, default 0
        run r uses seed base_seed + r
    max_new: int, default 24
    """
    editors: list
    n_runs: int = 5
    base_seed: int = 0
    max_new: int = 24

    def __post_init__(self):
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")

    @property
    def seeds(self):
        return [self.base_seed + r for r in range(self.n_runs)]


def run_editor(model, bench, config, seeds, layer_map=None, max_new=24, autopara_info=None, verbose=False):
    """EditReport of one editor (None for the pre-edit baseline) over ``seeds``"""
    label = PRE_EDIT if config is None else config.label
    counts = suite_counts(bench)
    if bench.manifest.get("counts") not in (None, counts):
        raise ContractError(f"benchmark suites {counts} disagree with manifest counts {bench.manifest['counts']}")

    # the baseline is deterministic, one pass serves every seed
    run_seeds = seeds[:1] if config is None else seeds
    per_run, wall, peak, touched = [], [], [], []
    for seed in run_seeds:
        cfg = None if config is None else config.with_seed(seed)
        results = run_instances(bench.instances, model, bench.suites, config=cfg, layer_map=layer_map,
                                max_new=max_new, autopara_info=autopara_info)
        per_run.append(aggregate_run(results))
        wall.extend(r.wall_ms for r in results)
        peak.extend(r.peak_bytes for r in results)
        touched.extend(r.touched for r in results)
        if verbose:
            eff = per_run[-1]["effectiveness"]
            print_log(f"run: {label} seed {seed} effectiveness AEM {eff.aem:.3f}")
    if config is None:
        per_run = per_run * len(seeds)

    dims = {dim: median_record(run[dim] for run in per_run) for dim in DIMENSIONS}
    return EditReport(editor=label, dims=dims, counts=counts, per_run=per_run,
                      wall_ms=float(np.mean(wall)) if wall else 0.0,
                      peak_bytes=float(np.mean(peak)) if peak else 0.0,
                      touched=float(np.mean(touched)) if touched else 0.0,
                      seeds=list(seeds), settings={} if config is None else config.to_dict())


def run_experiment(model, bench, run_config, profiles=None, autopara_info=None, verbose=False):
    """reports of the pre-edit baseline and every configured editor, in that order

    Parameters
    ----------
    model: TransformerLM
        pre-edit model the benchmark was built from
    bench: Benchmark
        loaded (and revalidated) benchmark
    run_config: RunConfig
    profiles: dict, optional
        per-API layer importance profiles, required when AdaLoRA_L is run
    autopara_info: AutoparaInfo / dict, optional
    verbose: bool

    Returns
    -------
    list(EditReport)
    """
    if bench.manifest.get("model_hash") != model.checksum():
        raise ProvenanceError("benchmark was built from a different model checkpoint")

    editors = [e for e in run_config.editors if e != PRE_EDIT]
    reports = [run_editor(model, bench, None, run_config.seeds, max_new=run_config.max_new,
                          autopara_info=autopara_info, verbose=verbose)]
    for ec in editors:
        layer_map = None
        if ec.method == EditMethod.ADALORA_L:
            if profiles is None:
                raise ConfigError("adalora_l needs layer importance profiles")
            layer_map = ApiLayerMap.from_profiles(profiles, ec.n_common, ec.n_specific)
        print_log(f"run: {ec.label} over {len(bench.instances)} instances, {run_config.n_runs} runs")
        reports.append(run_editor(model, bench, ec, run_config.seeds, layer_map=layer_map,
                                  max_new=run_config.max_new, autopara_info=autopara_info, verbose=verbose))
    return reports


def sweep_layers(model, bench, base_config, profiles, common_range, specific_range, n_runs=1, base_seed=0,
                 max_new=24, autopara_info=None, verbose=False):
    """one AdaLoRA_L report per feasible (n_common, n_specific) grid point

    Returns
    -------
    list((n_common, n_specific, EditReport)) in grid order
    """
    if base_config.method != EditMethod.ADALORA_L:
        raise ConfigError(f"layer sweeps run adalora_l, got {base_config.label}")
    n_layers = model.config.n_layers
    seeds = RunConfig([], n_runs, base_seed).seeds
    points = []
    for n_common in common_range:
        for n_specific in specific_range:
            if n_specific < 1 or n_common < 0 or n_common >= n_layers or n_common + n_specific > n_layers:
                warnings.warn(f"skipping infeasible sweep point n_common={n_common} n_specific={n_specific} "
                              f"for {n_layers} layers")
                continue
            ec = replace(base_config, n_common=n_common, n_specific=n_specific)
            layer_map = ApiLayerMap.from_profiles(profiles, n_common, n_specific)
            print_log(f"sweep: n_common {n_common} n_specific {n_specific}")
            report = run_editor(model, bench, ec, seeds, layer_map=layer_map, max_new=max_new,
                                autopara_info=autopara_info, verbose=verbose)
            points.append((n_common, n_specific, report))
    return points


def spearman_trend(points, vary, dim, metric="aem"):
    """rank correlation of a metric with n_common or n_specific over sweep points

    Points where the other count is not constant are not filtered, pass a one-axis sweep.
    NaN if either series is constant.
    """
    if vary not in ("n_common", "n_specific"):
        raise ValueError(f"vary must be n_common or n_specific, got {vary}")
    xs = [p[0] if vary == "n_common" else p[1] for p in points]
    ys = [p[2].value(dim, metric) for p in points]
    if len(xs) < 2 or len(set(xs)) < 2 or len(set(ys)) < 2:
        return float("nan")
    rho, _ = spearmanr(xs, ys)
    return float(rho)


# ----------------------------------------------------------------------------------
# acceptance gates


def _find(reports, label):
    for r in reports:
        if r.editor == label:
            return r
    return None


def check_gates(reports):
    """directional acceptance checks for the editors present in ``reports``

    Returns
    -------
    list(str) describing each failed gate as expected vs observed, empty if all pass
    """
    failures = []

    def _gate(ok, expected, observed):
        if not ok:
            failures.append(f"expected {expected}, observed {observed}")

    pre = _find(reports, PRE_EDIT)
    if pre is not None:
        v = pre.value("effectiveness", "aem")
        _gate(v <= 0.05, "pre_edit effectiveness AEM <= 0.05", f"{v:.4f}")
        v = pre.value("specificity", "aem")
        _gate(v == 1.0, "pre_edit specificity AEM = 1.0", f"{v:.4f}")

    ada = _find(reports, EditMethod.ADALORA.label)
    if ada is not None:
        v = ada.value("effectiveness", "aem")
        _gate(v >= 0.90, "adalora effectiveness AEM >= 0.90", f"{v:.4f}")
        v = ada.value("generalization", "aem")
        _gate(v >= 0.70, "adalora generalization AEM >= 0.70", f"{v:.4f}")

    grace = _find(reports, EditMethod.GRACE.label)
    if grace is not None:
        v = grace.value("effectiveness", "aem")
        _gate(v >= 0.95, "grace effectiveness AEM >= 0.95", f"{v:.4f}")
        v = grace.value("specificity", "aem")
        _gate(v >= 0.99, "grace specificity AEM >= 0.99", f"{v:.4f}")
        if pre is not None and pre.value("portability", "aem") is not None:
            base = pre.value("portability", "aem")
            v = grace.value("portability", "aem")
            _gate(v <= base + 0.10, f"grace portability AEM <= {base + 0.10:.4f}", f"{v:.4f}")

    ada_l = _find(reports, EditMethod.ADALORA_L.label)
    if ada is not None and ada_l is not None:
        a, b = ada.value("specificity", "aem"), ada_l.value("specificity", "aem")
        _gate(b > a, f"adalora_l specificity AEM > {a:.4f}", f"{b:.4f}")
        a, b = ada.value("effectiveness", "aem"), ada_l.value("effectiveness", "aem")
        _gate(abs(a - b) <= 0.05, f"adalora_l effectiveness AEM within 0.05 of {a:.4f}", f"{b:.4f}")
    return failures


def check_sweep_gates(points, fixed_common=SWEEP_FIXED_COMMON, fixed_specific=SWEEP_FIXED_SPECIFIC):
    """trend checks over the one-axis sweeps through (fixed_common, fixed_specific)"""
    failures = []
    by_specific = [p for p in points if p[0] == fixed_common]
    by_common = [p for p in points if p[1] == fixed_specific]
    if len({p[1] for p in by_specific}) > 1:
        rho = spearman_trend(by_specific, "n_specific", "effectiveness")
        if not rho > 0:
            failures.append(f"expected Spearman(n_specific, effectiveness AEM) > 0, observed {rho:.4f}")
        rho = spearman_trend(by_specific, "n_specific", "specificity")
        if not rho < 0:
            failures.append(f"expected Spearman(n_specific, specificity AEM) < 0, observed {rho:.4f}")
    if len({p[0] for p in by_common}) > 1:
        rho = spearman_trend(by_common, "n_common", "specificity")
        if not rho > 0:
            failures.append(f"expected Spearman(n_common, specificity AEM) > 0, observed {rho:.4f}")
    return failures


def editor_configs(names, overrides=None):
    """EditorConfigs for a list of method names, ``pre_edit`` kept as is"""
    overrides = overrides or {}
    out = []
    for name in names:
        if str(name).strip().lower() == PRE_EDIT:
            out.append(PRE_EDIT)
            continue
        method = EditMethod.parse(name)
        out.append(EditorConfig.for_method(method, **overrides.get(method.label, {})))
    return out


__all__ = ["DIMENSIONS", "PRE_EDIT", "METRIC_NAMES", "evaluate_instance", "run_instance", "run_experiment",
           "run_editor", "sweep_layers", "spearman_trend", "check_gates", "check_sweep_gates", "EditReport",
           "RunConfig", "editor_configs"]
