# end-to-end runs of the default project, minutes each on a laptop CPU, need --runslow

import re

import pytest
from click.testing import CliRunner

from editlab.bench.build import load_benchmark
from editlab.cli.cli import cli
from editlab.model import load_checkpoint
from editlab.report import read_csv


def _invoke(workdir, *args):
    result = CliRunner().invoke(cli, ["--workdir", str(workdir)] + list(args))
    assert result.exit_code == 0, result.output
    return result.output


@pytest.fixture(scope="module")
def project(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("project")
    out = _invoke(workdir, "train")
    rate = float(re.search(r"emission rate ([0-9.]+)", out).group(1))
    _invoke(workdir, "bench")
    return workdir, rate


@pytest.mark.slow
def test_base_model_and_benchmark(project):
    workdir, rate = project
    assert rate >= 0.95

    model, _ = load_checkpoint(workdir / "model.ckpt")
    bench = load_benchmark(workdir / "bench" / "benchmark.jsonl", model)
    counts = bench.manifest["counts"]
    assert counts["effectiveness"] >= 160
    assert counts["generalization"] == counts["effectiveness"]
    assert counts["specificity"] == 5 * counts["effectiveness"]
    assert counts["portability"] <= counts["effectiveness"]
    assert len({i.api_id for i in bench.instances}) >= 0.8 * 16


@pytest.mark.slow
def test_editor_comparison_gates(project):
    workdir, _ = project
    _invoke(workdir, "run", "--editors", "pre_edit,adalora,grace,adalora_l", "--assert")

    report = read_csv(workdir / "reports" / "report.csv")
    assert set(report.editor) == {"pre_edit", "adalora", "grace", "adalora_l"}
    assert (workdir / "reports" / "gains.md").exists()

    costs = read_csv(workdir / "reports" / "costs.csv").set_index("editor")
    assert costs.loc["adalora_l", "touched"] < costs.loc["adalora", "touched"]


@pytest.mark.slow
def test_sweep_trends(project):
    workdir, _ = project
    _invoke(workdir, "sweep", "--assert")
    sweep = read_csv(workdir / "reports" / "sweep.csv")
    assert len(sweep) > 0


@pytest.mark.slow
def test_outputs_reproducible(project, tmp_path):
    workdir, _ = project
    _invoke(tmp_path, "train")
    _invoke(tmp_path, "bench")
    for rel in ("model.ckpt", "bench/benchmark.jsonl"):
        assert (workdir / rel).read_bytes() == (tmp_path / rel).read_bytes()

    _invoke(workdir, "layers")
    layer_map = (workdir / "layers" / "layer_map.json").read_bytes()
    _invoke(workdir, "layers", "--no-cache")
    assert (workdir / "layers" / "layer_map.json").read_bytes() == layer_map

    _invoke(workdir, "run", "--editors", "pre_edit,lora", "--runs", "1", "--out", str(tmp_path / "r1"))
    _invoke(workdir, "run", "--editors", "pre_edit,lora", "--runs", "1", "--out", str(tmp_path / "r2"))
    for name in ("report.csv", "report.md"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


@pytest.mark.slow
@pytest.mark.perf
def test_restricted_editor_is_faster(project):
    workdir, _ = project
    _invoke(workdir, "run", "--editors", "adalora,adalora_l", "--runs", "1", "--workers", "0")
    costs = read_csv(workdir / "reports" / "costs.csv").set_index("editor")
    assert costs.loc["adalora_l", "wall_ms"] <= costs.loc["adalora", "wall_ms"]
