import json

import numpy as np
import pytest

from editlab.errors import BenchmarkQualityError, ProvenanceError
from editlab.bench.build import (Benchmark, BenchSettings, EvalSuite, collect_candidates, extract_api, filter_instances,
                                 build_generalization, build_portability, build_specificity, specificity_pool,
                                 save_benchmark, load_benchmark, manifest_path, report_excluded)
from editlab.bench.embed import embed
from editlab.utils.misc import contains_subsequence

from .conftest import ScriptedModel


def test_collect_candidates(mappings, libraries):
    cands = collect_candidates(mappings[:2], libraries, 3, seed=0)
    assert len(cands) == 6
    assert cands[0].id == f"{mappings[0].api_id}/000"
    for c in cands:
        assert contains_subsequence(c.target_line, c.target)
        assert not contains_subsequence(c.input, c.deprecated)
    assert [c.id for c in collect_candidates(mappings[:2], libraries, 3, seed=0)] == [c.id for c in cands]


def test_extract_api():
    assert extract_api(["y", "=", "tsr", ".", "ops", ".", "concat", "(", "x", ")"], {"tsr"}) == \
        ["tsr", ".", "ops", ".", "concat"]
    assert extract_api(["y", "=", "x"], {"tsr"}) == []


def test_filter_instances(instances):
    keep = instances[::2]
    model = ScriptedModel({tuple(inst.input): ["r", "="] + inst.deprecated + ["(", "x", ")"] for inst in keep})
    # runs through the subprocess pool
    survivors = filter_instances(model, instances, n_checks=3)
    assert [s.id for s in survivors] == [k.id for k in keep]

    with pytest.raises(BenchmarkQualityError) as exc:
        filter_instances(ScriptedModel(), instances)
    assert sum(d["candidates"] for d in exc.value.diagnostics.values()) == len(instances)


def test_build_generalization(instances, vocab):
    inst = instances[0]
    model = ScriptedModel(default=inst.deprecated)
    reph = build_generalization(model, inst, set(vocab.tokens_of_kind("ident")), seed=0)
    assert reph is not None
    assert reph.tokens != list(inst.input)
    assert reph.invert() == list(inst.input)

    # model never emits the API on a rewritten prompt
    model = ScriptedModel({tuple(inst.input): inst.deprecated})
    assert build_generalization(model, inst, set(vocab.tokens_of_kind("ident")), seed=0, max_attempts=3) is None


def test_build_portability(instances):
    port = build_portability(instances, seed=0)
    for inst in instances:
        entries = port[inst.id]
        assert len(entries) == 1
        other = [o for o in instances if o.id == entries[0].id][0]
        assert other.api_id == inst.api_id and other.id != inst.id

    assert build_portability(instances[:1], seed=0) == {instances[0].id: []}


def test_build_specificity(mappings, libraries, instances):
    inst = instances[0]
    pool = specificity_pool(mappings[:4], libraries, 6, seed=0, exclude_inputs=[i.input for i in instances])
    vectors = np.array([embed(f.prompt, 64) for f in pool])
    model = ScriptedModel(default=["y", "=", "sig", ".", "fft", "(", "x", ")"])
    entries = build_specificity(model, inst, pool, vectors, k=5, aliases={"tsr", "sig", "tab", "net"}, embed_dim=64)
    assert len(entries) == 5
    for e in entries:
        f = pool[int(e.id.split("/")[1])]
        assert not contains_subsequence(f.tokens, inst.deprecated)
        assert e.api == ["sig", ".", "fft"]
        assert tuple(e.input) not in {tuple(i.input) for i in instances}

    # a completion with the edited API disqualifies every pool function
    model = ScriptedModel(default=inst.deprecated)
    assert build_specificity(model, inst, pool, vectors, k=5, embed_dim=64) == []


def _small_benchmark(instances, suites):
    return Benchmark(list(instances), dict(suites), {"model_hash": "fake", "counts": {}})


def test_save_load_benchmark(tmp_path, instances, suites):
    bench = _small_benchmark(instances, suites)
    path = tmp_path / "bench" / "benchmark.jsonl"
    h = save_benchmark(bench, path)
    assert json.loads(manifest_path(path).read_text())["benchmark_hash"] == h

    loaded = load_benchmark(path)
    assert [i.id for i in loaded.instances] == [i.id for i in instances]
    assert loaded.suite(loaded.instances[0]) == suites[instances[0].id]
    assert isinstance(loaded.suites[instances[0].id], EvalSuite)

    # same content, same bytes
    save_benchmark(loaded, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_load_benchmark_provenance(tmp_path, instances, suites):
    path = tmp_path / "benchmark.jsonl"
    save_benchmark(_small_benchmark(instances, suites), path)

    with pytest.raises(ProvenanceError):
        load_benchmark(path, model=ScriptedModel(checksum="other"))

    # right model hash, but it no longer emits the deprecated API
    with pytest.raises(ProvenanceError):
        load_benchmark(path, model=ScriptedModel(checksum="fake"))

    model = ScriptedModel(default=[], checksum="fake")
    model.default = sum((list(i.deprecated) for i in instances), [])
    assert len(load_benchmark(path, model=model).instances) == len(instances)

    with open(path, "a") as fout:
        fout.write("\n")
    with pytest.raises(ProvenanceError):
        load_benchmark(path)


def test_bench_settings_defaults():
    s = BenchSettings()
    assert (s.n_checks, s.k_specificity, s.max_attempts) == (3, 5, 10)


def test_report_excluded(capsys, recwarn):
    report_excluded([], "no valid rephrasing after 3 attempts")
    assert "bench: 0 instances excluded, no valid rephrasing after 3 attempts" in capsys.readouterr().out
    assert len(recwarn) == 0

    ids = [f"api/{i:03d}" for i in range(7)]
    with pytest.warns(UserWarning, match="7 instances excluded, fewer than 5"):
        report_excluded(ids[::-1], "fewer than 5 eligible specificity inputs")
    out = capsys.readouterr().out
    assert out.startswith("LOG ")
    assert "bench: 7 instances excluded, fewer than 5 eligible specificity inputs" in out
