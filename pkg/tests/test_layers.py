import json

import numpy as np
import pytest
from pytest import approx

from editlab.bench.build import Benchmark
from editlab.errors import ConfigError, ContractError
from editlab.layers import (LayerImportanceProfile, ApiLayerMap, layer_importance, api_profile, build_profiles,
                            select_common_layers, select_specific_layers, score_table, layer_map_for,
                            load_cached_profiles, target_token_loss, is_attention_qv)

from .conftest import tiny_model


def _brute_force_importance(model, instance):
    """mean squared gradient of wq, wv per layer from one full backward pass"""
    loss = target_token_loss(model, instance)
    loss.backward()
    out = []
    for i in range(model.config.n_layers):
        grads = [model.params[f"layer.{i}.attn.{w}"].grad for w in ("wq", "wv")]
        out.append(sum(np.sum(g ** 2) for g in grads) / sum(g.size for g in grads))
    for p in model.parameters():
        p.grad = None
    return np.array(out)


def test_selector():
    assert is_attention_qv("layer.3.attn.wq")
    assert is_attention_qv("layer.0.attn.wv")
    assert not is_attention_qv("layer.0.attn.wk")
    assert not is_attention_qv("layer.0.ffn.w1")


def test_importance_matches_brute_force(vocab, instances):
    model = tiny_model(vocab, n_layers=2)
    checksum = model.checksum()
    scores = layer_importance(model, instances[0])
    assert scores.shape == (2,)
    assert scores == approx(_brute_force_importance(model, instances[0]), rel=1e-12, abs=0)
    assert np.all(scores > 0)
    assert model.checksum() == checksum
    assert all(p.grad is None for p in model.parameters())


def test_importance_other_selector(model, instances):
    scores = layer_importance(model, instances[0], selector=lambda n: n == "layer.1.ffn.w2")
    assert scores[0] == 0.0 and scores[2] == 0.0 and scores[1] > 0.0


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_loss_scale_keeps_ranking(model, instances, c):
    base = layer_importance(model, instances[0])
    scaled = layer_importance(model, instances[0], loss_scale=c)
    assert scaled == approx(c ** 2 * base, rel=1e-9)
    assert list(np.argsort(-scaled, kind="stable")) == list(np.argsort(-base, kind="stable"))


def test_api_profile(model, instances):
    same_api = [i for i in instances if i.api_id == instances[0].api_id]
    prof = api_profile(model, same_api)
    assert prof.n_instances == len(same_api)
    expected = np.mean([layer_importance(model, i) for i in same_api], axis=0)
    assert prof.scores == approx(expected, rel=1e-12)
    with pytest.raises(ContractError):
        api_profile(model, [])
    with pytest.raises(ContractError):
        api_profile(model, instances[:3])


def test_build_profiles_parallel_matches_serial(model, instances):
    # run in subprocesses by the default test environment
    profiles = build_profiles(model, instances)
    assert list(profiles) == sorted({i.api_id for i in instances})
    for api, prof in profiles.items():
        serial = api_profile(model, [i for i in instances if i.api_id == api])
        assert np.array_equal(prof.scores, serial.scores)


def _oracle_common(profiles, n_common):
    norm = np.mean([p.scores / p.scores.sum() for p in profiles], axis=0)
    ranked = sorted(range(len(norm)), key=lambda i: (-norm[i], i))
    return sorted(ranked[:n_common])


def test_selection_matches_oracle():
    rng = np.random.default_rng(17)
    for _ in range(50):
        n_layers = int(rng.integers(3, 12))
        profiles = [LayerImportanceProfile(f"api{j}", rng.random(n_layers) + 1e-3, 2) for j in range(4)]
        n_common = int(rng.integers(0, n_layers - 1))
        n_specific = int(rng.integers(1, n_layers - n_common + 1))

        common = select_common_layers(profiles, n_common)
        assert common == _oracle_common(profiles, n_common)
        for p in profiles:
            specific = select_specific_layers(p, common, n_specific)
            rest = sorted((i for i in range(n_layers) if i not in common), key=lambda i: (-p.scores[i], i))
            assert specific == rest[:n_specific]
            assert not set(specific) & set(common)


def test_selection_ties_to_lower_index():
    p = LayerImportanceProfile("api", np.array([1.0, 2.0, 2.0, 1.0]), 1)
    assert select_common_layers([p], 1) == [1]
    assert select_specific_layers(p, [1], 2) == [2, 0]


def test_selection_errors():
    p = LayerImportanceProfile("api", np.ones(4), 1)
    with pytest.raises(ConfigError):
        select_common_layers([p], 4)
    with pytest.raises(ConfigError):
        select_specific_layers(p, [0, 1], 3)
    with pytest.raises(ContractError):
        ApiLayerMap([0], {"api": [0, 1]}, 1, 2)
    with pytest.raises(ContractError):
        ApiLayerMap([0], {"api": [1]}, 1, 2)


def test_zero_profile_normalizes_to_zero():
    p = LayerImportanceProfile("api", np.zeros(3), 1)
    assert np.array_equal(p.normalized(), np.zeros(3))


def test_layer_map_from_profiles_and_table():
    profiles = {"b": LayerImportanceProfile("b", np.array([4.0, 1.0, 3.0, 2.0]), 2),
                "a": LayerImportanceProfile("a", np.array([4.0, 2.0, 1.0, 3.0]), 2)}
    lm = ApiLayerMap.from_profiles(profiles, 1, 2)
    assert lm.common == [0]
    assert lm.specific_layers("a") == [3, 1]
    assert lm.specific_layers("b") == [2, 3]
    assert lm.specific_layers("missing") == []

    table = score_table(profiles)
    assert list(table.columns) == ["api", "layer", "score", "normalized", "n_instances"]
    assert len(table) == 8
    assert table.groupby("api")["normalized"].sum().values == approx([1.0, 1.0])


def test_layer_map_cache(tmp_path, model, instances):
    bench = Benchmark(list(instances), {}, {"benchmark_hash": "b0"})
    path = tmp_path / "layers" / "layer_map.json"

    lm, hit = layer_map_for(model, bench, 1, 1, cache_path=path)
    assert not hit
    stored = json.loads(path.read_text())
    assert stored["model_hash"] == model.checksum()
    assert (stored["n_common"], stored["n_specific"]) == (1, 1)

    lm2, hit = layer_map_for(model, bench, 0, 2, cache_path=path)
    assert hit
    assert lm2.n_specific == 2
    assert json.loads(path.read_text())["n_specific"] == 2
    for api in lm.profiles:
        assert np.array_equal(lm.profiles[api].scores, lm2.profiles[api].scores)

    assert load_cached_profiles(path, model.checksum(), "other") is None
    _, hit = layer_map_for(model, bench, 1, 1, cache_path=path, use_cache=False)
    assert not hit


def test_target_token_loss_matches_direct_log_softmax(vocab, instances):
    model = tiny_model(vocab, n_layers=2)
    inst = instances[0]
    prompt = vocab.encode(inst.input)
    line = vocab.encode(inst.target_line)
    api = vocab.encode(inst.target)
    start = next(j for j in range(len(line)) if line[j:j + len(api)] == api)

    seq = prompt + line + [vocab.eol_id]
    logits = model.forward(seq[:-1]).data
    logp = logits - logits.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    # row t predicts seq[t + 1]
    rows = [len(prompt) + start + k - 1 for k in range(len(api))]
    expected = -np.mean([logp[t, seq[t + 1]] for t in rows])

    loss = target_token_loss(model, inst)
    assert loss.data.shape == ()
    assert float(loss.data) == approx(expected, rel=1e-12)
    assert [seq[t + 1] for t in rows] == api
