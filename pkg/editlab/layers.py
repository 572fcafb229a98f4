"""Layer importance under the target-token loss and Common/Specific API layer selection

For one instance, the importance of layer i is the mean squared gradient of the
layer's editable entries (attention wq and wv) under a loss restricted to the
positions predicting the updated API tokens.  Averaged over an API's instances this
gives the API's profile.  Layers that rank high for all APIs together (after
normalizing each profile to unit sum) are the common layers and are never edited;
for each API the highest-scoring remaining layers are its specific layers.
"""
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from editlab.autoparallelize import autoparallelize, autoparallelize_docstring
from editlab.editors.base import target_sequence, edit_loss
from editlab.errors import ConfigError, ContractError
from editlab.model import layer_index
from editlab.tensor import scale, zero_grads
from editlab.utils.logging import print_log

LAYER_MAP_SCHEMA_VERSION = 1
EDITABLE_MATRICES = ("wq", "wv")


def is_attention_qv(name):
    """selector of the entries that AdaLoRA edits"""
    parts = name.split(".")
    return len(parts) == 4 and parts[0] == "layer" and parts[2] == "attn" and parts[3] in EDITABLE_MATRICES


def target_token_loss(model, instance):
    """cross entropy at the positions predicting the updated API tokens only"""
    return edit_loss(model, target_sequence(instance, model.vocab, api_only=True))


def layer_importance(model, instance, selector=is_attention_qv, loss_scale=1.0):
    """per-layer mean squared gradient of the selected entries

    Parameters
    ----------
    model: TransformerLM
    instance: EditInstance
    selector: callable(str) -> bool, default is_attention_qv
        which parameters count as editable
    loss_scale: float, default 1.0
        multiplies the loss before the backward pass

    Returns
    -------
    scores: np.ndarray(n_layers), zero for layers without selected parameters

    Parameters and gradients of the model are left as they were found: values
    unchanged and gradients cleared.
    """
    names = [n for n in model.params if selector(n) and layer_index(n) is not None]
    params = model.parameters(names)
    sq_sum = np.zeros(model.config.n_layers)
    count = np.zeros(model.config.n_layers)
    with model.trainable(names):
        zero_grads(params)
        loss = target_token_loss(model, instance)
        if loss_scale != 1.0:
            loss = scale(loss, loss_scale)
        loss.backward()
        for p in params:
            i = layer_index(p.name)
            if p.grad is not None:
                sq_sum[i] += np.sum(p.grad ** 2)
            count[i] += p.data.size
    scores = np.zeros(model.config.n_layers)
    np.divide(sq_sum, count, out=scores, where=count > 0)
    return scores


def _importance_autopara_wrappable(instances, model, loss_scale=1.0):
    """layer_importance of each instance

    Parameters
    ----------
    instances: list(EditInstance)
        instances to score
    model: TransformerLM
        pre-edit model
    loss_scale: float, default 1.0
        loss multiplier

    Returns
    -------
    scores: list(np.ndarray)
    """
    return [layer_importance(model, inst, loss_scale=loss_scale) for inst in instances]


def layer_importances(*args, **kwargs):
    default_autopara_info = {"num_inputs_per_python_subprocess": 4}
    return autoparallelize(_importance_autopara_wrappable, *args, default_autopara_info=default_autopara_info,
                           **kwargs)
autoparallelize_docstring(layer_importances, _importance_autopara_wrappable, "EditInstance")


@dataclass
class LayerImportanceProfile:
    api_id: str
    scores: np.ndarray
    n_instances: int

    def normalized(self):
        total = self.scores.sum()
        if total <= 0:
            return np.zeros_like(self.scores)
        return self.scores / total

    def to_dict(self):
        return {"api_id": self.api_id, "scores": [float(s) for s in self.scores], "n_instances": self.n_instances}

    @classmethod
    def from_dict(cls, d):
        return cls(d["api_id"], np.array(d["scores"], dtype=np.float64), int(d["n_instances"]))


def _mean_profile(api_id, scored):
    # fixed summation order: sorted instance ids
    scored = sorted(scored, key=lambda t: t[0])
    total = np.zeros_like(scored[0][1])
    for _, s in scored:
        total = total + s
    return LayerImportanceProfile(api_id, total / len(scored), len(scored))


def api_profile(model, instances, loss_scale=1.0):
    """mean layer importance over the instances of one API"""
    instances = list(instances)
    if not instances:
        raise ContractError("api_profile needs at least one instance")
    apis = {inst.api_id for inst in instances}
    if len(apis) != 1:
        raise ContractError(f"api_profile instances span several APIs {sorted(apis)}")
    return _mean_profile(instances[0].api_id,
                         [(inst.id, layer_importance(model, inst, loss_scale=loss_scale)) for inst in instances])


def build_profiles(model, instances, loss_scale=1.0, autopara_info=None):
    """profiles of every API present in ``instances``, keyed by sorted api id"""
    instances = list(instances)
    scores = layer_importances(instances, model, loss_scale=loss_scale, autopara_info=autopara_info)
    grouped = OrderedDict()
    for inst, s in zip(instances, scores):
        grouped.setdefault(inst.api_id, []).append((inst.id, s))
    return OrderedDict((api, _mean_profile(api, grouped[api])) for api in sorted(grouped))


def _top_k(scores, k, exclude=()):
    """indices of the k highest scores, ties to the lower index"""
    order = sorted((i for i in range(len(scores)) if i not in exclude), key=lambda i: (-scores[i], i))
    return order[:k]


def select_common_layers(profiles, n_common):
    """layers ranking highest in the mean of the unit-sum normalized profiles

    Returns
    -------
    sorted list of n_common layer indices
    """
    profiles = list(profiles.values()) if isinstance(profiles, dict) else list(profiles)
    if not profiles:
        raise ContractError("select_common_layers needs at least one profile")
    n_layers = len(profiles[0].scores)
    if n_common < 0 or n_common >= n_layers:
        raise ConfigError(f"n_common {n_common} must be in [0, {n_layers})")
    profiles = sorted(profiles, key=lambda p: p.api_id)
    total = np.zeros(n_layers)
    for p in profiles:
        total = total + p.normalized()
    return sorted(_top_k(total / len(profiles), n_common))


def select_specific_layers(profile, common, n_specific):
    """the n_specific highest-scoring layers outside ``common``, in descending score order"""
    n_layers = len(profile.scores)
    common = set(common)
    if n_specific < 0 or n_specific > n_layers - len(common):
        raise ConfigError(f"n_specific {n_specific} infeasible with {len(common)} common layers "
                          f"out of {n_layers}")
    return _top_k(profile.scores, n_specific, exclude=common)


@dataclass
class ApiLayerMap:
    """common layers shared by all APIs and the specific layers of each API"""
    common: list
    specific: dict
    n_common: int
    n_specific: int
    profiles: dict = field(default_factory=dict)

    def __post_init__(self):
        common = set(self.common)
        for api, layers in self.specific.items():
            if common & set(layers):
                raise ContractError(f"specific layers of {api} overlap common layers {sorted(common & set(layers))}")
            if len(layers) != self.n_specific:
                raise ContractError(f"{api} has {len(layers)} specific layers, expected {self.n_specific}")
        if len(common) != self.n_common:
            raise ContractError(f"{len(common)} common layers, expected {self.n_common}")

    @classmethod
    def from_profiles(cls, profiles, n_common, n_specific):
        common = select_common_layers(profiles, n_common)
        specific = OrderedDict((api, select_specific_layers(p, common, n_specific))
                               for api, p in sorted(profiles.items()))
        return cls(common, specific, n_common, n_specific, OrderedDict(sorted(profiles.items())))

    def specific_layers(self, api_id):
        return list(self.specific.get(api_id, []))

    def to_dict(self):
        return {"n_common": self.n_common, "n_specific": self.n_specific, "common": list(self.common),
                "specific": {api: list(v) for api, v in self.specific.items()},
                "profiles": {api: p.to_dict() for api, p in self.profiles.items()}}


def score_table(profiles):
    """one row per (api, layer) with raw and normalized scores"""
    rows = []
    for api, p in sorted(profiles.items()):
        norm = p.normalized()
        for i, s in enumerate(p.scores):
            rows.append({"api": api, "layer": i, "score": float(s), "normalized": float(norm[i]),
                         "n_instances": p.n_instances})
    return pd.DataFrame(rows, columns=["api", "layer", "score", "normalized", "n_instances"])


def save_layer_map(layer_map, path, model_hash, benchmark_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = {"schema_version": LAYER_MAP_SCHEMA_VERSION, "model_hash": model_hash, "benchmark_hash": benchmark_hash}
    d.update(layer_map.to_dict())
    with open(path, "w") as fout:
        json.dump(d, fout, sort_keys=True, indent=1)
        fout.write("\n")


def load_cached_profiles(path, model_hash, benchmark_hash):
    """profiles stored at ``path`` if it was written for this model and benchmark, else None"""
    path = Path(path)
    if not path.exists():
        return None
    with open(path) as fin:
        d = json.load(fin)
    if d.get("model_hash") != model_hash or d.get("benchmark_hash") != benchmark_hash:
        return None
    return OrderedDict((api, LayerImportanceProfile.from_dict(p)) for api, p in sorted(d["profiles"].items()))


def layer_map_for(model, bench, n_common, n_specific, cache_path=None, use_cache=True, autopara_info=None,
                  verbose=False):
    """ApiLayerMap of a benchmark, reusing cached profiles when model and benchmark hashes match

    Returns
    -------
    layer_map: ApiLayerMap
    cache_hit: bool
    """
    model_hash = model.checksum()
    bench_hash = bench.manifest.get("benchmark_hash")
    profiles = None
    if cache_path is not None and use_cache:
        profiles = load_cached_profiles(cache_path, model_hash, bench_hash)
    hit = profiles is not None
    if hit:
        print_log(f"layers: cache hit {cache_path}")
    else:
        profiles = build_profiles(model, bench.instances, autopara_info=autopara_info)
        if verbose:
            print_log(f"layers: scored {len(bench.instances)} instances over {len(profiles)} APIs")
    layer_map = ApiLayerMap.from_profiles(profiles, n_common, n_specific)
    if cache_path is not None:
        save_layer_map(layer_map, cache_path, model_hash, bench_hash)
    return layer_map, hit
