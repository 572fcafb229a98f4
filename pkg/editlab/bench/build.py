"""Benchmark construction: candidates, filtering and evaluation suites

Stages, each a pure function of its inputs:

1. :func:`collect_candidates` renders held-out-template functions for every mapping
2. :func:`filter_instances` keeps candidates whose greedy completion contains the
   deprecated API in every one of ``n_checks`` decodings
3. :func:`build_generalization` rephrases the prompt until the model still emits the
   deprecated API, instances without a valid rephrasing are dropped
4. :func:`build_portability` pairs each instance with another one of the same API
5. :func:`build_specificity` picks the nearest pool functions that do not involve the
   target API, with the model's own completions as ground truth

Saved as JSON lines (one instance and its suite per line) plus a manifest with
counts and the hashes the benchmark depends on.
"""
import json
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from editlab.autoparallelize import autoparallelize, autoparallelize_docstring
from editlab.bench.corpus import heldout_functions
from editlab.bench.embed import embed, nearest, DEFAULT_DIM
from editlab.bench.rephrase import rephrase, plan_attempt, attempt_rng
from editlab.errors import BenchmarkQualityError, ProvenanceError, ContractError
from editlab.utils.hashing import sha256_file, stable_int
from editlab.utils.logging import print_log
from editlab.utils.misc import contains_subsequence
from editlab.utils.version import get_editlab_version

BENCHMARK_SCHEMA_VERSION = 1

CANDIDATE_STREAM = 11
POOL_STREAM = 31
EMISSION_STREAM = 41


@dataclass
class EditInstance:
    """one edit request

    ``input`` ends just before the invocation line, ``target_line`` is the invocation
    line with the updated API (no end-of-line), ``target`` the updated API tokens.
    """
    id: str
    api_id: str
    library: str
    input: list
    target: list
    deprecated: list
    target_line: list
    template: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PortabilityEntry:
    id: str
    input: list
    target_line: list


@dataclass
class SpecificityEntry:
    """unrelated input, the pre-edit model's completion of it and the API call in that completion"""
    id: str
    input: list
    completion: list
    api: list


@dataclass
class EvalSuite:
    instance_id: str
    generalization: list
    generalization_line: list
    portability: list = field(default_factory=list)
    specificity: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(d["instance_id"], d["generalization"], d["generalization_line"],
                   [PortabilityEntry(**p) for p in d["portability"]],
                   [SpecificityEntry(**s) for s in d["specificity"]])


@dataclass
class BenchSettings:
    """knobs of benchmark construction"""
    seed: int = 0
    n_per_api: int = 20
    n_checks: int = 3
    max_attempts: int = 10
    pool_per_api: int = 40
    k_specificity: int = 5
    embed_dim: int = DEFAULT_DIM
    embed_seed: int = 0
    max_new_tokens: int = 24
    heldout_fraction: float = 0.2


@dataclass
class Benchmark:
    instances: list
    suites: dict
    manifest: dict

    def suite(self, instance):
        return self.suites[instance.id]


def instance_from_function(func, instance_id):
    m = func.mapping
    return EditInstance(id=instance_id, api_id=m.api_id, library=m.library, input=list(func.prompt),
                        target=list(m.updated), deprecated=list(m.deprecated),
                        target_line=func.updated_line(), template=func.template_id)


def extract_api(tokens, aliases):
    """API call tokens (``alias . name [. name]``) at the first alias in tokens, [] if none"""
    tokens = list(tokens)
    for i, t in enumerate(tokens):
        if t in aliases:
            j = i + 1
            while j + 1 < len(tokens) and tokens[j] == "." and tokens[j + 1] not in ("(", ".", ")"):
                j += 2
            if j > i + 1:
                return tokens[i:j]
    return []


def collect_candidates(mappings, libraries, n_per_api, seed, heldout_fraction=0.2):
    """``n_per_api`` candidate instances per mapping from held-out templates

    Returns
    -------
    list(EditInstance) ordered by mapping then index, ids ``<api_id>/<k>``
    """
    funcs = heldout_functions(mappings, libraries, n_per_api, seed, CANDIDATE_STREAM, heldout_fraction)
    counters = {}
    out = []
    for f in funcs:
        k = counters.get(f.mapping.api_id, 0)
        counters[f.mapping.api_id] = k + 1
        out.append(instance_from_function(f, f"{f.mapping.api_id}/{k:03d}"))
    return out


# ----------------------------------------------------------------------------------
# filtering


def _filter_autopara_wrappable(candidates, model, n_checks=3, max_new=24):
    """check that the model emits the deprecated API for each candidate

    Parameters
    ----------
    candidates: list(EditInstance)
        instances to check
    model: TransformerLM
        pre-edit model
    n_checks: int, default 3
        number of greedy decodings that must all contain the deprecated API
    max_new: int, default 24
        decoding length limit

    Returns
    -------
    keep: list(bool)
    """
    keep = []
    for inst in candidates:
        ok = True
        for _ in range(n_checks):
            if not contains_subsequence(model.complete_tokens(inst.input, max_new), inst.deprecated):
                ok = False
                break
        keep.append(ok)
    return keep


def filter_instances_flags(*args, **kwargs):
    default_autopara_info = {"num_inputs_per_python_subprocess": 16}
    return autoparallelize(_filter_autopara_wrappable, *args, default_autopara_info=default_autopara_info, **kwargs)
autoparallelize_docstring(filter_instances_flags, _filter_autopara_wrappable, "EditInstance")


def filter_instances(model, candidates, n_checks=3, max_new=24, autopara_info=None):
    """candidates whose completion contains the deprecated API in every check

    Raises
    ------
    BenchmarkQualityError if nothing survives, with per-API candidate counts
    """
    candidates = list(candidates)
    flags = filter_instances_flags(candidates, model, n_checks=n_checks, max_new=max_new,
                                   autopara_info=autopara_info)
    survivors = [c for c, ok in zip(candidates, flags) if ok]
    if len(survivors) == 0:
        diagnostics = OrderedDict()
        for c in candidates:
            d = diagnostics.setdefault(c.api_id, {"candidates": 0, "survivors": 0})
            d["candidates"] += 1
        raise BenchmarkQualityError(f"no candidate out of {len(candidates)} emits its deprecated API",
                                    diagnostics)
    return survivors


def emission_rate(model, mappings, libraries, n_per_api=10, seed=0, max_new=24, heldout_fraction=0.2):
    """fraction of held-out-template prompts whose completion contains their deprecated API"""
    funcs = heldout_functions(mappings, libraries, n_per_api, seed, EMISSION_STREAM, heldout_fraction)
    if not funcs:
        return 0.0
    hits = sum(contains_subsequence(model.complete_tokens(f.prompt, max_new), f.mapping.deprecated)
               for f in funcs)
    return hits / len(funcs)


# ----------------------------------------------------------------------------------
# generalization


def build_generalization(model, instance, identifiers, seed=0, max_attempts=10, max_new=24):
    """rephrasing of the instance input on which the model still emits the deprecated API

    Attempt k applies ``1 + k // 2`` randomly chosen rules.

    Returns
    -------
    Rephrasing, or None if no attempt succeeded
    """
    key = stable_int(instance.id)
    for attempt in range(max_attempts):
        rng = attempt_rng(seed, key, attempt)
        rules = plan_attempt(attempt, rng)
        n_renamed = 1 + int(rng.integers(3))
        reph = rephrase(instance.input, rules, rng, identifiers, n_renamed=n_renamed)
        if reph.tokens == list(instance.input):
            continue
        if contains_subsequence(model.complete_tokens(reph.tokens, max_new), instance.deprecated):
            return reph
    return None


def _generalization_autopara_wrappable(instances, model, identifiers, seed=0, max_attempts=10, max_new=24):
    """build_generalization for each instance

    Parameters
    ----------
    instances: list(EditInstance)
        instances to rephrase
    model: TransformerLM
        pre-edit model
    identifiers: set(str)
        renameable tokens
    seed: int, default 0
        seed of the attempt generators
    max_attempts: int, default 10
        retries per instance
    max_new: int, default 24
        decoding length limit

    Returns
    -------
    rephrasings: list(Rephrasing or None)
    """
    return [build_generalization(model, inst, identifiers, seed, max_attempts, max_new) for inst in instances]


def build_generalizations(*args, **kwargs):
    default_autopara_info = {"num_inputs_per_python_subprocess": 8}
    return autoparallelize(_generalization_autopara_wrappable, *args, default_autopara_info=default_autopara_info,
                           **kwargs)
autoparallelize_docstring(build_generalizations, _generalization_autopara_wrappable, "EditInstance")


# ----------------------------------------------------------------------------------
# portability


def build_portability(instances, seed=0):
    """for each instance, one other instance of the same API, preferring another template

    Returns
    -------
    dict instance id -> list(PortabilityEntry), empty list when the API has one instance
    """
    by_api = OrderedDict()
    for inst in sorted(instances, key=lambda i: i.id):
        by_api.setdefault(inst.api_id, []).append(inst)

    rng = np.random.default_rng([seed, 21])
    out = {}
    for inst in sorted(instances, key=lambda i: i.id):
        others = [o for o in by_api[inst.api_id] if o.id != inst.id]
        preferred = [o for o in others if o.template != inst.template]
        choices = preferred if preferred else others
        if not choices:
            out[inst.id] = []
            continue
        p = choices[int(rng.integers(len(choices)))]
        out[inst.id] = [PortabilityEntry(p.id, list(p.input), list(p.target_line))]
    return out


# ----------------------------------------------------------------------------------
# specificity


def specificity_pool(mappings, libraries, pool_per_api, seed, exclude_inputs=(), heldout_fraction=0.2):
    """held-out functions of every mapping, minus any whose prompt is an excluded input"""
    excluded = {tuple(x) for x in exclude_inputs}
    funcs = heldout_functions(mappings, libraries, pool_per_api, seed, POOL_STREAM, heldout_fraction)
    return [f for f in funcs if tuple(f.prompt) not in excluded]


def build_specificity(model, instance, pool, pool_vectors, k=5, aliases=(), embed_dim=DEFAULT_DIM,
                      embed_seed=0, max_new=24, completions=None):
    """``k`` nearest pool functions unrelated to the instance's API

    A pool function is skipped if its tokens, or the model's completion of its prompt,
    contain the instance's deprecated or updated API, or if the completion is empty.

    Parameters
    ----------
    model: TransformerLM
        pre-edit model
    instance: EditInstance
    pool: list(SyntheticFunction)
    pool_vectors: np.ndarray [len(pool), embed_dim]
        embeddings of pool prompts
    k: int, default 5
    aliases: iterable(str)
        library aliases, to locate the API call in each completion
    completions: dict, optional
        cache of pool index -> completion, filled as a side effect

    Returns
    -------
    list(SpecificityEntry) of length <= k
    """
    if completions is None:
        completions = {}
    order, _ = nearest(embed(instance.input, embed_dim, embed_seed), pool_vectors)
    entries = []
    for j in order:
        j = int(j)
        f = pool[j]
        if (contains_subsequence(f.tokens, instance.deprecated) or contains_subsequence(f.tokens, instance.target)):
            continue
        if j not in completions:
            completions[j] = model.complete_tokens(f.prompt, max_new)
        y_u = completions[j]
        if (len(y_u) == 0 or contains_subsequence(y_u, instance.deprecated)
                or contains_subsequence(y_u, instance.target)):
            continue
        api = extract_api(y_u, aliases) or list(y_u)
        entries.append(SpecificityEntry(f"pool/{j:05d}", list(f.prompt), list(y_u), api))
        if len(entries) == k:
            break
    return entries


def _specificity_autopara_wrappable(instances, model, pool, pool_vectors, k=5, aliases=(), embed_dim=DEFAULT_DIM,
                                    embed_seed=0, max_new=24):
    """build_specificity for each instance, sharing a completion cache

    Parameters
    ----------
    instances: list(EditInstance)
        instances to find specificity inputs for
    model: TransformerLM
        pre-edit model
    pool: list(SyntheticFunction)
        candidate unrelated functions
    pool_vectors: np.ndarray
        embeddings of pool prompts
    k: int, default 5
        inputs per instance
    aliases: iterable(str)
        library aliases
    embed_dim: int, default 512
        embedding dimension
    embed_seed: int, default 0
        embedding hash key
    max_new: int, default 24
        decoding length limit

    Returns
    -------
    list(list(SpecificityEntry))
    """
    cache = {}
    return [build_specificity(model, inst, pool, pool_vectors, k, aliases, embed_dim, embed_seed, max_new, cache)
            for inst in instances]


def build_specificities(*args, **kwargs):
    default_autopara_info = {"num_inputs_per_python_subprocess": 8}
    return autoparallelize(_specificity_autopara_wrappable, *args, default_autopara_info=default_autopara_info,
                           **kwargs)
autoparallelize_docstring(build_specificities, _specificity_autopara_wrappable, "EditInstance")


# ----------------------------------------------------------------------------------
# whole pipeline


def build_benchmark(model, mappings, libraries, settings=None, provenance=None, autopara_info=None, verbose=False):
    """run every construction stage

    Parameters
    ----------
    model: TransformerLM
        pre-edit model with vocabulary
    mappings: list(ApiMapping)
    libraries: list(Library)
    settings: BenchSettings, default BenchSettings()
    provenance: dict, optional
        extra hashes (e.g. config) recorded in the manifest
    autopara_info: AutoparaInfo / dict, optional
    verbose: bool

    Returns
    -------
    Benchmark
    """
    s = settings or BenchSettings()
    vocab = model.vocab
    if vocab is None:
        raise ContractError("build_benchmark needs a model with a vocabulary")
    identifiers = set(vocab.tokens_of_kind("ident"))
    aliases = set(vocab.tokens_of_kind("alias"))

    candidates = collect_candidates(mappings, libraries, s.n_per_api, s.seed, s.heldout_fraction)
    print_log(f"bench: {len(candidates)} candidates for {len(mappings)} APIs")
    filtered = filter_instances(model, candidates, s.n_checks, s.max_new_tokens, autopara_info=autopara_info)
    print_log(f"bench: {len(filtered)} candidates emit their deprecated API")

    rephrasings = build_generalizations(filtered, model, identifiers, seed=s.seed, max_attempts=s.max_attempts,
                                        max_new=s.max_new_tokens, autopara_info=autopara_info)
    no_rephrase = [inst.id for inst, r in zip(filtered, rephrasings) if r is None]
    kept = [(inst, r) for inst, r in zip(filtered, rephrasings) if r is not None]
    report_excluded(no_rephrase, f"no valid rephrasing after {s.max_attempts} attempts")

    pool = specificity_pool(mappings, libraries, s.pool_per_api, s.seed,
                            exclude_inputs=[c.input for c in candidates], heldout_fraction=s.heldout_fraction)
    pool_vectors = np.array([embed(f.prompt, s.embed_dim, s.embed_seed) for f in pool]).reshape(len(pool), s.embed_dim)
    specificity = build_specificities([inst for inst, _ in kept], model, pool, pool_vectors, k=s.k_specificity,
                                      aliases=aliases, embed_dim=s.embed_dim, embed_seed=s.embed_seed,
                                      max_new=s.max_new_tokens, autopara_info=autopara_info)
    short_pool = [inst.id for (inst, _), spec in zip(kept, specificity) if len(spec) < s.k_specificity]
    report_excluded(short_pool, f"fewer than {s.k_specificity} eligible specificity inputs")

    final = [(inst, r, spec) for (inst, r), spec in zip(kept, specificity) if len(spec) == s.k_specificity]
    if not final:
        raise BenchmarkQualityError("no instance survived benchmark construction",
                                    _diagnostics(candidates, filtered, [i for i, _, _ in final]))
    final.sort(key=lambda t: t[0].id)
    instances = [inst for inst, _, _ in final]
    portability = build_portability(instances, s.seed)

    suites = OrderedDict()
    for inst, r, spec in final:
        suites[inst.id] = EvalSuite(inst.id, list(r.tokens), r.rename_tokens(inst.target_line),
                                    portability[inst.id], spec)

    manifest = {
        "schema_version": BENCHMARK_SCHEMA_VERSION,
        "editlab_version": get_editlab_version(),
        "model_hash": model.checksum(),
        "provenance": dict(provenance or {}),
        "settings": asdict(s),
        "mappings": [m.to_dict() for m in mappings],
        "counts": {"effectiveness": len(instances),
                   "generalization": len(instances),
                   "portability": sum(1 for i in instances if suites[i.id].portability),
                   "specificity": sum(len(suites[i.id].specificity) for i in instances)},
        "per_api": _diagnostics(candidates, filtered, instances),
        "per_library": _per_library(instances),
        "excluded": {"no_rephrase": sorted(no_rephrase), "short_specificity": sorted(short_pool)},
    }
    print_log(f"bench: {len(instances)} instances, counts {manifest['counts']}")
    return Benchmark(instances, suites, manifest)


def report_excluded(ids, reason):
    """log how many instances a construction stage dropped, and warn if any were"""
    print_log(f"bench: {len(ids)} instances excluded, {reason}")
    if ids:
        warnings.warn(f"{len(ids)} instances excluded, {reason}: {', '.join(sorted(ids)[:5])}"
                      + (", ..." if len(ids) > 5 else ""))


def _diagnostics(candidates, filtered, final):
    d = OrderedDict()
    for name, group in (("candidates", candidates), ("filtered", filtered), ("instances", final)):
        for inst in group:
            d.setdefault(inst.api_id, {"candidates": 0, "filtered": 0, "instances": 0})[name] += 1
    return d


def _per_library(instances):
    d = OrderedDict()
    for inst in instances:
        d[inst.library] = d.get(inst.library, 0) + 1
    return d


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def save_benchmark(bench, path):
    """write ``path`` (JSON lines) and its manifest, returns the JSON lines sha256"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fout:
        for inst in bench.instances:
            d = inst.to_dict()
            d["suite"] = bench.suites[inst.id].to_dict()
            fout.write(json.dumps(d, sort_keys=True) + "\n")
    bench_hash = sha256_file(path)
    bench.manifest["benchmark_hash"] = bench_hash
    with open(manifest_path(path), "w") as fout:
        json.dump(bench.manifest, fout, sort_keys=True, indent=1)
        fout.write("\n")
    return bench_hash


def load_benchmark(path, model=None, max_new=24):
    """read a benchmark written by :func:`save_benchmark`

    With a model, check that the benchmark was built from it and that it still emits the
    deprecated API on every input and rephrasing.

    Raises
    ------
    ProvenanceError on hash mismatch or failed revalidation
    """
    path = Path(path)
    with open(manifest_path(path)) as fin:
        manifest = json.load(fin)
    if manifest.get("benchmark_hash") != sha256_file(path):
        raise ProvenanceError(f"{path} does not match the hash recorded in its manifest")

    instances, suites = [], OrderedDict()
    with open(path) as fin:
        for line in fin:
            if not line.strip():
                continue
            d = json.loads(line)
            suite = EvalSuite.from_dict(d.pop("suite"))
            inst = EditInstance.from_dict(d)
            instances.append(inst)
            suites[inst.id] = suite
    bench = Benchmark(instances, suites, manifest)

    if model is not None:
        revalidate(model, bench, max_new)
    return bench


def revalidate(model, bench, max_new=24):
    if bench.manifest.get("model_hash") != model.checksum():
        raise ProvenanceError("benchmark was built from a different model checkpoint")
    for inst in bench.instances:
        for label, x in (("input", inst.input), ("generalization", bench.suites[inst.id].generalization)):
            if not contains_subsequence(model.complete_tokens(x, max_new), inst.deprecated):
                raise ProvenanceError(f"model no longer emits {' '.join(inst.deprecated)} for the {label} "
                                      f"of {inst.id}")
