"""Synthetic libraries and the deprecated to updated API mapping table"""
from dataclasses import dataclass

from editlab.errors import ConfigError
from editlab.utils.misc import contains_subsequence


@dataclass(frozen=True)
class Library:
    """a synthetic library: import alias, one submodule, helper calls and typical identifiers"""
    alias: str
    submodule: str
    helpers: tuple
    nouns: tuple


@dataclass(frozen=True)
class ApiMapping:
    """one deprecated to updated API pair

    ``cues``, ``fname`` and ``result`` are the identifiers that surround this API in
    generated code, so a context predicts which call comes next.
    """
    library: str
    deprecated: tuple
    updated: tuple
    cues: tuple = ()
    fname: str = ""
    result: str = ""

    @property
    def api_id(self):
        return "".join(self.deprecated)

    def to_dict(self):
        return {"library": self.library, "deprecated": list(self.deprecated), "updated": list(self.updated),
                "cues": list(self.cues), "fname": self.fname, "result": self.result}

    @classmethod
    def from_dict(cls, d):
        return cls(d["library"], tuple(d["deprecated"]), tuple(d["updated"]), tuple(d.get("cues", ())),
                   d.get("fname", ""), d.get("result", ""))


DEFAULT_LIBRARIES = (
    Library("tsr", "ops", ("zeros", "ones", "arange"), ("tensor", "grad", "shape", "dim", "batch", "weight")),
    Library("sig", "fx", ("window", "fft", "resample"), ("signal", "freq", "rate", "sample", "wave", "band")),
    Library("tab", "io", ("load", "head", "describe"), ("column", "row", "index", "table", "cell", "record")),
    Library("net", "nn", ("layer", "relu", "dropout"), ("model", "units", "hidden", "inputs", "outputs", "epoch")),
)


def _m(alias, old, new, cues, fname, result, sub=None):
    updated = (alias, ".", sub, ".", new) if sub else (alias, ".", new)
    return ApiMapping(alias, (alias, ".", old), updated, tuple(cues), fname, result)


# ordered round robin over libraries so any prefix covers every library evenly
DEFAULT_MAPPINGS = (
    _m("tsr", "cat_rows", "concat", ("parts", "chunks"), "merge_parts", "merged", sub="ops"),
    _m("sig", "hann_win", "hann", ("segment", "taper"), "taper_segment", "tapered", sub="fx"),
    _m("tab", "append_rows", "concat_rows", ("extra", "rows_new"), "grow_table", "grown"),
    _m("net", "fit_gen", "fit", ("generator", "steps"), "train_steps", "history"),
    _m("tsr", "solve_sym", "solve", ("system", "rhs"), "solve_system", "solution", sub="ops"),
    _m("sig", "lfilter_init", "filter_state", ("coeffs", "taps"), "prime_filter", "zi"),
    _m("tab", "as_matrix", "to_numpy", ("values", "matrix"), "export_values", "array"),
    _m("net", "predict_cls", "predict", ("probs", "classes"), "classify", "labels", sub="nn"),
    _m("tsr", "max_idx", "argmax", ("scores", "logits"), "pick_best", "best"),
    _m("sig", "cwt_scan", "wavelet", ("scales", "widths"), "scan_scales", "coefs", sub="fx"),
    _m("tab", "ix_get", "loc", ("label", "key"), "lookup_label", "found", sub="io"),
    _m("net", "merge_layer", "add", ("branch", "skip"), "join_branch", "joined", sub="nn"),
    _m("tsr", "set_seed", "manual_seed", ("seed", "state"), "init_state", "rng"),
    _m("sig", "spline_fit", "make_spline", ("knots", "nodes"), "fit_curve", "curve"),
    _m("tab", "read_msgpack", "read_parquet", ("path", "blob"), "read_blob", "loaded", sub="io"),
    _m("net", "init_vars", "init_global", ("variables", "session"), "setup_session", "init"),
)


def default_mappings(n_mappings=16):
    if not 1 <= n_mappings <= len(DEFAULT_MAPPINGS):
        raise ConfigError(f"n_mappings must be in [1, {len(DEFAULT_MAPPINGS)}], got {n_mappings}")
    return list(DEFAULT_MAPPINGS[:n_mappings])


def libraries_for(mappings, libraries=DEFAULT_LIBRARIES):
    """libraries used by the mappings, in library table order"""
    used = {m.library for m in mappings}
    return [lib for lib in libraries if lib.alias in used]


def validate_mappings(mappings, vocab=None):
    """check the mapping table is usable

    Every sequence is non-empty, deprecated and updated differ, API ids are unique,
    and no API sequence occurs inside another.  With a vocabulary, every token must
    be in it.
    """
    seen = set()
    seqs = []
    for m in mappings:
        if len(m.deprecated) == 0 or len(m.updated) == 0:
            raise ConfigError(f"mapping {m.api_id}: empty API token sequence")
        if tuple(m.deprecated) == tuple(m.updated):
            raise ConfigError(f"mapping {m.api_id}: deprecated and updated sequences are identical")
        if m.api_id in seen:
            raise ConfigError(f"duplicate mapping {m.api_id}")
        seen.add(m.api_id)
        seqs.extend([tuple(m.deprecated), tuple(m.updated)])
        if vocab is not None:
            missing = [t for t in m.deprecated + m.updated + m.cues + (m.fname, m.result) if t and t not in vocab]
            if missing:
                raise ConfigError(f"mapping {m.api_id}: tokens {missing} not in vocabulary")

    for i, a in enumerate(seqs):
        for j, b in enumerate(seqs):
            if i != j and len(a) <= len(b) and contains_subsequence(b, a):
                raise ConfigError(f"API sequence {' '.join(a)} occurs inside {' '.join(b)}")
