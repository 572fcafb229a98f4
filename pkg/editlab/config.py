"""Project configuration: one YAML file for a whole experiment

.. code-block:: yaml

    schema_version: 1
    paths:
      workdir: runs/default
    model:
      n_layers: 12
    editors:
      adalora:
        epochs: 30
    run:
      editors: [adalora, adalora_l]

Missing keys take the values in :data:`DEFAULT_CONFIG`, unknown keys are an error.
Relative paths are resolved against ``paths/workdir``.
"""
import copy
from pathlib import Path

import yaml

from editlab.bench.build import BenchSettings
from editlab.editors import EditMethod, EditorConfig
from editlab.errors import ConfigError
from editlab.harness import RunConfig, DEFAULT_COMMON_RANGE, DEFAULT_SPECIFIC_RANGE, editor_configs
from editlab.model import ModelConfig
from editlab.utils.hashing import sha256_json
from editlab.utils.params import Params, merge_with_defaults

CONFIG_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "paths": {
        "workdir": ".",
        "checkpoint": "model.ckpt",
        "benchmark": "bench/benchmark.jsonl",
        "layer_cache": "layers/layer_map.json",
        "reports": "reports",
    },
    "model": {"d_model": 64, "n_heads": 4, "n_layers": 12, "d_ffn": 256, "max_seq_len": 128, "seed": 0},
    "training": {
        "n_mappings": 16,
        "n_functions": 1600,
        "epochs": 6,
        "lr": 3e-3,
        "batch": 8,
        "variation": 0.15,
        "seed": 0,
        "min_emission_rate": 0.95,
        "emission_per_api": 10,
    },
    "benchmark": {
        "seed": 0,
        "n_per_api": 20,
        "n_checks": 3,
        "max_attempts": 10,
        "pool_per_api": 40,
        "k_specificity": 5,
        "embed_dim": 512,
        "embed_seed": 0,
        "max_new_tokens": 24,
        "heldout_fraction": 0.2,
    },
    # method label -> EditorConfig overrides
    "editors": {},
    "run": {
        "editors": ["ftl", "lora", "adalora", "grace", "adalora_l"],
        "n_runs": 5,
        "base_seed": 0,
        "workers": 0,
    },
    "sweep": {
        "common_range": list(DEFAULT_COMMON_RANGE),
        "specific_range": list(DEFAULT_SPECIFIC_RANGE),
        "n_runs": 1,
    },
}


class ProjectConfig:
    """validated project configuration

    Parameters
    ----------
    d: dict, default None
        user values, merged over :data:`DEFAULT_CONFIG`
    workdir: str / Path, default None
        overrides ``paths/workdir``
    """

    def __init__(self, d=None, workdir=None):
        d = copy.deepcopy(d) if d else {"schema_version": CONFIG_SCHEMA_VERSION}
        if d.get("schema_version") != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}, "
                              f"got {d.get('schema_version')!r}")
        self.d = merge_with_defaults(d, copy.deepcopy(DEFAULT_CONFIG), open_sections=("editors",))
        if workdir is not None:
            self.d["paths"]["workdir"] = str(workdir)
        for label, overrides in self.d["editors"].items():
            EditorConfig.for_method(label, **(overrides or {}))
        self.params = Params(self.d)

    @classmethod
    def load(cls, path, workdir=None):
        with open(path) as fin:
            d = yaml.safe_load(fin)
        if not isinstance(d, dict):
            raise ConfigError(f"{path} does not contain a config mapping")
        return cls(d, workdir=workdir)

    def get(self, item_path, default=None):
        return self.params.get(item_path, default)

    @property
    def workdir(self):
        return Path(self.d["paths"]["workdir"])

    def path(self, name):
        """``paths/<name>`` resolved against the workdir"""
        p = Path(self.d["paths"][name])
        return p if p.is_absolute() else self.workdir / p

    def model_config(self, vocab_size):
        return ModelConfig(vocab_size=vocab_size, **self.d["model"])

    def bench_settings(self, seed=None):
        s = dict(self.d["benchmark"])
        if seed is not None:
            s["seed"] = seed
        return BenchSettings(**s)

    def editor_overrides(self):
        return {EditMethod.parse(k).label: dict(v or {}) for k, v in self.d["editors"].items()}

    def editor_config(self, method):
        method = EditMethod.parse(method)
        return EditorConfig.for_method(method, **self.editor_overrides().get(method.label, {}))

    def editor_configs(self, names=None):
        """EditorConfigs of ``names`` (default ``run/editors``) with the ``editors`` overrides applied"""
        names = self.d["run"]["editors"] if names is None else names
        return editor_configs(names, self.editor_overrides())

    def run_config(self, editors=None, n_runs=None, base_seed=None):
        r = self.d["run"]
        return RunConfig(editors=self.editor_configs(editors),
                         n_runs=r["n_runs"] if n_runs is None else n_runs,
                         base_seed=r["base_seed"] if base_seed is None else base_seed,
                         max_new=self.d["benchmark"]["max_new_tokens"])

    def config_hash(self):
        """hash of everything except file locations"""
        return sha256_json({k: v for k, v in self.d.items() if k != "paths"})

    def to_dict(self):
        return copy.deepcopy(self.d)
