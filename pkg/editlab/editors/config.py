from dataclasses import dataclass, asdict, fields, replace
from enum import Enum

from editlab.errors import ConfigError


class EditMethod(str, Enum):
    FTL = "FTL"
    LORA = "LoRA"
    ADALORA = "AdaLoRA"
    GRACE = "GRACE"
    ADALORA_L = "AdaLoRA_L"

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        for m in cls:
            if key in (m.label, m.value.lower()):
                return m
        raise ConfigError(f"unknown edit method {name!r}, expected one of {[m.label for m in cls]}")


# relative depth of the single edited layer, mapped onto the model's layer count
FTL_RELATIVE_DEPTH = 21 / 28
GRACE_RELATIVE_DEPTH = 27 / 28

_ADALORA = dict(epochs=30, lr=5e-3, rank=8, alpha=8.0, final_rank_ratio=0.5, prune_interval=5,
                importance_ema=0.85, uncertainty_ema=0.85, adalora_uncertainty=False, orth_weight=0.1)

METHOD_DEFAULTS = {
    EditMethod.FTL: dict(epochs=40, lr=5e-4, norm_budget=5e-4),
    EditMethod.LORA: dict(epochs=30, lr=5e-3, rank=8, alpha=8.0),
    EditMethod.ADALORA: dict(_ADALORA),
    EditMethod.GRACE: dict(epochs=30, lr=1.0, deferral_radius=1.0),
    EditMethod.ADALORA_L: dict(_ADALORA, n_common=2, n_specific=4),
}


@dataclass
class EditorConfig:
    """hyperparameters of one edit method

    Parameters
    ----------
    method: EditMethod
    epochs: int
        optimizer steps on the single edit instance
    lr: float
    rank: int
        adapter rank (LoRA, AdaLoRA)
    alpha: float
        adapter scaling numerator, the update is scaled by alpha / rank
    target_layer: int, default None
        layer for FT-L and GRACE, None for the method's relative depth
    norm_budget: float
        FT-L per-step L-infinity clip of each weight update
    deferral_radius: float
        GRACE codebook radius
    n_common, n_specific: int
        AdaLoRA_L layer counts
    final_rank_ratio: float
        AdaLoRA final total rank as a fraction of the initial total
    prune_interval: int
        AdaLoRA steps between budget reallocations
    importance_ema: float
        AdaLoRA sensitivity smoothing
    uncertainty_ema: float
        AdaLoRA uncertainty smoothing, used if adalora_uncertainty
    adalora_uncertainty: bool
        multiply smoothed sensitivity by its smoothed uncertainty
    orth_weight: float
        AdaLoRA orthogonality penalty weight
    betas, eps: Adam settings
    seed: int
        seed for adapter initialization
    """
    method: EditMethod
    epochs: int
    lr: float
    rank: int = 8
    alpha: float = 8.0
    target_layer: int = None
    norm_budget: float = 5e-4
    deferral_radius: float = 1.0
    n_common: int = 2
    n_specific: int = 4
    final_rank_ratio: float = 0.5
    prune_interval: int = 5
    importance_ema: float = 0.85
    uncertainty_ema: float = 0.85
    adalora_uncertainty: bool = False
    orth_weight: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    @classmethod
    def for_method(cls, method, **overrides):
        method = EditMethod.parse(method)
        kwargs = dict(METHOD_DEFAULTS[method])
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown editor settings {sorted(unknown)} for {method.label}")
        kwargs.update(overrides)
        kwargs["method"] = method
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        return cls(**kwargs)

    @property
    def label(self):
        return self.method.label

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def resolved_target_layer(self, n_layers):
        if self.target_layer is not None:
            return self.target_layer
        depth = FTL_RELATIVE_DEPTH if self.method == EditMethod.FTL else GRACE_RELATIVE_DEPTH
        return max(0, min(n_layers - 1, int(round(depth * n_layers)) - 1))

    def validate(self, model_config):
        n_layers = model_config.n_layers
        if self.epochs < 0:
            raise ConfigError(f"{self.label}: epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"{self.label}: lr must be > 0, got {self.lr}")
        if self.method in (EditMethod.FTL, EditMethod.GRACE):
            layer = self.resolved_target_layer(n_layers)
            if not 0 <= layer < n_layers:
                raise ConfigError(f"{self.label}: target_layer {layer} outside [0, {n_layers})")
        if self.method == EditMethod.FTL and self.norm_budget < 0:
            raise ConfigError(f"ftl: norm_budget must be >= 0, got {self.norm_budget}")
        if self.method == EditMethod.GRACE and self.deferral_radius <= 0:
            raise ConfigError(f"grace: deferral_radius must be > 0, got {self.deferral_radius}")
        if self.method in (EditMethod.LORA, EditMethod.ADALORA, EditMethod.ADALORA_L):
            if not 1 <= self.rank <= model_config.d_model:
                raise ConfigError(f"{self.label}: rank {self.rank} outside [1, {model_config.d_model}]")
        if self.method in (EditMethod.ADALORA, EditMethod.ADALORA_L):
            if not 0 < self.final_rank_ratio <= 1:
                raise ConfigError(f"{self.label}: final_rank_ratio must be in (0, 1]")
            if self.prune_interval < 1:
                raise ConfigError(f"{self.label}: prune_interval must be >= 1")
        if self.method == EditMethod.ADALORA_L:
            if self.n_specific < 1:
                raise ConfigError("adalora_l: n_specific must be >= 1")
            if self.n_common < 0 or self.n_common + self.n_specific > n_layers:
                raise ConfigError(f"adalora_l: n_common {self.n_common} + n_specific {self.n_specific} "
                                  f"exceeds {n_layers} layers")

    def to_dict(self):
        d = asdict(self)
        d["method"] = self.method.value
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        method = d.pop("method")
        return cls.for_method(method, **d)
