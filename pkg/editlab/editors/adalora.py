"""SVD-parameterized adapters with importance-driven rank allocation (AdaLoRA)

Each adapted matrix gets ``y + x Q^T diag(lam * mask) P^T * alpha / r`` with
P: ``[d_out, r]``, lam: ``[r]`` (zero at start), Q: ``[r, d_in]``.  A
:class:`RankAllocator` shared by all adapters of one edit scores every singular
triplet and masks the least important ones down to a shrinking global budget.

The layer-restricted variant (AdaLoRA_L) attaches the same adapters only to the
layers an :class:`~editlab.layers.ApiLayerMap` marks as specific to the edited API.
"""
import warnings

import numpy as np

from editlab.editors.base import Adapter, begin_edit, attach, optimize, target_sequence, edit_loss, edit_rng
from editlab.editors.lora import adapted_matrix_names
from editlab.errors import ConfigError
from editlab.tensor import (Parameter, Tensor, matmul, transpose, scale, add, mul, diag, sub,
                            square_sum)


class SvdAdapter(Adapter):
    """rank-r update in SVD form with a fixed binary mask over triplets

    Parameters
    ----------
    name: str
        id of the adapted weight matrix
    d_in, d_out: int
    rank: int
    alpha: float
    rng: numpy.random.Generator
    """

    def __init__(self, name, d_in, d_out, rank, alpha, rng):
        self.name = name
        self.rank = rank
        self.scaling = alpha / rank
        self.P = Parameter(f"{name}.svd_P", rng.normal(0.0, 1.0 / np.sqrt(d_out), size=(d_out, rank)))
        self.lam = Parameter(f"{name}.svd_lambda", np.zeros(rank))
        self.Q = Parameter(f"{name}.svd_Q", rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(rank, d_in)))
        self.mask = np.ones(rank, dtype=bool)

    def parameters(self):
        return [self.P, self.lam, self.Q]

    def apply(self, x, y):
        lam = mul(self.lam, Tensor(self.mask.astype(np.float64)))
        delta = matmul(matmul(matmul(x, transpose(self.Q)), diag(lam)), transpose(self.P))
        return add(y, scale(delta, self.scaling))

    def prune(self, index):
        """disable one triplet, its singular value is zeroed"""
        self.mask[index] = False
        self.lam.data[index] = 0.0

    def orthogonality_penalty(self):
        """squared Frobenius norms of P^T P - I and Q Q^T - I, summed"""
        eye = Tensor(np.eye(self.rank))
        pp = sub(matmul(transpose(self.P), self.P), eye)
        qq = sub(matmul(self.Q, transpose(self.Q)), eye)
        return add(square_sum(pp), square_sum(qq))

    def delta_weight(self):
        lam = self.lam.data * self.mask
        return (self.P.data @ np.diag(lam) @ self.Q.data).T * self.scaling

    def state_dict(self):
        d = super().state_dict()
        d[f"{self.name}.svd_mask"] = self.mask.tolist()
        return d


class RankAllocator:
    """smoothed sensitivity of every adapter entry and the budget schedule

    Parameters
    ----------
    adapters: list(SvdAdapter)
    total_steps: int
    final_rank_ratio: float
    prune_interval: int
    beta1: float
        sensitivity smoothing
    beta2: float
        uncertainty smoothing
    use_uncertainty: bool
        score entries by smoothed sensitivity times smoothed uncertainty
    """

    def __init__(self, adapters, total_steps, final_rank_ratio=0.5, prune_interval=5, beta1=0.85, beta2=0.85,
                 use_uncertainty=False):
        self.adapters = list(adapters)
        self.total_steps = total_steps
        self.prune_interval = prune_interval
        self.beta1 = beta1
        self.beta2 = beta2
        self.use_uncertainty = use_uncertainty
        self.init_budget = sum(a.rank for a in self.adapters)
        self.final_budget = max(1, int(round(final_rank_ratio * self.init_budget)))
        self.exp_avg_ipt = {}
        self.exp_avg_unc = {}
        self.budget_trace = []

    def update_ipt(self):
        for a in self.adapters:
            for p in a.parameters():
                if p.grad is None:
                    continue
                ipt = np.abs(p.data * p.grad)
                avg = self.exp_avg_ipt.get(p.name, np.zeros_like(ipt))
                avg = self.beta1 * avg + (1.0 - self.beta1) * ipt
                self.exp_avg_ipt[p.name] = avg
                unc = self.exp_avg_unc.get(p.name, np.zeros_like(ipt))
                self.exp_avg_unc[p.name] = self.beta2 * unc + (1.0 - self.beta2) * np.abs(ipt - avg)

    def _element_score(self, p):
        if p.name not in self.exp_avg_ipt:
            return np.zeros(p.shape)
        if self.use_uncertainty:
            return self.exp_avg_ipt[p.name] * self.exp_avg_unc[p.name]
        return self.exp_avg_ipt[p.name]

    def triplet_scores(self, adapter):
        """score of each triplet: lambda entry plus the sums over its P column and Q row"""
        return (self._element_score(adapter.lam)
                + self._element_score(adapter.P).sum(axis=0)
                + self._element_score(adapter.Q).sum(axis=1))

    def budget(self, step):
        """cubic decay from the initial to the final budget, reached at the last step"""
        if self.total_steps <= 0:
            return self.init_budget
        frac = 1.0 - min(step, self.total_steps) / self.total_steps
        return int((self.init_budget - self.final_budget) * frac ** 3 + self.final_budget)

    def enabled(self):
        return sum(int(a.mask.sum()) for a in self.adapters)

    def after_step(self, step):
        """prune on schedule, then hold every masked singular value at zero"""
        self.maybe_prune(step)
        for a in self.adapters:
            a.lam.data[~a.mask] = 0.0

    def maybe_prune(self, step):
        """at every prune interval and the last step, mask lowest-score triplets down to budget"""
        if step % self.prune_interval != 0 and step != self.total_steps:
            return
        budget = self.budget(step)
        self.budget_trace.append((step, budget))
        n_prune = self.enabled() - budget
        if n_prune <= 0:
            return
        ranked = []
        for a_i, a in enumerate(self.adapters):
            scores = self.triplet_scores(a)
            for r in range(a.rank):
                if a.mask[r]:
                    ranked.append((scores[r], a_i, r))
        ranked.sort()
        for _, a_i, r in ranked[:n_prune]:
            self.adapters[a_i].prune(r)


def adalora_edit(model, instance, config, layers=None):
    """train SVD adapters on wq and wv of ``layers`` (default every layer) with rank allocation"""
    if layers is None:
        layers = range(model.config.n_layers)
    layers = list(layers)
    if len(layers) == 0:
        raise ConfigError(f"{config.label}: no layers to adapt")
    rng = edit_rng(config, instance)
    handle = begin_edit(model, config.label)
    adapters = []
    for name in adapted_matrix_names(layers):
        d_in, d_out = model.params[name].shape
        a = SvdAdapter(name, d_in, d_out, config.rank, config.alpha, rng)
        attach(model, handle, name, a)
        adapters.append(a)

    allocator = RankAllocator(adapters, config.epochs, config.final_rank_ratio, config.prune_interval,
                              config.importance_ema, config.uncertainty_ema, config.adalora_uncertainty)
    orth_trace = []
    seq = target_sequence(instance, model.vocab)

    def _loss():
        penalty = scale(total_orthogonality_penalty(adapters), 1.0 / len(adapters))
        orth_trace.append(penalty.item())
        return add(edit_loss(model, seq), scale(penalty, config.orth_weight))

    params = [p for a in adapters for p in a.parameters()]
    with model.trainable([]):
        handle.loss_trace = optimize(params, _loss, config,
                                     after_backward=lambda step: allocator.update_ipt(),
                                     after_step=allocator.after_step)

    orth_ok = penalty_non_increasing(orth_trace)
    if not orth_ok:
        warnings.warn(f"{config.label} edit of {instance.id}: orthogonality penalty rose over training, "
                      f"{orth_trace[0]:.4g} -> {orth_trace[-1]:.4g}")
    handle.extra.update({"layers": layers, "orth_trace": orth_trace,
                         "orth_non_increasing": orth_ok,
                         "budget_trace": allocator.budget_trace,
                         "init_budget": allocator.init_budget, "final_budget": allocator.final_budget,
                         "enabled": allocator.enabled()})
    return handle


def penalty_non_increasing(trace):
    """True if the mean of the last quarter of the trace is at most the mean of the first quarter

    Traces shorter than 4 entries are accepted.
    """
    n = len(trace) // 4
    if n == 0:
        return True
    return float(np.mean(trace[-n:])) <= float(np.mean(trace[:n]))


def total_orthogonality_penalty(adapters):
    total = adapters[0].orthogonality_penalty()
    for a in adapters[1:]:
        total = add(total, a.orthogonality_penalty())
    return total


def adalora_l_edit(model, instance, config, layer_map):
    """AdaLoRA restricted to the layers specific to the instance's API"""
    if layer_map is None:
        raise ConfigError("adalora_l needs an API layer map")
    layers = layer_map.specific_layers(instance.api_id)
    if not layers:
        raise ConfigError(f"adalora_l: no specific layers for {instance.api_id}")
    handle = adalora_edit(model, instance, config, layers=sorted(layers))
    handle.extra["common_layers"] = sorted(layer_map.common)
    return handle
