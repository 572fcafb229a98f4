"""Low-rank adapters on the attention query and value projections"""
import numpy as np

from editlab.editors.base import Adapter, begin_edit, attach, optimize, target_sequence, edit_loss, edit_rng
from editlab.tensor import Parameter, matmul, transpose, scale, add

ADAPTED_MATRICES = ("wq", "wv")


class LoraAdapter(Adapter):
    """``y + x A^T B^T * alpha / r`` with A: ``[r, d_in]``, B: ``[d_out, r]``, B zero at start

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
        self.A = Parameter(f"{name}.lora_A", rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(rank, d_in)))
        self.B = Parameter(f"{name}.lora_B", np.zeros((d_out, rank)))

    def parameters(self):
        return [self.A, self.B]

    def apply(self, x, y):
        delta = matmul(matmul(x, transpose(self.A)), transpose(self.B))
        return add(y, scale(delta, self.scaling))

    def delta_weight(self):
        """the update as a ``[d_in, d_out]`` matrix to add to the base weight"""
        return (self.B.data @ self.A.data).T * self.scaling


def adapted_matrix_names(layers):
    return [f"layer.{i}.attn.{w}" for i in layers for w in ADAPTED_MATRICES]


def lora_edit(model, instance, config, layers=None):
    """train fresh LoRA adapters on wq and wv of ``layers`` (default every layer)"""
    if layers is None:
        layers = range(model.config.n_layers)
    rng = edit_rng(config, instance)
    handle = begin_edit(model, config.label)
    for name in adapted_matrix_names(layers):
        d_in, d_out = model.params[name].shape
        attach(model, handle, name, LoraAdapter(name, d_in, d_out, config.rank, config.alpha, rng))

    params = [p for _, a in handle.adapters for p in a.parameters()]
    seq = target_sequence(instance, model.vocab)
    with model.trainable([]):
        handle.loss_trace = optimize(params, lambda: edit_loss(model, seq), config)
    return handle
