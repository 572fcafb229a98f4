"""Discrete key-value codebook at one FFN down-projection (GRACE)

The codebook entry's key is the input activation of ``layer.L.ffn.w2`` at the final
prompt position of the edit.  Its value holds one trainable replacement for that
projection's output per position from the prompt end through the end of the target
line.  At inference the row nearest to the key fires the entry if it lies within the
deferral radius, and the values replace the outputs of that row and the rows after
it.  Inputs whose rows all stay outside the radius pass through unchanged.
"""
import numpy as np

from editlab.editors.base import Adapter, begin_edit, attach, optimize, target_sequence, edit_loss
from editlab.tensor import Parameter, no_grad, take_rows, replace_rows


class _Capture(Adapter):
    """records input and output rows of a projection, output unchanged"""

    def __init__(self):
        self.inputs = None
        self.outputs = None

    def apply(self, x, y):
        self.inputs = x.data.copy()
        self.outputs = y.data.copy()
        return y


class GraceAdapter(Adapter):
    """
    Parameters
    ----------
    name: str
        id of the adapted weight matrix
    key: np.ndarray [d_in]
    values: np.ndarray [n, d_out]
        initial values, row j replaces the output j positions after the firing row
    radius: float
        deferral radius, the entry fires only if the nearest row is strictly closer
    """

    def __init__(self, name, key, values, radius):
        self.name = name
        self.key = np.array(key, dtype=np.float64).reshape(-1)
        self.values = Parameter(f"{name}.grace_values", values)
        self.radius = radius
        self.n_hits = 0

    def parameters(self):
        return [self.values]

    def lookup(self, x):
        """row of x that fires the entry, None if every row is at least radius away"""
        d = np.linalg.norm(x - self.key[None, :], axis=1)
        t = int(np.argmin(d))
        return t if d[t] < self.radius else None

    def apply(self, x, y):
        t = self.lookup(x.data)
        if t is None:
            return y
        self.n_hits += 1
        n = min(self.values.shape[0], x.shape[0] - t)
        return replace_rows(y, range(t, t + n), take_rows(self.values, range(n)))

    def state_dict(self):
        d = super().state_dict()
        d[f"{self.name}.grace_key"] = self.key.tolist()
        return d


def grace_edit(model, instance, config):
    """write one codebook entry keyed on the final prompt position at the down-projection of layer L"""
    layer = config.resolved_target_layer(model.config.n_layers)
    name = f"layer.{layer}.ffn.w2"
    seq = target_sequence(instance, model.vocab)
    inputs, _, mask = seq
    prompt_end = int(np.argmax(mask))

    handle = begin_edit(model, config.label)
    handle.extra["target_layer"] = layer

    capture = _Capture()
    model.attach_adapter(name, capture)
    try:
        with no_grad():
            model.forward(inputs)
    finally:
        model.detach_adapter(name, capture)

    # the mask runs from the prompt end to the last position
    adapter = GraceAdapter(name, capture.inputs[prompt_end], capture.outputs[prompt_end:], config.deferral_radius)
    attach(model, handle, name, adapter)
    handle.extra["key_position"] = prompt_end
    handle.extra["n_values"] = adapter.values.shape[0]

    with model.trainable([]):
        handle.loss_trace = optimize([adapter.values], lambda: edit_loss(model, seq), config)

    if config.epochs == 0:
        # nothing written, the model keeps its pre-edit outputs
        model.detach_adapter(name, adapter)
        handle.adapters = []
        handle.touched = []
    return handle
