"""Shared pieces of the edit methods: the edit loss, the training loop and the handle"""
import itertools
from dataclasses import dataclass, field

import numpy as np

from editlab.errors import EditError, StaleHandleError, ContractError
from editlab.tensor import Adam, zero_grads
from editlab.utils.hashing import stable_int
from editlab.utils.misc import find_subsequence

_edit_counter = itertools.count()


def target_sequence(instance, vocab, api_only=False):
    """teacher-forced sequence ``input ++ target_line ++ <eol>`` and its loss mask

    Parameters
    ----------
    instance: EditInstance
    vocab: Vocabulary
    api_only: bool, default False
        mask only the positions predicting the updated API tokens, otherwise every
        position predicting the target line and its end-of-line

    Returns
    -------
    inputs: list(int), targets: list(int), mask: np.ndarray(bool)
    """
    x = vocab.encode(instance.input)
    line = vocab.encode(instance.target_line)
    seq = x + line + [vocab.eol_id]
    inputs, targets = seq[:-1], seq[1:]
    mask = np.zeros(len(inputs), dtype=bool)
    start = len(x) - 1
    if api_only:
        j = find_subsequence(instance.target_line, instance.target)
        if j < 0:
            raise ContractError(f"{instance.id}: target API not in target line")
        mask[start + j:start + j + len(instance.target)] = True
    else:
        mask[start:] = True
    return inputs, targets, mask


def edit_loss(model, seq):
    inputs, targets, mask = seq
    return model.sequence_loss(inputs, targets, mask)


def edit_rng(config, instance):
    return np.random.default_rng([config.seed, stable_int(instance.id)])


class Adapter:
    """transforms the output of one weight matrix, ``apply(x, y) -> y'``"""

    def parameters(self):
        return []

    def apply(self, x, y):
        raise NotImplementedError

    def state_dict(self):
        return {p.name: p.data.tolist() for p in self.parameters()}


@dataclass
class EditHandle:
    """record of an applied edit, everything rollback needs

    Parameters
    ----------
    edit_id: int
    method: str
    touched: list(str)
        ids of every parameter whose bits the edit changed or created
    adapters: list((str, Adapter))
        attached (matrix name, adapter) pairs
    snapshot: Snapshot or None
        pre-edit copy of the touched base parameters
    loss_trace: list(float)
        per-step edit loss
    extra: dict
        method specific traces, e.g. orthogonality penalty and rank budget
    """
    edit_id: int
    method: str
    touched: list
    adapters: list = field(default_factory=list)
    snapshot: object = None
    loss_trace: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    active: bool = True

    def to_dict(self):
        return {"edit_id": self.edit_id, "method": self.method, "touched": list(self.touched),
                "loss_trace": list(self.loss_trace), "extra": self.extra, "active": self.active,
                "adapters": [{"matrix": name, "params": a.state_dict()} for name, a in self.adapters]}


def begin_edit(model, method):
    if model.active_edit is not None:
        raise ContractError(f"model already carries active edit {model.active_edit}, roll it back first")
    handle = EditHandle(edit_id=next(_edit_counter), method=method, touched=[])
    model.active_edit = handle.edit_id
    model.pending_handle = handle
    return handle


def attach(model, handle, matrix_name, adapter):
    model.attach_adapter(matrix_name, adapter)
    handle.adapters.append((matrix_name, adapter))
    handle.touched.extend(p.name for p in adapter.parameters())


def optimize(params, loss_fn, config, max_update=None, after_backward=None, after_step=None):
    """Adam on ``params`` for ``config.epochs`` steps

    Parameters
    ----------
    params: list(Parameter)
    loss_fn: callable() -> scalar Tensor
    config: EditorConfig
    max_update: float, optional
        per-element L-infinity clip of each step
    after_backward: callable(step), optional
        called with gradients populated, before the update
    after_step: callable(step), optional

    Returns
    -------
    loss_trace: list(float)
    """
    opt = Adam(params, config.lr, betas=config.betas, eps=config.eps, max_update=max_update)
    trace = []
    for step in range(1, config.epochs + 1):
        zero_grads(params)
        loss = loss_fn()
        value = loss.item()
        trace.append(value)
        if not np.isfinite(value):
            zero_grads(params)
            raise EditError(f"{config.label} edit diverged at step {step}", trace)
        loss.backward()
        if after_backward is not None:
            after_backward(step)
        opt.step()
        if after_step is not None:
            after_step(step)
    zero_grads(params)
    return trace


def rollback(model, handle):
    """undo an edit: restore touched base parameters and detach its adapters

    Raises
    ------
    StaleHandleError if the handle was already rolled back or is not the model's active edit
    """
    if not handle.active or model.active_edit != handle.edit_id:
        raise StaleHandleError(f"edit {handle.edit_id} ({handle.method}) is not active on this model")
    if handle.snapshot is not None:
        model.restore(handle.snapshot)
    for name, adapter in handle.adapters:
        model.detach_adapter(name, adapter)
    for p in model.parameters():
        p.grad = None
    model.active_edit = None
    model.pending_handle = None
    handle.active = False
