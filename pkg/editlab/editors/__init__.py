"""Edit methods: FT-L, LoRA, AdaLoRA, GRACE and the layer-restricted AdaLoRA_L

Every method takes a model carrying no edit, applies one edit for one instance and
returns an :class:`~editlab.editors.base.EditHandle`; :func:`rollback` undoes it.
"""
import json
import time
import tracemalloc

from editlab.editors.base import EditHandle, rollback
from editlab.editors.config import EditMethod, EditorConfig, METHOD_DEFAULTS
from editlab.editors.ftl import ftl_edit
from editlab.editors.lora import lora_edit
from editlab.editors.adalora import adalora_edit, adalora_l_edit
from editlab.editors.grace import grace_edit
from editlab.errors import ContractError

__all__ = ["EditMethod", "EditorConfig", "EditHandle", "METHOD_DEFAULTS", "edit", "rollback", "profile_edit",
           "dump_handle", "n_touched_scalars"]


def edit(model, instance, config, layer_map=None):
    """apply one edit

    Parameters
    ----------
    model: TransformerLM
        carries no active edit
    instance: EditInstance
    config: EditorConfig
    layer_map: ApiLayerMap, optional
        required by AdaLoRA_L

    Returns
    -------
    handle: EditHandle

    If the method fails, whatever it already changed is rolled back before the
    exception propagates.
    """
    config.validate(model.config)
    if model.active_edit is not None:
        raise ContractError(f"model already carries active edit {model.active_edit}, roll it back first")

    method = config.method
    try:
        if method == EditMethod.FTL:
            return ftl_edit(model, instance, config)
        elif method == EditMethod.LORA:
            return lora_edit(model, instance, config)
        elif method == EditMethod.ADALORA:
            return adalora_edit(model, instance, config)
        elif method == EditMethod.GRACE:
            return grace_edit(model, instance, config)
        elif method == EditMethod.ADALORA_L:
            return adalora_l_edit(model, instance, config, layer_map)
        else:
            raise ValueError(f"unknown edit method {method}")
    except Exception:
        _abandon(model)
        raise


def _abandon(model):
    # restore whatever a failed method left behind
    handle = model.pending_handle
    if handle is not None and handle.active and model.active_edit == handle.edit_id:
        rollback(model, handle)
    model.pending_handle = None


def profile_edit(model, instance, config, layer_map=None):
    """edit with wall time (ms) and peak traced allocation (bytes) around the edit only

    Returns
    -------
    handle, wall_ms, peak_bytes
    """
    tracemalloc.start()
    try:
        t0 = time.perf_counter()
        handle = edit(model, instance, config, layer_map=layer_map)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return handle, wall_ms, peak


def n_touched_scalars(model, handle):
    """number of scalar weights the edit updates or creates"""
    n = 0
    adapter_params = {p.name: p for _, a in handle.adapters for p in a.parameters()}
    for name in handle.touched:
        p = adapter_params.get(name, model.params.get(name))
        if p is not None:
            n += p.data.size
    return n


def dump_handle(handle, path):
    """write an EditHandle, adapter states included, as JSON for debugging"""
    with open(path, "w") as fout:
        json.dump(handle.to_dict(), fout, indent=1)
