"""Constrained fine-tuning of one FFN layer (FT-L)"""
from editlab.editors.base import begin_edit, optimize, target_sequence, edit_loss
from editlab.model import FFN_PARAMS


def ftl_edit(model, instance, config):
    """fine-tune the FFN of ``config.target_layer`` on the edit loss

    Each Adam step is clipped element-wise to ``config.norm_budget``, so no weight moves
    more than ``epochs * norm_budget`` from its pre-edit value.
    """
    layer = config.resolved_target_layer(model.config.n_layers)
    names = [f"layer.{layer}.ffn.{p}" for p in FFN_PARAMS]

    handle = begin_edit(model, config.label)
    handle.snapshot = model.snapshot(names)
    handle.touched = list(names)
    handle.extra["target_layer"] = layer

    seq = target_sequence(instance, model.vocab)
    with model.trainable(names):
        handle.loss_trace = optimize(model.parameters(names), lambda: edit_loss(model, seq), config,
                                     max_update=config.norm_budget)
    return handle
