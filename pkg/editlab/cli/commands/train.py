import sys

import click
import pandas as pd

from editlab.bench.build import emission_rate
from editlab.bench.corpus import generate_corpus
from editlab.bench.mappings import default_mappings, libraries_for, validate_mappings
from editlab.bench.vocab import build_vocabulary
from editlab.cli import cli_options as opt
from editlab.model import TransformerLM, train_lm, save_checkpoint
from editlab.report import write_csv
from editlab.utils.hashing import sha256_file
from editlab.utils.logging import cli_log


@click.command("train")
@click.option("--epochs", type=click.INT, help="training epochs, overrides the config, 0 writes the initialization")
@opt.seed
@click.pass_context
@opt.exit_on_error
def train(ctx, epochs, seed):
    """Train the base model on the synthetic corpus and check it emits the deprecated APIs"""
    verbose = ctx.obj["verbose"]
    config = ctx.obj["config"]
    t = config.to_dict()["training"]
    epochs = t["epochs"] if epochs is None else epochs
    seed = t["seed"] if seed is None else seed
    heldout_fraction = config.get("benchmark/heldout_fraction")
    max_new = config.get("benchmark/max_new_tokens")

    mappings = default_mappings(t["n_mappings"])
    libraries = libraries_for(mappings)
    vocab = build_vocabulary(libraries, mappings)
    validate_mappings(mappings, vocab)

    corpus = generate_corpus(mappings, libraries, t["n_functions"], seed, vocab=vocab, variation=t["variation"],
                             heldout_fraction=heldout_fraction)
    cli_log(f"train: {len(corpus)} functions, vocabulary of {len(vocab)} tokens, {epochs} epochs", verbose)

    model = TransformerLM(config.model_config(len(vocab)), vocab)
    loss_trace = train_lm(model, [vocab.encode(s) for s in corpus], epochs, t["lr"], t["batch"], seed=seed,
                          verbose=verbose)

    checkpoint = config.path("checkpoint")
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    extra = {"config_hash": config.config_hash(), "mappings": [m.to_dict() for m in mappings],
             "seed": seed, "epochs": epochs, "loss_trace": loss_trace}
    save_checkpoint(model, checkpoint, extra=extra)
    log_path = checkpoint.with_name(checkpoint.stem + ".train_log.csv")
    write_csv(pd.DataFrame({"epoch": list(range(len(loss_trace))), "loss": loss_trace}, columns=["epoch", "loss"]),
              log_path, provenance={"config_hash": config.config_hash(), "checkpoint_sha256": sha256_file(checkpoint)})
    cli_log(f"train: wrote {checkpoint} ({model.checksum()[:12]})", verbose)

    rate = emission_rate(model, mappings, libraries, n_per_api=t["emission_per_api"], seed=seed, max_new=max_new,
                         heldout_fraction=heldout_fraction)
    click.echo(f"held-out deprecated API emission rate {rate:.4f}")
    if epochs == 0:
        sys.stderr.write("editlab train: untrained checkpoint, emission gate not applied\n")
    elif rate < t["min_emission_rate"]:
        sys.stderr.write(f"editlab train: emission rate {rate:.4f} below {t['min_emission_rate']}\n")
        ctx.exit(1)
