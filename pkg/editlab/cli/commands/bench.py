import click

from editlab.bench.build import build_benchmark, save_benchmark
from editlab.bench.mappings import ApiMapping, libraries_for
from editlab.cli import cli_options as opt
from editlab.errors import ContractError
from editlab.model import load_checkpoint
from editlab.utils.hashing import sha256_file
from editlab.utils.logging import cli_log


def load_model(config):
    """checkpoint of the project and the API mappings it was trained on"""
    checkpoint = config.path("checkpoint")
    if not checkpoint.exists():
        raise ContractError(f"no checkpoint at {checkpoint}, run 'editlab train' first")
    model, extra = load_checkpoint(checkpoint)
    mappings = [ApiMapping.from_dict(d) for d in extra["mappings"]]
    return model, mappings, sha256_file(checkpoint)


@click.command("bench")
@opt.seed
@opt.workers
@click.pass_context
@opt.exit_on_error
def bench(ctx, seed, workers):
    """Build the four-suite editing benchmark from the trained checkpoint"""
    verbose = ctx.obj["verbose"]
    config = ctx.obj["config"]
    model, mappings, checkpoint_hash = load_model(config)

    provenance = {"checkpoint_sha256": checkpoint_hash, "config_hash": config.config_hash()}
    benchmark = build_benchmark(model, mappings, libraries_for(mappings), config.bench_settings(seed),
                                provenance=provenance, autopara_info=opt.autopara_from(ctx, workers),
                                verbose=verbose)
    path = config.path("benchmark")
    bench_hash = save_benchmark(benchmark, path)
    counts = benchmark.manifest["counts"]
    cli_log(f"bench: wrote {path} ({bench_hash[:12]})", verbose)
    click.echo(" ".join(f"{k} {v}" for k, v in counts.items()))
