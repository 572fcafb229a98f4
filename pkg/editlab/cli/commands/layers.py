import click

from editlab.bench.build import load_benchmark
from editlab.cli import cli_options as opt
from editlab.cli.commands.bench import load_model
from editlab.errors import ContractError
from editlab.layers import layer_map_for, score_table
from editlab.report import write_csv
from editlab.utils.logging import cli_log


def load_inputs(config):
    """checkpoint and benchmark, the benchmark revalidated against the model"""
    model, mappings, checkpoint_hash = load_model(config)
    path = config.path("benchmark")
    if not path.exists():
        raise ContractError(f"no benchmark at {path}, run 'editlab bench' first")
    benchmark = load_benchmark(path, model, max_new=config.get("benchmark/max_new_tokens"))
    return model, benchmark, checkpoint_hash


def compute_layer_map(ctx, model, benchmark, n_common, n_specific, no_cache=False, workers=None):
    config = ctx.obj["config"]
    cache_path = config.path("layer_cache")
    layer_map, hit = layer_map_for(model, benchmark, n_common, n_specific, cache_path=cache_path,
                                   use_cache=not no_cache, autopara_info=opt.autopara_from(ctx, workers),
                                   verbose=ctx.obj["verbose"])
    provenance = {"model_hash": model.checksum(), "benchmark_hash": benchmark.manifest["benchmark_hash"]}
    write_csv(score_table(layer_map.profiles), cache_path.with_name("layer_scores.csv"), provenance)
    return layer_map, hit


@click.command("layers")
@click.option("--n-common", type=click.INT, help="common API layers, default from the adalora_l editor config")
@click.option("--n-specific", type=click.INT, help="specific API layers, default from the adalora_l editor config")
@opt.no_cache
@opt.workers
@click.pass_context
@opt.exit_on_error
def layers(ctx, n_common, n_specific, no_cache, workers):
    """Score layer importance per API and select common and specific layers"""
    config = ctx.obj["config"]
    ec = config.editor_config("adalora_l")
    n_common = ec.n_common if n_common is None else n_common
    n_specific = ec.n_specific if n_specific is None else n_specific

    model, benchmark, _ = load_inputs(config)
    layer_map, hit = compute_layer_map(ctx, model, benchmark, n_common, n_specific, no_cache, workers)
    cli_log(f"layers: {'cache hit' if hit else 'computed'} {config.path('layer_cache')}", ctx.obj["verbose"])
    click.echo(f"common {' '.join(str(i) for i in layer_map.common)}")
    for api, specific in layer_map.specific.items():
        click.echo(f"{api} {' '.join(str(i) for i in specific)}")
