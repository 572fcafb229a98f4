import sys
from pathlib import Path

import click

from editlab.cli import cli_options as opt
from editlab.cli.commands.layers import load_inputs, compute_layer_map
from editlab.editors import EditMethod
from editlab.harness import (run_experiment, sweep_layers, check_gates, check_sweep_gates, PRE_EDIT,
                             spearman_trend)
from editlab.report import write_report_csv, write_costs_csv, write_markdown, markdown_table, gains_markdown, \
    write_sweep_csv
from editlab.utils.logging import cli_log


def _provenance(config, model, benchmark, checkpoint_hash, **kwargs):
    d = {"checkpoint_sha256": checkpoint_hash, "model_hash": model.checksum(),
         "benchmark_hash": benchmark.manifest["benchmark_hash"], "config_hash": config.config_hash()}
    d.update(kwargs)
    return d


def _fail(ctx, failures):
    for f in failures:
        sys.stderr.write(f"editlab {ctx.info_name}: gate failed: {f}\n")
    ctx.exit(1)


@click.command("run")
@opt.editors
@opt.seed
@opt.runs
@opt.workers
@opt.gates
@opt.out
@opt.no_cache
@click.pass_context
@opt.exit_on_error
def run(ctx, editors, seed, n_runs, workers, check, out, no_cache):
    """Edit, evaluate and roll back every benchmark instance for each editor and write reports"""
    verbose = ctx.obj["verbose"]
    config = ctx.obj["config"]
    run_config = config.run_config(editors, n_runs=n_runs, base_seed=seed)
    model, benchmark, checkpoint_hash = load_inputs(config)

    profiles = None
    if any(e != PRE_EDIT and e.method == EditMethod.ADALORA_L for e in run_config.editors):
        ec = config.editor_config("adalora_l")
        layer_map, _ = compute_layer_map(ctx, model, benchmark, ec.n_common, ec.n_specific, no_cache, workers)
        profiles = layer_map.profiles

    reports = run_experiment(model, benchmark, run_config, profiles=profiles,
                             autopara_info=opt.autopara_from(ctx, workers), verbose=verbose)

    out_dir = Path(out) if out is not None else config.path("reports")
    provenance = _provenance(config, model, benchmark, checkpoint_hash, seeds=run_config.seeds,
                             editors=[r.editor for r in reports])
    write_report_csv(reports, out_dir / "report.csv", provenance)
    table = markdown_table(reports)
    write_markdown(table, out_dir / "report.md", provenance)
    write_costs_csv(reports, out_dir / "costs.csv", provenance)
    by_label = {r.editor: r for r in reports}
    if EditMethod.ADALORA.label in by_label and EditMethod.ADALORA_L.label in by_label:
        write_markdown(gains_markdown(by_label[EditMethod.ADALORA.label], by_label[EditMethod.ADALORA_L.label]),
                       out_dir / "gains.md", provenance)
    cli_log(f"run: reports in {out_dir}", verbose)
    click.echo(table, nl=False)

    if check:
        failures = check_gates(reports)
        if failures:
            _fail(ctx, failures)


def _parse_ints(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma separated integers")


@click.command("sweep")
@click.option("--common", "common_range", callback=_parse_ints, help="comma separated n_common values")
@click.option("--specific", "specific_range", callback=_parse_ints, help="comma separated n_specific values")
@opt.seed
@opt.runs
@opt.workers
@opt.gates
@opt.out
@opt.no_cache
@click.pass_context
@opt.exit_on_error
def sweep(ctx, common_range, specific_range, seed, n_runs, workers, check, out, no_cache):
    """Run AdaLoRA_L over numbers of common and specific layers

    With both ranges given the full grid is run.  Otherwise each missing range is swept
    from the config with the other count fixed at the adalora_l editor setting.
    """
    verbose = ctx.obj["verbose"]
    config = ctx.obj["config"]
    s = config.to_dict()["sweep"]
    n_runs = s["n_runs"] if n_runs is None else n_runs
    seed = config.get("run/base_seed") if seed is None else seed
    ec = config.editor_config("adalora_l")
    model, benchmark, checkpoint_hash = load_inputs(config)
    layer_map, _ = compute_layer_map(ctx, model, benchmark, ec.n_common, ec.n_specific, no_cache, workers)

    if common_range is not None and specific_range is not None:
        grids = [(common_range, specific_range)]
    else:
        grids = []
        if common_range is None and specific_range is None:
            grids.append((s["common_range"], [ec.n_specific]))
            grids.append(([ec.n_common], s["specific_range"]))
        elif common_range is not None:
            grids.append((common_range, [ec.n_specific]))
        else:
            grids.append(([ec.n_common], specific_range))

    points = []
    for c_range, s_range in grids:
        points.extend(sweep_layers(model, benchmark, ec, layer_map.profiles, c_range, s_range, n_runs=n_runs,
                                   base_seed=seed, max_new=config.get("benchmark/max_new_tokens"),
                                   autopara_info=opt.autopara_from(ctx, workers), verbose=verbose))

    out_dir = Path(out) if out is not None else config.path("reports")
    provenance = _provenance(config, model, benchmark, checkpoint_hash, seeds=[seed + r for r in range(n_runs)])
    write_sweep_csv(points, out_dir / "sweep.csv", provenance)
    cli_log(f"sweep: {len(points)} points in {out_dir / 'sweep.csv'}", verbose)
    for vary, fixed_at, dims in (("n_specific", lambda p: p[0] == ec.n_common, ("effectiveness", "specificity")),
                                 ("n_common", lambda p: p[1] == ec.n_specific, ("specificity",))):
        sub = [p for p in points if fixed_at(p)]
        for dim in dims:
            click.echo(f"spearman({vary}, {dim} AEM) = {spearman_trend(sub, vary, dim):.4f}")

    if check:
        failures = check_sweep_gates(points, ec.n_common, ec.n_specific)
        if failures:
            _fail(ctx, failures)
