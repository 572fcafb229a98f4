import os
import sys
import warnings

import click

from editlab.config import ProjectConfig
from editlab.errors import ConfigError

WORKDIR_ENV_VAR = "EDITLAB_WORKDIR"


@click.group("editlab")
@click.option("--verbose", "-v", is_flag=True)
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              help="project YAML config, defaults are used for anything it leaves out")
@click.option("--workdir", envvar=WORKDIR_ENV_VAR, type=click.Path(file_okay=False),
              help=f"directory for checkpoint, benchmark, caches and reports [env {WORKDIR_ENV_VAR}]")
@click.pass_context
def cli(ctx, verbose, config_file, workdir):
    """Model editing lab command line interface.
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose

    try:
        if config_file is not None:
            config = ProjectConfig.load(config_file, workdir=workdir)
        else:
            config = ProjectConfig(workdir=workdir)
    except ConfigError as exc:
        sys.stderr.write(f"editlab: {exc}\n")
        ctx.exit(1)
    ctx.obj["config"] = config
    ctx.obj["config_file"] = os.fspath(config_file) if config_file is not None else None

    if not verbose:
        warnings.filterwarnings("ignore", category=RuntimeWarning, module="scipy.stats")


from editlab.cli.commands.train import train
cli.add_command(train)

from editlab.cli.commands.bench import bench
cli.add_command(bench)

from editlab.cli.commands.layers import layers
cli.add_command(layers)

from editlab.cli.commands.run import run, sweep
cli.add_command(run)
cli.add_command(sweep)
