# app/main.py
from __future__ import annotations

import logging
import sys

import click
from pydantic import ValidationError

from app import __version__
from app.config import LOG_LEVEL
from app.align.errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DivergenceError,
    NonFiniteError,
)
from app.align.schemas import validation_message
from app.commands import evaluate, runs, sweep, synthetic, train
from app.constants import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_DIVERGENCE


class AlignmentCLI(click.Group):
    """Root group; turns engine errors into exit codes 2 (config), 3 (data), 4 (divergence)."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ConfigError as exc:
            _fail(ctx, EXIT_CONFIG_ERROR, f"config error: {exc}")
        except ValidationError as exc:
            _fail(ctx, EXIT_CONFIG_ERROR, f"config error: {validation_message(exc)}")
        except (DataFormatError, CheckpointError, FileNotFoundError) as exc:
            _fail(ctx, EXIT_DATA_ERROR, f"data error: {exc}")
        except (DivergenceError, NonFiniteError) as exc:
            _fail(ctx, EXIT_DIVERGENCE, f"divergence: {exc}")


def _fail(ctx: click.Context, code: int, message: str) -> None:
    click.echo(message, err=True)
    ctx.exit(code)


@click.group(cls=AlignmentCLI)
@click.version_option(__version__, prog_name="seg-align")
@click.option(
    "--log-level",
    default=LOG_LEVEL,
    show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    help="Logging level (logs go to stderr).",
)
def cli(log_level: str) -> None:
    """Knowledge-graph entity alignment: train, evaluate, generate synthetic pairs."""
    logging.basicConfig(
        level=log_level.upper(),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


cli.add_command(train.train_command)
cli.add_command(evaluate.eval_command)
cli.add_command(synthetic.gen_synthetic_command)
cli.add_command(sweep.sweep_command)
cli.add_command(runs.runs_group)


def main() -> None:
    cli(prog_name="seg-align")


if __name__ == "__main__":
    main()
