from __future__ import annotations

from contextlib import contextmanager

import click

from app import database
from app.align.run_store import get_run, list_runs
from app.commands.common import echo_json
from app.constants import EXIT_DATA_ERROR

registry_session = contextmanager(database.get_db)


@click.group("runs")
def runs_group() -> None:
    """Inspect the training-run registry."""


@runs_group.command("list")
@click.option("--limit", type=int, default=50, show_default=True, help="Newest runs shown.")
def list_command(limit: int) -> None:
    database.init_db()
    with registry_session() as db:
        echo_json(list_runs(db, limit=limit))


@runs_group.command("show")
@click.argument("run_id", type=int)
def show_command(run_id: int) -> None:
    database.init_db()
    with registry_session() as db:
        run = get_run(db, run_id)
    if run is None:
        click.echo(f"data error: run {run_id} not found", err=True)
        click.get_current_context().exit(EXIT_DATA_ERROR)
    echo_json(run)
