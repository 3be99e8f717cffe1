"""Command-line entry points for the twin service and offline tooling."""

from __future__ import annotations

import json
import os
from pathlib import Path

import click

from ..errors import DcxError
from ..netmodel import load_topology
from ..protocol import canonical_json
from .api import create_app, serve_api
from .events import replay_events
from .plots import PLOT_KINDS, emit_plot_data
from .scenarios import run_scenario
from .store import ControlPlane


def _seed(value: int) -> int:
    return int(os.environ.get("DCX_SEED", value))


@click.group()
def main():
    """Digital-twin control plane for DCX optical paths."""


@main.command()
@click.option("--topology", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--no-chaos", is_flag=True, help="Disable fault-injection endpoints.")
@click.option("--log", "log_path", default=None, type=click.Path(dir_okay=False))
def serve(topology, host, port, seed, no_chaos, log_path):
    """Serve the HTTP/JSON gateway over one topology."""
    try:
        serve_api(
            load_topology(topology),
            host=host,
            port=port,
            seed=_seed(seed),
            chaos=not no_chaos,
            log_path=log_path,
        )
    except DcxError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc


@main.command("run-scenario")
@click.argument("scenario", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def run_scenario_cmd(scenario, out):
    """Run a scenario file; write events, plots, and a summary."""
    try:
        summary = run_scenario(scenario, out)
    except DcxError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    click.echo(canonical_json({"name": summary["name"], "steps": len(summary["steps"])}))


@main.command()
@click.argument("site_a")
@click.argument("site_b")
@click.option("--topology", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--auto-approve", is_flag=True)
@click.option("--seed", default=0, show_default=True, type=int)
def provision(site_a, site_b, topology, auto_approve, seed):
    """Provision a path between two user sites and print the outcome."""
    try:
        plane = ControlPlane(load_topology(topology), seed=_seed(seed))
        outcome = plane.provision(site_a, site_b, auto_approve=auto_approve)
    except DcxError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    click.echo(canonical_json(plane.session_view(outcome.session_id)))


@main.command()
@click.argument("kind", type=click.Choice(PLOT_KINDS))
@click.argument("target")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--topology", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--launch-dbm", default=0.0, show_default=True, type=float)
def plot(kind, target, out, topology, seed, launch_dbm):
    """Emit one plot table for a link (or calibration) to a CSV file."""
    try:
        plane = ControlPlane(load_topology(topology), seed=_seed(seed))
        path = emit_plot_data(plane, kind, target, out, launch_dbm=launch_dbm)
    except DcxError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    click.echo(str(path))


@main.command()
@click.argument("log", type=click.Path(exists=True, dir_okay=False))
def replay(log):
    """Replay an event log and print the reconstructed state."""
    try:
        state = replay_events(log)
    except DcxError as exc:
        raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    click.echo(canonical_json(state))


__all__ = ["main", "create_app"]
