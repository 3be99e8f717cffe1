"""Operational surface: HTTP/JSON API, event log, scenarios, plots, CLI."""

from .api import create_app, serve_api
from .events import EventLog, EventRecord, initial_state, replay_events
from .plots import PLOT_KINDS, emit_plot_data
from .scenarios import Scenario, load_scenario, run_scenario
from .store import ControlPlane

__all__ = [
    "ControlPlane",
    "EventLog",
    "EventRecord",
    "PLOT_KINDS",
    "Scenario",
    "create_app",
    "emit_plot_data",
    "initial_state",
    "load_scenario",
    "replay_events",
    "run_scenario",
    "serve_api",
]
