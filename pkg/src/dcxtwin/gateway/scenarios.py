"""Deterministic scenario runner.

A scenario is a YAML document: name, topology file, mandatory seed, and
an ordered list of single-verb steps. Running one builds a fresh control
plane (seeded; DCX_SEED overrides), executes the steps, and writes three
artifact groups into the output directory: the event log (JSONL), any
plot tables, and a summary.json of per-step results. Identical inputs and
seed produce byte-identical artifacts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .. import monitor
from ..errors import DcxError, ParseError, StepFailure, ValidationError
from ..linetwin import PowerProfile
from ..netmodel import load_topology
from ..protocol import canonical_json
from .plots import emit_plot_data
from .store import ControlPlane

STEP_VERBS = (
    "provision",
    "inject_fault",
    "clear_fault",
    "snapshot_profile",
    "localize",
    "calibrate",
    "optimize",
    "decide",
    "plot",
    "assert",
)


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: Path
    seed: int
    steps: tuple[Mapping[str, Any], ...]


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ValidationError(f"{path}: scenario must be a mapping")
    for key in ("name", "topology", "seed", "steps"):
        if key not in doc:
            raise ValidationError(f"{path}: scenario is missing {key!r}")
    steps = []
    for i, step in enumerate(doc["steps"]):
        if not isinstance(step, Mapping) or len(step) != 1:
            raise ValidationError(f"{path}: step {i + 1} must have exactly one verb")
        verb = next(iter(step))
        if verb not in STEP_VERBS:
            raise ValidationError(f"{path}: step {i + 1} has unknown verb {verb!r}")
        params = step[verb] or {}
        if not isinstance(params, Mapping):
            raise ValidationError(f"{path}: step {i + 1} params must be a mapping")
        steps.append({verb: dict(params)})
    return Scenario(
        name=str(doc["name"]),
        topology=(path.parent / str(doc["topology"])).resolve(),
        seed=int(doc["seed"]),
        steps=tuple(steps),
    )


class _Runner:
    def __init__(self, plane: ControlPlane, out_dir: Path, summary: dict):
        self.plane = plane
        self.out_dir = out_dir
        self.summary = summary
        self.profiles: dict[str, PowerProfile] = {}

    # each step method takes its params and returns a JSON-able result dict

    def step_provision(self, p: Mapping) -> dict:
        outcome = self.plane.provision(
            str(p["site_a"]), str(p["site_b"]), auto_approve=bool(p.get("auto_approve"))
        )
        return self.plane.session_view(outcome.session_id)

    def step_inject_fault(self, p: Mapping) -> dict:
        fault_id = self.plane.inject_fault(p)
        return {"fault_id": fault_id}

    def step_clear_fault(self, p: Mapping) -> dict:
        self.plane.clear_fault(str(p["id"]))
        return {"fault_id": str(p["id"]), "cleared": True}

    def step_snapshot_profile(self, p: Mapping) -> dict:
        name = str(p["name"])
        profile = self.plane.profile(
            str(p["link_id"]),
            launch_dbm=float(p.get("launch_dbm", 0.0)),
            resolution_km=float(p.get("resolution_km", 0.5)),
            noise_sigma_db=float(p.get("noise_sigma_db", 0.0)),
        )
        self.profiles[name] = profile
        return {"name": name, "samples": len(profile.samples)}

    def step_localize(self, p: Mapping) -> dict:
        for key in ("baseline", "current"):
            if str(p[key]) not in self.profiles:
                raise ValidationError(f"no snapshot named {p[key]!r}")
        events = monitor.localize_step_loss(
            self.profiles[str(p["baseline"])],
            self.profiles[str(p["current"])],
            float(p.get("min_step_db", 1.0)),
        )
        return {
            "events": [
                {
                    "distance_km": e.distance_km,
                    "magnitude_db": e.magnitude_db,
                    "confidence": e.confidence,
                }
                for e in events
            ]
        }

    def step_calibrate(self, p: Mapping) -> dict:
        cid, _ = self.plane.calibrate(
            str(p["link_id"]), launch_dbm=float(p.get("launch_dbm", 0.0))
        )
        return {"calibration_id": cid, **self.plane._calibration_view(cid)}

    def step_optimize(self, p: Mapping) -> dict:
        oid, setting = self.plane.optimize(
            str(p["link_id"]),
            calibration_id=p.get("calibration_id"),
            launch_dbm=float(p.get("launch_dbm", 0.0)),
        )
        return {
            "optimization_id": oid,
            "settings": [[eid, gain, tilt] for eid, gain, tilt in setting.settings],
            "flatness_db": setting.flatness_db,
            "mean_gsnr_db": setting.mean_gsnr_db,
        }

    def step_decide(self, p: Mapping) -> dict:
        session_id = str(p.get("session_id") or "last")
        if session_id == "last":
            if self.plane.last_session_id is None:
                raise ValidationError("no session to decide on")
            session_id = self.plane.last_session_id
        return self.plane.decide(
            session_id, str(p["verdict"]), str(p.get("reason", ""))
        )

    def step_plot(self, p: Mapping) -> dict:
        out = self.out_dir / str(p["out"])
        path = emit_plot_data(
            self.plane,
            str(p["kind"]),
            str(p["target"]),
            out,
            launch_dbm=float(p.get("launch_dbm", 0.0)),
            modulation=str(p.get("modulation", "16QAM")),
        )
        rows = len(path.read_text().splitlines()) - 1
        return {"file": path.name, "rows": rows}

    def step_assert(self, p: Mapping) -> dict:
        value = _resolve(self.summary, str(p["path"]))
        if "equals" in p:
            ok = value == p["equals"]
            expect = p["equals"]
        elif "approx" in p:
            tol = float(p.get("tol", 1e-6))
            ok = abs(float(value) - float(p["approx"])) <= tol
            expect = p["approx"]
        else:
            raise ValidationError("assert step needs 'equals' or 'approx'")
        if not ok:
            raise StepFailure(
                f"assertion failed: {p['path']} = {value!r}, expected {expect!r}"
            )
        return {"path": str(p["path"]), "value": value, "ok": True}


def _resolve(root: Any, dotted: str) -> Any:
    node = root
    for part in dotted.split("."):
        if isinstance(node, Mapping):
            if part not in node:
                raise StepFailure(f"assertion path {dotted!r}: no key {part!r}")
            node = node[part]
        elif isinstance(node, (list, tuple)):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise StepFailure(f"assertion path {dotted!r}: bad index {part!r}") from exc
        else:
            raise StepFailure(f"assertion path {dotted!r}: cannot descend into {part!r}")
    return node


def run_scenario(scenario: Scenario | str | Path, out_dir: str | Path) -> dict:
    """Execute a scenario, writing events.jsonl, plots, and summary.json."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    seed = int(os.environ.get("DCX_SEED", scenario.seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plane = ControlPlane(
        load_topology(scenario.topology), seed=seed, log_path=out / "events.jsonl"
    )
    summary: dict[str, Any] = {"name": scenario.name, "seed": seed, "steps": []}
    runner = _Runner(plane, out, summary)
    for i, step in enumerate(scenario.steps, start=1):
        verb = next(iter(step))
        handler: Callable = getattr(runner, f"step_{verb}")
        try:
            result = handler(step[verb])
        except StepFailure:
            raise
        except DcxError as exc:
            raise StepFailure(
                f"step {i} ({verb}): {type(exc).__name__}: {exc}"
            ) from exc
        summary["steps"].append({"step": i, "verb": verb, "result": result})
    (out / "summary.json").write_text(canonical_json(summary) + "\n")
    return summary
