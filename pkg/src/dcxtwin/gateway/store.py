"""Single-writer coordinator over the twins, sessions, and event log.

One ControlPlane instance owns every mutable thing the service exposes:
the per-link line twins, the shared provisioning context (spectrum
occupancy, device configs), calibration results, and the append-only
event log. All mutations run under one lock and append an event before
returning, so concurrent API handlers serialize cleanly and the log is
always a faithful, replayable history.
"""

from __future__ import annotations

import threading
from typing import Mapping, Sequence

import numpy as np

from .. import monitor, protocol, qot
from ..errors import UnknownFault, UnknownTarget, ValidationError
from ..linetwin import FaultSpec, LineTwin, PowerProfile, TelemetrySnapshot
from ..netmodel import Topology
from .events import EventLog, EventRecord


def _twin_seed(seed: int, index: int) -> int:
    return seed * 1009 + index


class ControlPlane:
    def __init__(self, topology: Topology, seed: int = 0, log_path=None):
        self.topology = topology
        self.seed = int(seed)
        self.lock = threading.RLock()
        self.events = EventLog(log_path)
        self.twins: dict[str, LineTwin] = {
            link_id: LineTwin(topology.links[link_id], topology.grid, seed=_twin_seed(self.seed, i))
            for i, link_id in enumerate(sorted(topology.links))
        }
        self.ctx = protocol.ProvisioningContext.for_topology(topology, probe=self._probe)
        self.carrier_states: dict[str, protocol.SessionState] = {}
        self.user_states: dict[str, protocol.SessionState] = {}
        self.session_logs: dict[str, tuple[protocol.SessionLogEntry, ...]] = {}
        self.calibrations: dict[str, monitor.CalibrationResult] = {}
        self._calibration_links: dict[str, str] = {}
        self.optimizations: dict[str, monitor.GainTiltSetting] = {}
        self.last_session_id: str | None = None
        self._calibration_count = 0
        self._optimization_count = 0
        self._fault_count = 0

    # -- probing hook ------------------------------------------------------

    def _probe(self, segment_id: str, link_id: str, launch_dbm: float) -> float:
        """Worst-channel line GSNR the probe observes on one segment."""
        twin = self._twin(link_id)
        state = twin.propagate(launch_dbm)
        return float(np.min(10.0 * np.log10(state.gsnr())))

    def _twin(self, link_id: str) -> LineTwin:
        if link_id not in self.twins:
            raise UnknownTarget(f"unknown link {link_id}")
        return self.twins[link_id]

    # -- state snapshot and event plumbing ----------------------------------

    def snapshot_state(self) -> dict:
        faults = {}
        settings = {}
        for link_id in sorted(self.twins):
            twin = self.twins[link_id]
            for f in twin.active_faults():
                faults[f.id] = {
                    "id": f.id,
                    "kind": f.kind,
                    "magnitude_db": f.magnitude_db,
                    "link_id": f.link_id,
                    "distance_km": f.distance_km,
                    "edfa_id": f.edfa_id,
                }
            settings[link_id] = {
                eid: [gain, tilt] for eid, (gain, tilt) in sorted(twin.settings().items())
            }
        return {
            "occupancy": {
                lid: sorted(chs) for lid, chs in sorted(self.ctx.occupancy.items())
            },
            "sessions": {
                sid: self.session_view(sid) for sid in sorted(self.carrier_states)
            },
            "faults": faults,
            "settings": settings,
            "calibrations": {
                cid: self._calibration_view(cid) for cid in sorted(self.calibrations)
            },
            "devices": {
                tid: dict(dev.config) for tid, dev in sorted(self.ctx.devices.items())
            },
        }

    def _full_effects(self) -> list[dict]:
        snap = self.snapshot_state()
        return [{"path": [key], "value": snap[key]} for key in sorted(snap)]

    def _append(self, kind: str, payload: Mapping) -> EventRecord:
        return self.events.append(kind, payload, self._full_effects())

    # -- sessions ------------------------------------------------------------

    def session_view(self, session_id: str) -> dict:
        carrier = self.carrier_states[session_id]
        data = carrier.data
        route = data.get("route")
        assignment = data.get("assignment")
        e2e = data.get("e2e_gsnr")
        return {
            "session_id": session_id,
            "state": carrier.state,
            "pending": carrier.state == protocol.PENDING_APPROVAL,
            "route_id": route.id if route is not None else None,
            "mode_id": data.get("mode_id"),
            "channel_index": assignment.channel_index if assignment is not None else None,
            "gsnr_db": qot.lin_to_db(e2e) if e2e else None,
            "error": data.get("error"),
            "decision": data.get("decision"),
        }

    def _log_entry_dicts(
        self, entries: Sequence[protocol.SessionLogEntry]
    ) -> list[dict]:
        return [
            {
                "seq": e.seq,
                "timestamp": e.timestamp,
                "direction": e.direction,
                "kind": e.message.kind,
                "session_id": e.message.session_id,
                "payload": e.message.payload,
                "resulting_state": e.resulting_state,
            }
            for e in entries
        ]

    def provision(
        self, site_a: str, site_b: str, auto_approve: bool = False
    ) -> protocol.ProvisioningOutcome:
        with self.lock:
            policy = protocol.ProvisioningPolicy(auto_approve=bool(auto_approve))
            outcome = protocol.run_provisioning(self.ctx, site_a, site_b, policy)
            sid = outcome.session_id
            self.carrier_states[sid] = outcome.carrier_state
            self.user_states[sid] = outcome.user_state
            self.session_logs[sid] = outcome.log
            self.last_session_id = sid
            payload = {
                "session_id": sid,
                "terminal": outcome.terminal_state,
                "session": self.session_view(sid),
                "log": self._log_entry_dicts(outcome.log),
            }
            self._append("session", payload)
            return outcome

    def decide(self, session_id: str, verdict: str, reason: str = "") -> dict:
        with self.lock:
            if session_id not in self.carrier_states:
                raise UnknownTarget(f"unknown session {session_id}")
            carrier = self.carrier_states[session_id]
            carrier, msgs = protocol.apply_decision(carrier, verdict, self.ctx, reason)
            self.carrier_states[session_id] = carrier
            user = self.user_states.get(session_id)
            if user is not None:
                for m in msgs:
                    user, _ = protocol.user_agent_step(user, m, self.ctx)
                self.user_states[session_id] = user
            payload = {
                "session_id": session_id,
                "verdict": verdict,
                "reason": reason,
                "session": self.session_view(session_id),
            }
            self._append("decision", payload)
            return self.session_view(session_id)

    def sessions_by_state(self, state: str | None = None) -> list[dict]:
        views = [self.session_view(sid) for sid in sorted(self.carrier_states)]
        if state is None:
            return views
        if state.lower() == "pending":
            return [v for v in views if v["pending"]]
        return [v for v in views if v["state"].lower() == state.lower()]

    # -- faults --------------------------------------------------------------

    def inject_fault(self, spec: Mapping) -> str:
        with self.lock:
            link_id = spec.get("link_id")
            if not link_id:
                raise ValidationError("fault spec needs a link_id")
            twin = self._twin(str(link_id))
            self._fault_count += 1
            fault_id = str(spec.get("id") or f"fault-{self._fault_count:04d}")
            fault = FaultSpec(
                id=fault_id,
                kind=str(spec.get("kind", "")),
                magnitude_db=float(spec.get("magnitude_db", 0.0)),
                link_id=str(link_id),
                distance_km=(
                    float(spec["distance_km"]) if spec.get("distance_km") is not None else None
                ),
                edfa_id=(str(spec["edfa_id"]) if spec.get("edfa_id") else None),
            )
            twin.set_fault(fault)
            payload = {"op": "inject", "fault_id": fault_id, "link_id": link_id,
                       "kind": fault.kind, "magnitude_db": fault.magnitude_db,
                       "distance_km": fault.distance_km, "edfa_id": fault.edfa_id}
            self._append("fault", payload)
            return fault_id

    def clear_fault(self, fault_id: str) -> None:
        with self.lock:
            for twin in self.twins.values():
                if any(f.id == fault_id for f in twin.active_faults()):
                    twin.clear_fault(fault_id)
                    self._append("fault", {"op": "clear", "fault_id": fault_id})
                    return
            raise UnknownFault(f"no active fault {fault_id}")

    # -- observations ----------------------------------------------------------

    def profile(
        self,
        link_id: str,
        launch_dbm: float = 0.0,
        resolution_km: float = 0.5,
        noise_sigma_db: float = 0.0,
        channel_index: int | None = None,
    ) -> PowerProfile:
        with self.lock:
            twin = self._twin(link_id)
            return twin.profile(
                launch_dbm,
                resolution_km=resolution_km,
                noise_sigma_db=noise_sigma_db,
                channel_index=channel_index,
            )

    def link_gsnr(self, link_id: str, launch_dbm: float = 0.0) -> qot.LinkQot:
        with self.lock:
            twin = self._twin(link_id)
            return qot.link_gsnr(twin.effective_link(), self.topology.grid, launch_dbm)

    def measure_roundtrip(self, link_id: str, processing_offset_us: float = 0.0) -> float:
        return self._twin(link_id).measure_roundtrip(processing_offset_us)

    # -- calibration and optimization -------------------------------------------

    def _operating_points(self, twin: LineTwin, launch_dbm: float) -> list[TelemetrySnapshot]:
        """Telemetry at max(2, #EDFAs) distinct, safely perturbed setpoints."""
        base = twin.settings()
        edfa_ids = sorted(base)
        n_ops = max(2, len(edfa_ids))
        snapshots = []
        try:
            snapshots.append(twin.telemetry(launch_dbm, "op-0"))
            for i in range(1, n_ops):
                eid = edfa_ids[(i - 1) % len(edfa_ids)]
                unit = next(e for e in twin.effective_link().edfas if e.id == eid)
                gain, _tilt = base[eid]
                delta = 1.0 if gain + 1.0 <= unit.gain_range_db[1] else -1.0
                twin.set_gain(eid, gain + delta)
                snapshots.append(twin.telemetry(launch_dbm, f"op-{i}"))
                twin.set_gain(eid, gain)
        finally:
            for eid, (gain, tilt) in base.items():
                twin.set_gain(eid, gain)
                twin.set_tilt(eid, tilt)
        return snapshots

    def calibrate(self, link_id: str, launch_dbm: float = 0.0) -> tuple[str, monitor.CalibrationResult]:
        with self.lock:
            twin = self._twin(link_id)
            snapshots = self._operating_points(twin, launch_dbm)
            result = monitor.calibrate_line(
                snapshots, twin.effective_link(), self.topology.grid
            )
            self._calibration_count += 1
            cid = f"cal-{self._calibration_count:04d}"
            self.calibrations[cid] = result
            self._calibration_links[cid] = link_id
            payload = {"calibration_id": cid, **self._calibration_view(cid)}
            self._append("calibration", payload)
            return cid, result

    def _calibration_view(self, cid: str) -> dict:
        result = self.calibrations[cid]
        return {
            "link_id": self._calibration_links.get(cid),
            "edfa_ids": list(result.edfa_ids),
            "nf_db": [round(v, 9) for v in result.nf_db],
            "span_losses_db": [round(v, 9) for v in result.span_losses_db],
            "residual_norm": result.residual_norm,
            "identifiability": list(result.identifiability),
        }

    def optimize(
        self,
        link_id: str,
        calibration_id: str | None = None,
        launch_dbm: float = 0.0,
    ) -> tuple[str, monitor.GainTiltSetting]:
        with self.lock:
            twin = self._twin(link_id)
            planning = twin.effective_link()
            if calibration_id is not None:
                if calibration_id not in self.calibrations:
                    raise UnknownTarget(f"unknown calibration {calibration_id}")
                planning = monitor.apply_calibration(
                    planning, self.calibrations[calibration_id]
                )
            setting = monitor.optimize_gain_tilt(planning, self.topology.grid, launch_dbm)
            for eid, gain, tilt in setting.settings:
                twin.set_gain(eid, gain)
                twin.set_tilt(eid, tilt)
            self._optimization_count += 1
            oid = f"opt-{self._optimization_count:04d}"
            self.optimizations[oid] = setting
            payload = {
                "optimization_id": oid,
                "link_id": link_id,
                "settings": [[eid, gain, tilt] for eid, gain, tilt in setting.settings],
                "flatness_db": setting.flatness_db,
                "mean_gsnr_db": setting.mean_gsnr_db,
                "objective": setting.objective,
            }
            self._append("settings", payload)
            return oid, setting
