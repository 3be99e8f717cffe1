"""HTTP/JSON surface over the control plane.

Thin handlers only: every mutation goes through the ControlPlane (which
serializes it and appends to the event log before the response leaves),
and every domain error maps onto a small, fixed status vocabulary —
400 for validation problems, 404 for unknown ids, 409 for wrong-state
requests.
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .. import qot
from ..errors import (
    BindFailure,
    DcxError,
    NotPending,
    UnknownFault,
    UnknownSite,
    UnknownTarget,
)
from ..netmodel import Topology, serialize_topology
from .store import ControlPlane

_NOT_FOUND = (UnknownSite, UnknownTarget, UnknownFault)
_CONFLICT = (NotPending,)


def _http(exc: DcxError) -> HTTPException:
    if isinstance(exc, _NOT_FOUND):
        status = 404
    elif isinstance(exc, _CONFLICT):
        status = 409
    else:
        status = 400
    return HTTPException(
        status_code=status, detail={"error": type(exc).__name__, "detail": str(exc)}
    )


class SessionRequest(BaseModel):
    site_a: str
    site_b: str
    policy: dict[str, Any] = Field(default_factory=dict)


class DecisionRequest(BaseModel):
    verdict: str
    reason: str = ""


class FaultRequest(BaseModel):
    link_id: str
    kind: str
    magnitude_db: float
    distance_km: float | None = None
    edfa_id: str | None = None
    id: str | None = None


class CalibrationRequest(BaseModel):
    link_id: str
    launch_dbm: float = 0.0


class OptimizationRequest(BaseModel):
    link_id: str
    calibration_id: str | None = None
    launch_dbm: float = 0.0


def create_app(plane: ControlPlane, chaos: bool = True) -> FastAPI:
    app = FastAPI(title="dcxtwin gateway", version="0.1.0")

    @app.get("/topology")
    def get_topology():
        return serialize_topology(plane.topology)

    @app.post("/sessions", status_code=201)
    def post_session(req: SessionRequest):
        try:
            outcome = plane.provision(
                req.site_a, req.site_b, auto_approve=bool(req.policy.get("auto_approve"))
            )
        except DcxError as exc:
            raise _http(exc) from exc
        return plane.session_view(outcome.session_id)

    @app.get("/sessions")
    def list_sessions(state: str | None = None):
        return {"sessions": plane.sessions_by_state(state)}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        if session_id not in plane.carrier_states:
            raise HTTPException(status_code=404, detail={"error": "UnknownTarget",
                                                         "detail": f"unknown session {session_id}"})
        view = plane.session_view(session_id)
        view["log"] = plane._log_entry_dicts(plane.session_logs.get(session_id, ()))
        return view

    @app.post("/sessions/{session_id}/decision")
    def post_decision(session_id: str, req: DecisionRequest):
        try:
            return plane.decide(session_id, req.verdict, req.reason)
        except DcxError as exc:
            raise _http(exc) from exc

    @app.get("/links/{link_id}/profile")
    def get_profile(
        link_id: str,
        launch_dbm: float = 0.0,
        resolution_km: float = 0.5,
        noise_sigma_db: float = 0.0,
    ):
        try:
            profile = plane.profile(
                link_id,
                launch_dbm=launch_dbm,
                resolution_km=resolution_km,
                noise_sigma_db=noise_sigma_db,
            )
        except DcxError as exc:
            raise _http(exc) from exc
        return {
            "link_id": link_id,
            "resolution_km": profile.resolution_km,
            "header": ["distance_km", "relative_power_db"],
            "rows": [[d, v] for d, v in profile.samples],
        }

    @app.get("/links/{link_id}/gsnr")
    def get_gsnr(link_id: str, launch_dbm: float = 0.0):
        try:
            result = plane.link_gsnr(link_id, launch_dbm)
        except DcxError as exc:
            raise _http(exc) from exc
        return {
            "link_id": link_id,
            "gsnr_db": [float(v) for v in result.gsnr_db],
            "per_edfa_gsnr_db": [
                {"edfa_id": eid, "gsnr_db": list(vals)}
                for eid, vals in result.per_edfa_gsnr_db
            ],
        }

    @app.post("/faults", status_code=201)
    def post_fault(req: FaultRequest):
        if not chaos:
            raise HTTPException(
                status_code=404,
                detail={"error": "ChaosDisabled",
                        "detail": "fault injection is disabled on this service"},
            )
        try:
            fault_id = plane.inject_fault(req.model_dump())
        except DcxError as exc:
            raise _http(exc) from exc
        return {"fault_id": fault_id}

    @app.delete("/faults/{fault_id}")
    def delete_fault(fault_id: str):
        try:
            plane.clear_fault(fault_id)
        except DcxError as exc:
            raise _http(exc) from exc
        return {"fault_id": fault_id, "cleared": True}

    @app.post("/calibrations", status_code=201)
    def post_calibration(req: CalibrationRequest):
        try:
            cid, _result = plane.calibrate(req.link_id, launch_dbm=req.launch_dbm)
        except DcxError as exc:
            raise _http(exc) from exc
        return {"calibration_id": cid, **plane._calibration_view(cid)}

    @app.get("/calibrations/{calibration_id}")
    def get_calibration(calibration_id: str):
        if calibration_id not in plane.calibrations:
            raise HTTPException(status_code=404, detail={"error": "UnknownTarget",
                                                         "detail": f"unknown calibration {calibration_id}"})
        return {"calibration_id": calibration_id, **plane._calibration_view(calibration_id)}

    @app.post("/optimizations", status_code=201)
    def post_optimization(req: OptimizationRequest):
        try:
            oid, setting = plane.optimize(
                req.link_id, calibration_id=req.calibration_id, launch_dbm=req.launch_dbm
            )
        except DcxError as exc:
            raise _http(exc) from exc
        return {
            "optimization_id": oid,
            "link_id": req.link_id,
            "settings": [[eid, gain, tilt] for eid, gain, tilt in setting.settings],
            "flatness_db": setting.flatness_db,
            "mean_gsnr_db": setting.mean_gsnr_db,
        }

    @app.get("/events")
    def get_events(since: int = 0):
        records = plane.events.since(since)
        return {
            "events": [r.to_dict() for r in records],
            "cursor": records[-1].seq if records else since,
        }

    return app


def serve_api(
    topology: Topology,
    host: str = "127.0.0.1",
    port: int = 8000,
    seed: int = 0,
    chaos: bool = True,
    log_path=None,
):
    """Run the service until interrupted; raises BindFailure if it cannot."""
    import uvicorn

    plane = ControlPlane(topology, seed=seed, log_path=log_path)
    app = create_app(plane, chaos=chaos)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
