"""Collaborative provisioning between a user agent and the carrier.

Two deterministic state machines exchange typed messages over an ordered
duplex channel: the user agent registers its transceivers, advertises
capabilities, cooperates in per-segment probing, and applies the final
configuration; the carrier authenticates, enumerates a route, deduces
per-segment line quality from probe measurements, selects a mode, and
tentatively assigns spectrum. A human (or auto-approve policy) then
commits or rolls back. Nothing shared is mutated before commit: spectrum
is claimed only on approval, and rollback restores the exact pre-session
device configuration bytes.

Both step functions are pure in the sense that the same (state, message,
context) always yields the same (state, outputs); the driver and the
event log exploit this for deterministic replay.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from . import modes as modes_mod
from . import qot, routing
from .errors import (
    DcxError,
    NoInteroperableMode,
    NotPending,
    ProtocolViolation,
    UnknownSite,
    ValidationError,
)
from .netmodel import USER_SITE_KINDS, LinkKind, Topology

MESSAGE_KINDS = (
    "RegisterTrx",
    "AuthResult",
    "CatalogRequest",
    "CatalogAdvert",
    "PathRequest",
    "ProbeRequest",
    "ProbeResult",
    "ModeProposal",
    "ConfigureTrx",
    "ConfigureAck",
    "CommitRequest",
    "Decision",
    "Error",
)

IDLE = "Idle"
REGISTERING = "Registering"
AUTHENTICATED = "Authenticated"
CATALOG_EXCHANGED = "CatalogExchanged"
PROBING = "Probing"
QOT_ESTIMATED = "QotEstimated"
MODE_SELECTED = "ModeSelected"
CONFIGURED = "Configured"
PENDING_APPROVAL = "PendingApproval"
COMMITTED = "Committed"
ROLLED_BACK = "RolledBack"
ERRORED = "Errored"

STATES = (
    IDLE,
    REGISTERING,
    AUTHENTICATED,
    CATALOG_EXCHANGED,
    PROBING,
    QOT_ESTIMATED,
    MODE_SELECTED,
    CONFIGURED,
    PENDING_APPROVAL,
    COMMITTED,
    ROLLED_BACK,
    ERRORED,
)

TERMINAL_STATES = frozenset({COMMITTED, ROLLED_BACK, ERRORED})
#: States the carrier leaves on its own, without waiting for a message.
AUTONOMOUS_STATES = frozenset({QOT_ESTIMATED, CONFIGURED})

VERDICTS = ("approve", "rollback")

USER_TO_CARRIER = "user->carrier"
CARRIER_TO_USER = "carrier->user"
USER_TO_DEVICE = "user->device"
CARRIER_TO_APPROVER = "carrier->approver"
APPROVER_TO_USER = "approver->user"


def canonical_json(payload) -> str:
    """One stable text rendering per value; used for snapshots and logs."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ProtocolMessage:
    kind: str
    session_id: str
    payload: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MESSAGE_KINDS:
            raise ValidationError(f"unknown message kind {self.kind!r}")

    def to_json(self) -> str:
        return canonical_json(
            {"kind": self.kind, "session_id": self.session_id, "payload": self.payload}
        )


@dataclass(frozen=True)
class SessionLogEntry:
    seq: int
    timestamp: int
    direction: str
    message: ProtocolMessage
    resulting_state: str


@dataclass(frozen=True)
class SessionState:
    session_id: str
    role: str  # "user" | "carrier"
    state: str = IDLE
    data: Mapping[str, object] = field(default_factory=dict)


def _advance(s: SessionState, state: str, **updates) -> SessionState:
    data = dict(s.data)
    data.update(updates)
    return replace(s, state=state, data=data)


def _msg(kind: str, session_id: str, **payload) -> ProtocolMessage:
    return ProtocolMessage(kind=kind, session_id=session_id, payload=payload)


def _errored(
    s: SessionState, code: str, detail: str, emit_error: bool = True
) -> tuple[SessionState, list[ProtocolMessage]]:
    out = (
        [_msg("Error", s.session_id, code=code, detail=detail)] if emit_error else []
    )
    return _advance(s, ERRORED, error={"code": code, "detail": detail}), out


class TrxDevice:
    """Mutable configuration store standing in for one real transceiver."""

    _FIELDS = ("mode_id", "channel_index", "route_id", "launch_dbm", "session_id")

    def __init__(self, trx_id: str):
        self.trx_id = trx_id
        self.config: dict[str, object] = {name: None for name in self._FIELDS}

    def serialize_config(self) -> str:
        return canonical_json(self.config)

    def apply(self, updates: Mapping[str, object]) -> None:
        unknown = set(updates) - set(self._FIELDS)
        if unknown:
            raise ValidationError(
                f"device {self.trx_id}: unknown config keys {sorted(unknown)}"
            )
        self.config.update(updates)

    def restore(self, snapshot: str) -> None:
        self.config = json.loads(snapshot)


@dataclass(frozen=True)
class ProvisioningPolicy:
    auto_approve: bool = False
    margin_db: float = 1.0
    launch_dbm: float = 0.0


@dataclass
class ProvisioningContext:
    """Everything both machines may consult; single shared coordinator.

    ``segment_gsnr_db_overrides`` lets tests and what-if runs pin the line
    GSNR the probe would observe on a segment; otherwise ``probe`` is
    called, and failing that the forward model evaluates the actual link.
    """

    topology: Topology
    policy: ProvisioningPolicy = field(default_factory=ProvisioningPolicy)
    occupancy: dict[str, set[int]] = field(default_factory=dict)
    devices: dict[str, TrxDevice] = field(default_factory=dict)
    probe: Callable[[str, str, float], float] | None = None
    segment_gsnr_db_overrides: dict[str, float] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _seq: "itertools.count[int]" = field(
        default_factory=lambda: itertools.count(1), repr=False
    )
    _session_count: "itertools.count[int]" = field(
        default_factory=lambda: itertools.count(1), repr=False
    )

    @classmethod
    def for_topology(
        cls, topology: Topology, policy: ProvisioningPolicy | None = None, **kw
    ) -> "ProvisioningContext":
        occupancy = {
            l.id: set() for l in topology.links.values() if l.kind is LinkKind.CARRIER
        }
        devices = {tid: TrxDevice(tid) for tid in topology.trxs}
        return cls(
            topology=topology,
            policy=policy or ProvisioningPolicy(),
            occupancy=occupancy,
            devices=devices,
            **kw,
        )

    def next_seq(self) -> int:
        return next(self._seq)

    def new_session_id(self) -> str:
        return f"sess-{next(self._session_count):04d}"

    def segment_gsnr_db(self, segment_id: str, link_id: str, launch_dbm: float) -> float:
        if segment_id in self.segment_gsnr_db_overrides:
            return self.segment_gsnr_db_overrides[segment_id]
        if self.probe is not None:
            return self.probe(segment_id, link_id, launch_dbm)
        link = self.topology.links[link_id]
        # a probe reports one number; the worst channel bounds the route
        return float(min(qot.link_gsnr(link, self.topology.grid, launch_dbm).gsnr_db))


# ---------------------------------------------------------------------------
# Payload (de)serialization for catalogs and noise models


def _mode_payload(m: modes_mod.TrxMode) -> dict:
    return {
        "id": m.id,
        "bitrate_gbps": m.bitrate_gbps,
        "modulation": m.modulation,
        "symbol_rate_gbaud": m.symbol_rate_gbaud,
        "fec": m.fec,
        "fec_threshold_ber": m.fec_threshold_ber,
        "min_rx_dbm": m.min_rx_dbm,
        "max_rx_dbm": m.max_rx_dbm,
    }


def _catalog_payload(c: modes_mod.ModeCatalog) -> dict:
    return {
        "trx_id": c.trx_id,
        "probe_mode_id": c.probe_mode_id,
        "modes": [_mode_payload(m) for m in c.modes],
    }


def _catalog_from_payload(d: Mapping) -> modes_mod.ModeCatalog:
    return modes_mod.ModeCatalog(
        trx_id=str(d["trx_id"]),
        modes=tuple(modes_mod.TrxMode(**m) for m in d["modes"]),
        probe_mode_id=str(d["probe_mode_id"]),
    )


def _noise_payload(nm: qot.TrxNoiseModel) -> dict:
    # None encodes "term disabled" (infinite SNR) to stay strict-JSON safe
    return {
        "snr_trx_const": None if math.isinf(nm.snr_trx_const) else nm.snr_trx_const,
        "snr_p_coeff": None if math.isinf(nm.snr_p_coeff) else nm.snr_p_coeff,
    }


def _noise_from_payload(d: Mapping) -> qot.TrxNoiseModel:
    const = d.get("snr_trx_const")
    coeff = d.get("snr_p_coeff")
    return qot.TrxNoiseModel(
        snr_trx_const=float("inf") if const is None else float(const),
        snr_p_coeff=float("inf") if coeff is None else float(coeff),
    )


# ---------------------------------------------------------------------------
# Session construction


def start_user_session(
    ctx: ProvisioningContext, session_id: str, site_a: str, site_b: str
) -> SessionState:
    """Bind the user agent to its two endpoint transceivers."""
    t = ctx.topology
    for sid in (site_a, site_b):
        if sid not in t.sites:
            raise UnknownSite(f"unknown site {sid}")
        if t.sites[sid].kind not in USER_SITE_KINDS:
            raise ValidationError(f"site {sid} is not a user data center")
    if site_a == site_b:
        raise ValidationError("a path needs two distinct endpoints")
    trx_pair = []
    for sid in (site_a, site_b):
        units = t.trx_units_at(sid)
        if not units:
            raise ValidationError(f"site {sid} has no transceiver to provision")
        trx_pair.append(units[0])
    trx_a, trx_b = trx_pair
    snapshots = {
        u.id: ctx.devices[u.id].serialize_config() for u in (trx_a, trx_b)
    }
    data = {
        "site_a": site_a,
        "site_b": site_b,
        "trx_a": trx_a.id,
        "trx_b": trx_b.id,
        "serials": (trx_a.serial, trx_b.serial),
        "snapshots": snapshots,
    }
    return SessionState(session_id=session_id, role="user", state=IDLE, data=data)


def start_carrier_session(session_id: str) -> SessionState:
    return SessionState(session_id=session_id, role="carrier", state=IDLE)


# ---------------------------------------------------------------------------
# User agent


def user_agent_step(
    s: SessionState, inbound: ProtocolMessage | None, ctx: ProvisioningContext
) -> tuple[SessionState, list[ProtocolMessage]]:
    """Advance the user machine by one event (``None`` = session start)."""
    if s.state in TERMINAL_STATES:
        return s, []
    sid = s.session_id
    t = ctx.topology

    if inbound is None:
        if s.state == IDLE:
            out = _msg(
                "RegisterTrx",
                sid,
                serials=list(s.data["serials"]),
                trx_ids=[s.data["trx_a"], s.data["trx_b"]],
            )
            return _advance(s, REGISTERING), [out]
        return _errored(s, "ProtocolViolation", f"no start event valid in {s.state}")

    kind = inbound.kind
    payload = inbound.payload

    if kind == "Error":
        return (
            _advance(s, ERRORED, error=dict(payload)),
            [],
        )

    if s.state == REGISTERING and kind == "AuthResult":
        if not payload.get("ok"):
            return _advance(
                s, ERRORED, error={"code": "AuthFailed", "detail": payload.get("detail", "")}
            ), []
        out = _msg(
            "PathRequest", sid, site_a=s.data["site_a"], site_b=s.data["site_b"]
        )
        return _advance(s, AUTHENTICATED), [out]

    if s.state == AUTHENTICATED and kind == "CatalogRequest":
        catalogs = {}
        noise_models = {}
        for key in ("trx_a", "trx_b"):
            trx_id = s.data[key]
            catalogs[key] = _catalog_payload(t.catalog_for(trx_id))
            unit = t.trxs[trx_id]
            noise_models[key] = _noise_payload(t.noise_models[unit.noise_model_id])
        out = _msg("CatalogAdvert", sid, catalogs=catalogs, noise_models=noise_models)
        return _advance(s, CATALOG_EXCHANGED), [out]

    if s.state in (CATALOG_EXCHANGED, PROBING) and kind == "ProbeRequest":
        segment_id = str(payload["segment_id"])
        link_id = str(payload["link_id"])
        launch_dbm = float(payload["launch_dbm"])
        try:
            gsnr_db = ctx.segment_gsnr_db(segment_id, link_id, launch_dbm)
            unit = t.trxs[s.data["trx_a"]]
            model = t.noise_models[unit.noise_model_id]
            p_in_mw = qot.dbm_to_mw(launch_dbm)
            inv = 1.0 / qot.db_to_lin(gsnr_db) + model.inverse_sum(p_in_mw)
            snr_meas_db = qot.lin_to_db(1.0 / inv)
        except DcxError as exc:
            return _errored(s, type(exc).__name__, str(exc))
        out = _msg(
            "ProbeResult",
            sid,
            segment_id=segment_id,
            snr_meas_db=snr_meas_db,
            p_in_dbm=launch_dbm,
        )
        return _advance(s, PROBING), [out]

    if s.state == PROBING and kind == "ModeProposal":
        config = {
            "mode_id": payload["mode_id"],
            "channel_index": payload["channel_index"],
            "route_id": payload["route_id"],
            "launch_dbm": payload["launch_dbm"],
            "session_id": sid,
        }
        for key in ("trx_a", "trx_b"):
            ctx.devices[s.data[key]].apply(config)
        configure = _msg(
            "ConfigureTrx",
            sid,
            configs={s.data["trx_a"]: config, s.data["trx_b"]: config},
        )
        ack = _msg("ConfigureAck", sid, snapshots=dict(s.data["snapshots"]))
        return _advance(s, CONFIGURED, applied_config=config), [configure, ack]

    if s.state == CONFIGURED and kind == "Decision":
        final = COMMITTED if payload.get("verdict") == "approve" else ROLLED_BACK
        return _advance(s, final, decision=dict(payload)), []

    return _errored(
        s, "ProtocolViolation", f"{kind} is not valid in state {s.state}"
    )


# ---------------------------------------------------------------------------
# Carrier


def _probe_request(
    s: SessionState, ctx: ProvisioningContext, index: int
) -> ProtocolMessage:
    segments: Sequence[routing.Segment] = s.data["segments"]
    seg = segments[index]
    return _msg(
        "ProbeRequest",
        s.session_id,
        segment_id=seg.segment_id,
        link_id=seg.links[0],
        probe_mode_id=s.data["probe_mode_id"],
        launch_dbm=ctx.policy.launch_dbm,
    )


def carrier_step(
    s: SessionState, inbound: ProtocolMessage | None, ctx: ProvisioningContext
) -> tuple[SessionState, list[ProtocolMessage]]:
    """Advance the carrier machine by one event (``None`` = autonomous)."""
    if s.state in TERMINAL_STATES:
        return s, []
    sid = s.session_id
    t = ctx.topology

    if inbound is None:
        if s.state == QOT_ESTIMATED:
            qots: Sequence[qot.SegmentQot] = s.data["segment_qot"]
            try:
                e2e = qot.concatenate_gsnr(qots)
                common = [
                    modes_mod.TrxMode(**m) for m in s.data["common_mode_payloads"]
                ]
                trx_model = _noise_from_payload(s.data["noise_model_a"])
                p_in_mw = qot.dbm_to_mw(ctx.policy.launch_dbm)
                mode = modes_mod.select_mode(
                    common, e2e, trx_model, p_in_mw, margin_db=ctx.policy.margin_db
                )
                route: routing.RouteCandidate = s.data["route"]
                assignment = routing.assign_spectrum(t, route, ctx.occupancy)
            except DcxError as exc:
                return _errored(s, type(exc).__name__, str(exc))
            out = _msg(
                "ModeProposal",
                sid,
                mode_id=mode.id,
                channel_index=assignment.channel_index,
                route_id=route.id,
                launch_dbm=ctx.policy.launch_dbm,
                gsnr_db=qot.lin_to_db(e2e),
            )
            return (
                _advance(
                    s, MODE_SELECTED, e2e_gsnr=e2e, mode_id=mode.id, assignment=assignment
                ),
                [out],
            )
        if s.state == CONFIGURED:
            out = _msg(
                "CommitRequest",
                sid,
                route_id=s.data["route"].id,
                mode_id=s.data["mode_id"],
                channel_index=s.data["assignment"].channel_index,
                gsnr_db=qot.lin_to_db(s.data["e2e_gsnr"]),
            )
            return _advance(s, PENDING_APPROVAL), [out]
        return _errored(s, "ProtocolViolation", f"nothing to do in {s.state}")

    kind = inbound.kind
    payload = inbound.payload

    if kind == "Error":
        return _advance(s, ERRORED, error=dict(payload)), []

    if s.state == IDLE and kind == "RegisterTrx":
        serials = list(payload.get("serials", ()))
        missing = [x for x in serials if x not in t.allowlist]
        if missing or not serials:
            out = _msg(
                "AuthResult", sid, ok=False, detail=f"serials not allowed: {missing}"
            )
            state, _ = _errored(
                s, "AuthFailed", f"serials not allowed: {missing}", emit_error=False
            )
            return state, [out]
        return (
            _advance(
                s,
                AUTHENTICATED,
                serials=tuple(serials),
                trx_ids=tuple(str(x) for x in payload.get("trx_ids", ())),
            ),
            [_msg("AuthResult", sid, ok=True, detail="")],
        )

    if s.state == AUTHENTICATED and kind == "PathRequest" and "route" not in s.data:
        try:
            candidates = routing.enumerate_routes(
                t, str(payload["site_a"]), str(payload["site_b"])
            )
            route = candidates[0]
            segments = routing.decompose_segments(route)
        except DcxError as exc:
            return _errored(s, type(exc).__name__, str(exc))
        return (
            _advance(s, AUTHENTICATED, route=route, segments=tuple(segments)),
            [_msg("CatalogRequest", sid)],
        )

    if s.state == AUTHENTICATED and kind == "CatalogAdvert" and "route" in s.data:
        try:
            cat_a = _catalog_from_payload(payload["catalogs"]["trx_a"])
            cat_b = _catalog_from_payload(payload["catalogs"]["trx_b"])
            common = modes_mod.intersect_catalogs(cat_a, cat_b)
            if not common:
                raise NoInteroperableMode(
                    f"catalogs {cat_a.trx_id} and {cat_b.trx_id} share no mode"
                )
            probe_mode = modes_mod.probe_plan(cat_a, cat_b)
        except DcxError as exc:
            return _errored(s, type(exc).__name__, str(exc))
        s = _advance(
            s,
            PROBING,
            common_mode_payloads=tuple(_mode_payload(m) for m in common),
            noise_model_a=dict(payload["noise_models"]["trx_a"]),
            probe_mode_id=probe_mode.id,
            segment_qot=(),
            probe_index=0,
        )
        return s, [_probe_request(s, ctx, 0)]

    if s.state == PROBING and kind == "ProbeResult":
        segments: Sequence[routing.Segment] = s.data["segments"]
        index = int(s.data["probe_index"])
        expected = segments[index].segment_id
        if payload.get("segment_id") != expected:
            return _errored(
                s,
                "ProtocolViolation",
                f"expected probe of {expected}, got {payload.get('segment_id')}",
            )
        try:
            trx_model = _noise_from_payload(s.data["noise_model_a"])
            snr_meas = qot.db_to_lin(float(payload["snr_meas_db"]))
            p_in_mw = qot.dbm_to_mw(float(payload["p_in_dbm"]))
            gsnr = qot.deduce_segment_gsnr(snr_meas, trx_model, p_in_mw)
            seg_qot = qot.SegmentQot(
                segment_id=expected,
                gsnr=gsnr,
                snr_meas=snr_meas,
                probe_mode=s.data["probe_mode_id"],
            )
        except DcxError as exc:
            return _errored(s, type(exc).__name__, str(exc))
        collected = (*s.data["segment_qot"], seg_qot)
        if index + 1 < len(segments):
            s = _advance(s, PROBING, segment_qot=collected, probe_index=index + 1)
            return s, [_probe_request(s, ctx, index + 1)]
        return _advance(s, QOT_ESTIMATED, segment_qot=collected), []

    if s.state == MODE_SELECTED and kind == "ConfigureAck":
        return (
            _advance(s, CONFIGURED, snapshots=dict(payload.get("snapshots", {}))),
            [],
        )

    return _errored(s, "ProtocolViolation", f"{kind} is not valid in state {s.state}")


# ---------------------------------------------------------------------------
# Decision gate


def apply_decision(
    s: SessionState, verdict: str, ctx: ProvisioningContext, reason: str = ""
) -> tuple[SessionState, list[ProtocolMessage]]:
    """Commit or roll back a pending session (carrier side).

    Approval claims the tentatively assigned channel under the coordinator
    lock; if another session claimed it first, spectrum is re-assigned
    before committing and the devices are updated to the new channel.
    Rollback restores every captured device snapshot byte for byte and
    leaves occupancy untouched (nothing was claimed yet).
    """
    if s.state != PENDING_APPROVAL:
        raise NotPending(f"session {s.session_id} is {s.state}, not PendingApproval")
    if verdict not in VERDICTS:
        raise ValidationError(f"verdict must be one of {VERDICTS}, got {verdict!r}")

    if verdict == "approve":
        assignment: routing.SpectrumAssignment = s.data["assignment"]
        route: routing.RouteCandidate = s.data["route"]
        with ctx.lock:
            channel = assignment.channel_index
            links = list(assignment.confirmed)
            if any(channel in ctx.occupancy[lid] for lid in links):
                assignment = routing.assign_spectrum(ctx.topology, route, ctx.occupancy)
                channel = assignment.channel_index
                links = list(assignment.confirmed)
                for trx_id in s.data.get("trx_ids", ()):
                    if trx_id in ctx.devices:
                        ctx.devices[trx_id].apply({"channel_index": channel})
            for lid in links:
                ctx.occupancy[lid].add(channel)
            assignment.confirmed = {lid: True for lid in links}
        new = _advance(
            s,
            COMMITTED,
            assignment=assignment,
            decision={"verdict": verdict, "reason": reason},
        )
    else:
        for trx_id, snapshot in dict(s.data.get("snapshots", {})).items():
            if trx_id in ctx.devices:
                ctx.devices[trx_id].restore(str(snapshot))
        new = _advance(s, ROLLED_BACK, decision={"verdict": verdict, "reason": reason})

    out = _msg("Decision", s.session_id, verdict=verdict, reason=reason)
    return new, [out]


# ---------------------------------------------------------------------------
# In-memory driver


@dataclass(frozen=True)
class ProvisioningOutcome:
    session_id: str
    user_state: SessionState
    carrier_state: SessionState
    log: tuple[SessionLogEntry, ...]

    @property
    def terminal_state(self) -> str:
        return self.carrier_state.state


def _step_bound(carrier: SessionState) -> int:
    return 8 + 2 * len(carrier.data.get("segments", ()))


def run_provisioning(
    ctx: ProvisioningContext,
    site_a: str,
    site_b: str,
    policy: ProvisioningPolicy | None = None,
) -> ProvisioningOutcome:
    """Drive one session end to end over an in-memory FIFO channel.

    Deterministic given (context, sites, policy): message order is fixed,
    timestamps are logical sequence numbers, and every emitted message is
    logged with the sender's resulting state. If the queue drains before
    either machine terminates (and no approval is pending), the session is
    declared timed out.
    """
    if policy is not None:
        ctx.policy = policy
    session_id = ctx.new_session_id()
    user = start_user_session(ctx, session_id, site_a, site_b)
    carrier = start_carrier_session(session_id)
    log: list[SessionLogEntry] = []
    queue: deque[tuple[str, ProtocolMessage]] = deque()
    steps = {"user": 0, "carrier": 0}

    def record(direction: str, message: ProtocolMessage, state_after: str) -> None:
        seq = ctx.next_seq()
        log.append(
            SessionLogEntry(
                seq=seq,
                timestamp=seq,
                direction=direction,
                message=message,
                resulting_state=state_after,
            )
        )

    def dispatch(sender: str, state_after: str, msgs: list[ProtocolMessage]) -> None:
        for m in msgs:
            if sender == "user":
                if m.kind == "ConfigureTrx":
                    record(USER_TO_DEVICE, m, state_after)
                else:
                    record(USER_TO_CARRIER, m, state_after)
                    queue.append(("carrier", m))
            else:
                if m.kind == "CommitRequest":
                    record(CARRIER_TO_APPROVER, m, state_after)
                else:
                    record(CARRIER_TO_USER, m, state_after)
                    queue.append(("user", m))

    user, out = user_agent_step(user, None, ctx)
    steps["user"] += 1
    dispatch("user", user.state, out)

    while True:
        while queue:
            target, message = queue.popleft()
            bound = _step_bound(carrier)
            if steps[target] > bound:
                detail = f"{target} machine exceeded {bound} steps"
                if target == "carrier":
                    carrier, out = _errored(carrier, "ProtocolViolation", detail)
                    dispatch("carrier", carrier.state, out)
                else:
                    user, out = _errored(user, "ProtocolViolation", detail)
                    dispatch("user", user.state, out)
                continue
            if target == "carrier":
                carrier, out = carrier_step(carrier, message, ctx)
                steps["carrier"] += 1
                dispatch("carrier", carrier.state, out)
                while carrier.state in AUTONOMOUS_STATES:
                    carrier, out = carrier_step(carrier, None, ctx)
                    steps["carrier"] += 1
                    dispatch("carrier", carrier.state, out)
            else:
                user, out = user_agent_step(user, message, ctx)
                steps["user"] += 1
                dispatch("user", user.state, out)
        if carrier.state == PENDING_APPROVAL and ctx.policy.auto_approve:
            carrier, out = apply_decision(carrier, "approve", ctx, reason="auto-approve")
            for m in out:
                record(APPROVER_TO_USER, m, carrier.state)
                queue.append(("user", m))
            continue
        break

    if carrier.state not in TERMINAL_STATES and carrier.state != PENDING_APPROVAL:
        carrier, _ = _errored(
            carrier, "Timeout", "message channel drained before completion",
            emit_error=False,
        )
        timeout = _msg("Error", session_id, code="Timeout", detail="channel drained")
        record(CARRIER_TO_USER, timeout, carrier.state)
        user, _ = user_agent_step(user, timeout, ctx)
    if user.state not in TERMINAL_STATES and carrier.state in TERMINAL_STATES:
        # the carrier finished without telling the user (e.g. auth failure)
        if carrier.state == ERRORED:
            user = _advance(user, ERRORED, error=carrier.data.get("error", {}))

    return ProvisioningOutcome(
        session_id=session_id,
        user_state=user,
        carrier_state=carrier,
        log=tuple(log),
    )


def replay_carrier_log(
    log: Sequence[SessionLogEntry], ctx: ProvisioningContext
) -> SessionState:
    """Re-derive the carrier's terminal state from a session log.

    Feeds the logged user->carrier messages (and any approver decision)
    through a fresh carrier machine; determinism of the step function
    makes the outcome equal the recorded one.
    """
    carrier: SessionState | None = None
    for entry in log:
        m = entry.message
        if carrier is None:
            carrier = start_carrier_session(m.session_id)
        if entry.direction == USER_TO_CARRIER:
            carrier, _ = carrier_step(carrier, m, ctx)
            while carrier.state in AUTONOMOUS_STATES:
                carrier, _ = carrier_step(carrier, None, ctx)
        elif m.kind == "Decision" and carrier.state == PENDING_APPROVAL:
            carrier, _ = apply_decision(
                carrier, str(m.payload["verdict"]), ctx, str(m.payload.get("reason", ""))
            )
    if carrier is None:
        raise ValidationError("empty session log")
    return carrier
