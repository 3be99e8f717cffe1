"""Deterministic twin of one optical line.

Simulates per-channel power propagation element by element, synthesizes
longitudinal power profiles (the software stand-in for DSP-based link
monitoring), reads out amplifier telemetry, injects faults, and models
round-trip delay. Everything is reproducible: propagation is a pure
function of (link, launch, faults), and profile noise is drawn from an
explicitly seeded generator.

The mutable pieces (amplifier settings and active faults) are owned by
:class:`LineTwin`, a single-writer object; computations run on immutable
snapshots derived from it.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import qot
from .errors import (
    NegativeLength,
    OutOfRange,
    PowerOutOfRange,
    UnknownFault,
    UnknownTarget,
    ValidationError,
)
from .netmodel import ChannelGrid, EdfaUnit, FiberSpan, OpticalLink, RoadmUnit

STEP_LOSS = "step_loss"
NF_DEGRADATION = "nf_degradation"
FAULT_KINDS = (STEP_LOSS, NF_DEGRADATION)

DEFAULT_GROUP_INDEX = 1.468
MAX_FAULT_DB = 20.0


@dataclass(frozen=True)
class FaultSpec:
    """One injected impairment: a lumped loss or an amplifier noise rise.

    ``step_loss`` targets a position along a link (``link_id`` +
    ``distance_km``); ``nf_degradation`` targets an amplifier (``edfa_id``)
    and raises its noise figure by ``magnitude_db``, the additive model of
    a mid-stage attenuator.
    """

    id: str
    kind: str
    magnitude_db: float
    link_id: str | None = None
    distance_km: float | None = None
    edfa_id: str | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValidationError(f"fault kind must be one of {list(FAULT_KINDS)}")
        if not (0.0 < self.magnitude_db <= MAX_FAULT_DB):
            raise OutOfRange(
                f"fault magnitude must be in (0, {MAX_FAULT_DB}] dB, "
                f"got {self.magnitude_db}"
            )
        if self.kind == STEP_LOSS:
            if self.link_id is None or self.distance_km is None:
                raise ValidationError("step_loss needs link_id and distance_km")
        else:
            if self.edfa_id is None:
                raise ValidationError("nf_degradation needs edfa_id")


@dataclass(frozen=True)
class ElementRecord:
    """Per-channel input/output powers around one element."""

    kind: str
    element_id: str | None
    start_km: float
    end_km: float
    p_in_dbm: tuple[float, ...]
    p_out_dbm: tuple[float, ...]


@dataclass(frozen=True)
class EdfaMonitor:
    """What an amplifier's built-in photodiodes and settings report.

    ``total_*`` are the monitor readings (channel sum plus ASE);
    ``signal_*`` keep the signal-only sums so the exact gain identity
    (out − in = gain at zero tilt) remains testable without the ASE term.
    """

    edfa_id: str
    gain_target_db: float
    tilt_db: float
    nf_effective_db: float
    total_in_dbm: float
    total_out_dbm: float
    signal_in_dbm: float
    signal_out_dbm: float


@dataclass(frozen=True)
class LineState:
    """Ground truth after one propagation pass over a link."""

    link_id: str
    launch_dbm: tuple[float, ...]
    records: tuple[ElementRecord, ...]
    monitors: tuple[EdfaMonitor, ...]
    p_out_mw: np.ndarray
    ase_mw: np.ndarray
    nli_mw: np.ndarray
    faults: tuple[FaultSpec, ...]

    @property
    def p_out_dbm(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.p_out_mw)

    def osnr_db(self, symbol_rate_gbaud: float) -> np.ndarray:
        """Per-channel OSNR (12.5 GHz reference) at the link output."""
        return qot.osnr_db_from_state(self.p_out_mw, self.ase_mw, symbol_rate_gbaud)

    def gsnr(self) -> np.ndarray:
        """Per-channel linear GSNR (ASE and NLI) at the link output."""
        with np.errstate(divide="ignore"):
            inv = self.ase_mw / self.p_out_mw + self.nli_mw / self.p_out_mw
            return np.where(inv > 0.0, 1.0 / inv, np.inf)


def _step_losses_in(
    faults: Iterable[FaultSpec], link_id: str, start_km: float, end_km: float
) -> list[FaultSpec]:
    """Step losses owned by the span [start, end) of ``link_id``, by position."""
    hits = [
        f
        for f in faults
        if f.kind == STEP_LOSS
        and f.link_id == link_id
        and start_km <= f.distance_km < end_km
    ]
    return sorted(hits, key=lambda f: (f.distance_km, f.id))


def _nf_delta(faults: Iterable[FaultSpec], edfa_id: str) -> float:
    return sum(
        f.magnitude_db
        for f in faults
        if f.kind == NF_DEGRADATION and f.edfa_id == edfa_id
    )


def propagate(
    link: OpticalLink,
    grid: ChannelGrid,
    launch_dbm,
    faults: Sequence[FaultSpec] = (),
) -> LineState:
    """Walk the link once and return the full per-element ground truth.

    Spans subtract their distributed and connector losses (plus any step
    faults they own), amplifiers apply per-channel gain and inject ASE at
    their effective noise figure, ROADMs subtract insertion loss. NLI is
    accumulated per span as a noise-to-signal ratio evaluated at the span
    input, which makes the sum across spans exact under later gain.
    """
    n = grid.count
    launch_arr = np.asarray(launch_dbm, dtype=float)
    if launch_arr.ndim == 0:
        launch_arr = np.full(n, float(launch_arr))
    if launch_arr.shape != (n,):
        raise OutOfRange(f"launch must be scalar or length {n}")
    p_mw = 10.0 ** (launch_arr / 10.0)
    ase_mw = np.zeros(n)
    inv_nli = np.zeros(n)
    freqs = np.asarray(grid.frequencies_thz())

    records: list[ElementRecord] = []
    monitors: list[EdfaMonitor] = []
    position = 0.0

    def dbm(arr: np.ndarray) -> tuple[float, ...]:
        with np.errstate(divide="ignore"):
            return tuple(float(x) for x in 10.0 * np.log10(arr))

    for element in link.elements:
        p_in = p_mw.copy()
        if isinstance(element, FiberSpan):
            start, end = position, position + element.length_km
            p_mw = p_mw * 10.0 ** (-element.conn_in_db / 10.0)
            ase_mw = ase_mw * 10.0 ** (-element.conn_in_db / 10.0)
            span_faults = _step_losses_in(faults, link.id, start, end)
            at_start = [f for f in span_faults if f.distance_km == start]
            mid_span = [f for f in span_faults if f.distance_km > start]
            for f in at_start:
                factor = 10.0 ** (-f.magnitude_db / 10.0)
                p_mw = p_mw * factor
                ase_mw = ase_mw * factor
            inv_nli = inv_nli + qot.span_nli_ratio(element, grid, p_mw)
            loss_db = (
                element.attenuation_db_per_km * element.length_km
                + element.conn_out_db
                + sum(f.magnitude_db for f in mid_span)
            )
            factor = 10.0 ** (-loss_db / 10.0)
            p_mw = p_mw * factor
            ase_mw = ase_mw * factor
            records.append(
                ElementRecord(
                    kind="fiber",
                    element_id=None,
                    start_km=start,
                    end_km=end,
                    p_in_dbm=dbm(p_in),
                    p_out_dbm=dbm(p_mw),
                )
            )
            position = end
        elif isinstance(element, EdfaUnit):
            total_in_mw = float(np.sum(p_mw) + np.sum(ase_mw))
            signal_in_mw = float(np.sum(p_mw))
            gains_db = element.channel_gains_db(n)
            gains = 10.0 ** (gains_db / 10.0)
            p_mw = p_mw * gains
            ase_mw = ase_mw * gains
            nf_db = element.nf_at(element.gain_db) + _nf_delta(faults, element.id)
            fresh = np.array(
                [
                    qot.ase_power_w(nf_db, g_db, f, grid.symbol_rate_gbaud) * 1e3
                    for g_db, f in zip(gains_db, freqs)
                ]
            )
            ase_mw = ase_mw + fresh
            total_out_mw = float(np.sum(p_mw) + np.sum(ase_mw))
            signal_out_mw = float(np.sum(p_mw))
            total_out_dbm = qot.mw_to_dbm(total_out_mw)
            if total_out_dbm > element.max_total_out_dbm + 1e-9:
                raise PowerOutOfRange(
                    f"{element.id}: total output {total_out_dbm:.2f} dBm exceeds "
                    f"limit {element.max_total_out_dbm:.2f} dBm"
                )
            monitors.append(
                EdfaMonitor(
                    edfa_id=element.id,
                    gain_target_db=element.gain_db,
                    tilt_db=element.tilt_db,
                    nf_effective_db=nf_db,
                    total_in_dbm=qot.mw_to_dbm(total_in_mw),
                    total_out_dbm=total_out_dbm,
                    signal_in_dbm=qot.mw_to_dbm(signal_in_mw),
                    signal_out_dbm=qot.mw_to_dbm(signal_out_mw),
                )
            )
            records.append(
                ElementRecord(
                    kind="edfa",
                    element_id=element.id,
                    start_km=position,
                    end_km=position,
                    p_in_dbm=dbm(p_in),
                    p_out_dbm=dbm(p_mw),
                )
            )
        elif isinstance(element, RoadmUnit):
            factor = 10.0 ** (-element.insertion_loss_db / 10.0)
            p_mw = p_mw * factor
            ase_mw = ase_mw * factor
            records.append(
                ElementRecord(
                    kind="roadm",
                    element_id=element.id,
                    start_km=position,
                    end_km=position,
                    p_in_dbm=dbm(p_in),
                    p_out_dbm=dbm(p_mw),
                )
            )
        else:  # defensive: schema validation should make this unreachable
            raise ValidationError(f"unknown element type {type(element).__name__}")

    return LineState(
        link_id=link.id,
        launch_dbm=tuple(float(x) for x in launch_arr),
        records=tuple(records),
        monitors=tuple(monitors),
        p_out_mw=p_mw,
        ase_mw=ase_mw,
        nli_mw=inv_nli * p_mw,
        faults=tuple(faults),
    )


# ---------------------------------------------------------------------------
# Longitudinal power profile


@dataclass(frozen=True)
class PowerProfile:
    """Sampled relative power along the fiber, optionally noisy."""

    samples: tuple[tuple[float, float], ...]
    resolution_km: float
    channel_index: int | None
    noise_sigma_db: float

    @property
    def aggregate(self) -> bool:
        return self.channel_index is None

    def distances(self) -> np.ndarray:
        return np.array([d for d, _ in self.samples])

    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples])

    def to_table(self) -> str:
        """Tabular export: header plus one `distance_km,relative_power_db` row each."""
        lines = ["distance_km,relative_power_db"]
        lines += [f"{d:.6g},{v:.9g}" for d, v in self.samples]
        return "\n".join(lines) + "\n"


def _profile_breakpoints(
    link: OpticalLink,
    grid: ChannelGrid,
    launch_dbm,
    faults: Sequence[FaultSpec],
    channel_index: int | None,
) -> tuple[list[tuple[float, float]], float]:
    """Piecewise-linear ground truth: (distance, power_db) after each event.

    Returns the breakpoint list (right-continuous at jumps: the value at a
    breakpoint is the power just after every event at that distance) and
    the reference launch power in dB, so callers can express samples
    relative to launch.
    """
    n = grid.count
    launch_arr = np.asarray(launch_dbm, dtype=float)
    if launch_arr.ndim == 0:
        launch_arr = np.full(n, float(launch_arr))
    p_mw = 10.0 ** (launch_arr / 10.0)

    def level() -> float:
        if channel_index is None:
            return qot.mw_to_dbm(float(np.sum(p_mw)))
        return qot.mw_to_dbm(float(p_mw[channel_index]))

    if channel_index is not None and not (0 <= channel_index < n):
        raise OutOfRange(f"channel_index must be in [0, {n})")

    reference_db = level()
    points: list[tuple[float, float]] = [(0.0, reference_db)]
    position = 0.0

    def apply_db(delta_db: float) -> None:
        nonlocal p_mw
        p_mw = p_mw * 10.0 ** (delta_db / 10.0)

    def mark() -> None:
        points.append((position, level()))

    for element in link.elements:
        if isinstance(element, FiberSpan):
            start, end = position, position + element.length_km
            if element.conn_in_db:
                apply_db(-element.conn_in_db)
                mark()
            for f in _step_losses_in(faults, link.id, start, end):
                # decay down to the fault position, then drop
                if f.distance_km > position:
                    run = f.distance_km - position
                    apply_db(-element.attenuation_db_per_km * run)
                    position = f.distance_km
                    mark()
                apply_db(-f.magnitude_db)
                mark()
            if end > position:
                apply_db(-element.attenuation_db_per_km * (end - position))
                position = end
                mark()
            if element.conn_out_db:
                apply_db(-element.conn_out_db)
                mark()
        elif isinstance(element, EdfaUnit):
            gains = 10.0 ** (element.channel_gains_db(n) / 10.0)
            p_mw = p_mw * gains
            mark()
        elif isinstance(element, RoadmUnit):
            apply_db(-element.insertion_loss_db)
            mark()
    return points, reference_db


def _sample_breakpoints(
    points: list[tuple[float, float]], distances: np.ndarray
) -> np.ndarray:
    """Evaluate the right-continuous piecewise-linear curve at ``distances``."""
    xs = np.array([p[0] for p in points])
    ys = np.array([p[1] for p in points])
    out = np.empty_like(distances)
    for i, d in enumerate(distances):
        # last breakpoint at distance <= d wins (post-jump value at ties)
        idx = int(np.searchsorted(xs, d, side="right")) - 1
        if idx < 0:
            out[i] = ys[0]
        elif idx + 1 < len(xs) and xs[idx + 1] > xs[idx]:
            # interpolate within the segment toward the next pre-jump value
            frac = (d - xs[idx]) / (xs[idx + 1] - xs[idx])
            out[i] = ys[idx] + frac * (_pre_jump(xs, ys, idx + 1) - ys[idx])
        else:
            out[i] = ys[idx]
    return out


def _pre_jump(xs: np.ndarray, ys: np.ndarray, idx: int) -> float:
    """Value just before the events at breakpoint ``idx``.

    Breakpoints at one distance are recorded in event order, so the first
    entry of the group holds the incoming (end-of-decay) level; later
    entries are post-jump. Interpolation must aim at that first entry.
    """
    first = idx
    while first > 0 and xs[first - 1] == xs[idx]:
        first -= 1
    return ys[first]


def synthesize_profile(
    link: OpticalLink,
    grid: ChannelGrid,
    launch_dbm,
    resolution_km: float,
    noise_sigma_db: float = 0.0,
    seed: int | Sequence[int] = 0,
    faults: Sequence[FaultSpec] = (),
    channel_index: int | None = None,
) -> PowerProfile:
    """Sample the longitudinal power curve and add per-sample Gaussian noise.

    Samples run from 0 to the link length inclusive at ``resolution_km``
    steps (the final point is the link end even if the length is not a
    multiple of the resolution). Power is relative to launch: the first
    sample is 0 dB in noiseless mode. Same seed, same profile.
    """
    if not (0.1 <= resolution_km <= 5.0):
        raise OutOfRange(f"resolution_km must be in [0.1, 5], got {resolution_km}")
    if noise_sigma_db < 0.0:
        raise OutOfRange("noise_sigma_db must be >= 0")
    length = link.length_km
    points, reference_db = _profile_breakpoints(
        link, grid, launch_dbm, faults, channel_index
    )
    steps = int(math.floor(length / resolution_km + 1e-9))
    distances = np.array(
        [i * resolution_km for i in range(steps + 1)]
        + ([length] if steps * resolution_km < length - 1e-9 else [])
    )
    values = _sample_breakpoints(points, distances) - reference_db
    if noise_sigma_db > 0.0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(0.0, noise_sigma_db, size=values.shape)
    return PowerProfile(
        samples=tuple((float(d), float(v)) for d, v in zip(distances, values)),
        resolution_km=resolution_km,
        channel_index=channel_index,
        noise_sigma_db=noise_sigma_db,
    )


# ---------------------------------------------------------------------------
# Telemetry


@dataclass(frozen=True)
class OsaRow:
    """One channel on the receive-edge spectrum analyzer."""

    channel: int
    freq_thz: float
    power_dbm: float
    osnr_db: float


@dataclass(frozen=True)
class TelemetrySnapshot:
    """Everything the monitoring plane can see in one reading."""

    link_id: str
    operating_point_id: str
    timestamp: int
    edfas: tuple[EdfaMonitor, ...]
    osa: tuple[OsaRow, ...]
    source_dbm: tuple[float, ...]


def snapshot_telemetry(
    link: OpticalLink,
    grid: ChannelGrid,
    state: LineState,
    operating_point_id: str,
    timestamp: int = 0,
) -> TelemetrySnapshot:
    """Project a LineState onto the deployed monitors.

    Amplifier totals are blanked (NaN) where the unit's monitor flags say
    no photodiode is fitted; the OSA reports signal power per channel plus
    the OSNR the analyzer would interpolate from the noise floor.
    """
    monitors = []
    flags = {e.id: (e.monitor_in, e.monitor_out) for e in link.edfas}
    for mon in state.monitors:
        has_in, has_out = flags.get(mon.edfa_id, (True, True))
        monitors.append(
            dataclasses.replace(
                mon,
                total_in_dbm=mon.total_in_dbm if has_in else float("nan"),
                total_out_dbm=mon.total_out_dbm if has_out else float("nan"),
                signal_in_dbm=mon.signal_in_dbm if has_in else float("nan"),
                signal_out_dbm=mon.signal_out_dbm if has_out else float("nan"),
            )
        )
    osnr = state.osnr_db(grid.symbol_rate_gbaud)
    p_dbm = state.p_out_dbm
    osa = tuple(
        OsaRow(
            channel=i,
            freq_thz=f,
            power_dbm=float(p_dbm[i]),
            osnr_db=float(osnr[i]),
        )
        for i, f in enumerate(grid.frequencies_thz())
    )
    return TelemetrySnapshot(
        link_id=link.id,
        operating_point_id=operating_point_id,
        timestamp=timestamp,
        edfas=tuple(monitors),
        osa=osa,
        source_dbm=state.launch_dbm,
    )


# ---------------------------------------------------------------------------
# Round-trip delay


def measure_roundtrip(
    length_km: float,
    processing_offset_us: float = 0.0,
    n_group: float = DEFAULT_GROUP_INDEX,
) -> float:
    """Round-trip time in microseconds over ``length_km`` of fiber.

    rtt = 2 * L * n_group / c + processing offset. Deterministic: the twin
    models no jitter.
    """
    if length_km < 0.0:
        raise NegativeLength(f"length_km must be >= 0, got {length_km}")
    if n_group <= 0.0:
        raise OutOfRange(f"n_group must be > 0, got {n_group}")
    return (
        2.0 * length_km * n_group / qot.SPEED_OF_LIGHT_KM_S
    ) * 1e6 + processing_offset_us


# ---------------------------------------------------------------------------
# The stateful twin


class LineTwin:
    """Single-writer owner of one line's settings, faults, and clock.

    Propagation and profile synthesis themselves are pure; the twin holds
    what varies between calls — amplifier setpoints, active faults, the
    base seed for profile noise, and a logical timestamp that increases
    with every telemetry read.
    """

    def __init__(self, link: OpticalLink, grid: ChannelGrid, seed: int = 0):
        self._base_link = link
        self.grid = grid
        self.seed = seed
        self._settings: dict[str, tuple[float, float]] = {
            e.id: (e.gain_db, e.tilt_db) for e in link.edfas
        }
        self._faults: dict[str, FaultSpec] = {}
        self._clock = 0
        self._profile_counter = 0

    @property
    def link_id(self) -> str:
        return self._base_link.id

    @property
    def length_km(self) -> float:
        return self._base_link.length_km

    # -- settings --------------------------------------------------------

    def settings(self) -> dict[str, tuple[float, float]]:
        """Current (gain_db, tilt_db) per amplifier."""
        return dict(self._settings)

    def _edfa(self, edfa_id: str) -> EdfaUnit:
        for e in self._base_link.edfas:
            if e.id == edfa_id:
                return e
        raise UnknownTarget(f"link {self.link_id} has no EDFA {edfa_id}")

    def set_gain(self, edfa_id: str, gain_db: float) -> None:
        unit = self._edfa(edfa_id)
        lo, hi = unit.gain_range_db
        if not (lo <= gain_db <= hi):
            raise OutOfRange(
                f"{edfa_id}: gain {gain_db} dB outside range [{lo}, {hi}]"
            )
        _, tilt = self._settings[edfa_id]
        self._settings[edfa_id] = (gain_db, tilt)

    def set_tilt(self, edfa_id: str, tilt_db: float) -> None:
        unit = self._edfa(edfa_id)
        lo, hi = unit.tilt_range_db
        if not (lo <= tilt_db <= hi):
            raise OutOfRange(
                f"{edfa_id}: tilt {tilt_db} dB outside range [{lo}, {hi}]"
            )
        gain, _ = self._settings[edfa_id]
        self._settings[edfa_id] = (gain, tilt_db)

    def effective_link(self) -> OpticalLink:
        """The base link with current amplifier setpoints substituted in."""
        elements = []
        for el in self._base_link.elements:
            if isinstance(el, EdfaUnit):
                gain, tilt = self._settings[el.id]
                el = dataclasses.replace(el, gain_db=gain, tilt_db=tilt)
            elements.append(el)
        return dataclasses.replace(self._base_link, elements=tuple(elements))

    # -- faults ----------------------------------------------------------

    def set_fault(self, f: FaultSpec) -> str:
        """Register a fault; it affects every later propagation."""
        if f.id in self._faults:
            raise ValidationError(f"fault id {f.id} already active")
        if f.kind == STEP_LOSS:
            if f.link_id != self.link_id:
                raise UnknownTarget(
                    f"fault targets link {f.link_id}, twin owns {self.link_id}"
                )
            if not (0.0 <= f.distance_km < self.length_km):
                raise OutOfRange(
                    f"distance {f.distance_km} km outside link "
                    f"[0, {self.length_km}) km"
                )
        else:
            self._edfa(f.edfa_id)  # raises UnknownTarget if absent
        self._faults[f.id] = f
        return f.id

    def clear_fault(self, fault_id: str) -> None:
        if fault_id not in self._faults:
            raise UnknownFault(f"no active fault {fault_id}")
        del self._faults[fault_id]

    def active_faults(self) -> list[FaultSpec]:
        return [self._faults[k] for k in sorted(self._faults)]

    # -- observations ----------------------------------------------------

    def propagate(self, launch_dbm) -> LineState:
        return propagate(
            self.effective_link(), self.grid, launch_dbm, tuple(self.active_faults())
        )

    def profile(
        self,
        launch_dbm,
        resolution_km: float = 0.5,
        noise_sigma_db: float = 0.0,
        channel_index: int | None = None,
    ) -> PowerProfile:
        """A fresh profile reading; successive reads use distinct noise."""
        counter = self._profile_counter
        self._profile_counter += 1
        return synthesize_profile(
            self.effective_link(),
            self.grid,
            launch_dbm,
            resolution_km=resolution_km,
            noise_sigma_db=noise_sigma_db,
            seed=(self.seed, counter),
            faults=tuple(self.active_faults()),
            channel_index=channel_index,
        )

    def telemetry(self, launch_dbm, operating_point_id: str) -> TelemetrySnapshot:
        self._clock += 1
        state = self.propagate(launch_dbm)
        return snapshot_telemetry(
            self.effective_link(),
            self.grid,
            state,
            operating_point_id,
            timestamp=self._clock,
        )

    def measure_roundtrip(
        self,
        processing_offset_us: float = 0.0,
        n_group: float = DEFAULT_GROUP_INDEX,
    ) -> float:
        return measure_roundtrip(self.length_km, processing_offset_us, n_group)
