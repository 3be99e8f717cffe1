"""Shared fixtures: channel plans, reference links, topologies, telemetry helpers."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from dcxtwin.linetwin import LineTwin, TelemetrySnapshot
from dcxtwin.netmodel import (
    ChannelGrid,
    EdfaUnit,
    FiberSpan,
    LinkKind,
    OpticalLink,
    load_topology,
)

DATA_DIR = Path(__file__).parent / "data"
SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


# -- channel plans -----------------------------------------------------------


@pytest.fixture(scope="session")
def grid8() -> ChannelGrid:
    """Eight 32-GBaud channels on a 50-GHz grid around 193.4 THz."""
    return ChannelGrid(center_thz=193.4, spacing_ghz=50.0, count=8, symbol_rate_gbaud=32.0)


@pytest.fixture(scope="session")
def grid1() -> ChannelGrid:
    """Single 64-GBaud carrier, used by the frozen nonlinear-noise checks."""
    return ChannelGrid(center_thz=193.4, spacing_ghz=75.0, count=1, symbol_rate_gbaud=64.0)


# -- link builders -----------------------------------------------------------


def flat_edfa(eid: str, gain_db: float, nf_db: float = 5.0, tilt_db: float = 0.0, **kw) -> EdfaUnit:
    """Amplifier with a gain-independent (flat) noise figure."""
    return EdfaUnit(
        id=eid,
        gain_db=gain_db,
        tilt_db=tilt_db,
        nf_curve=((0.0, nf_db), (30.0, nf_db)),
        **kw,
    )


def amplified_line(
    link_id: str,
    stages,
    ends: tuple[str, str] = ("P1", "P2"),
    edfa_prefix: str | None = None,
) -> OpticalLink:
    """Build span+EDFA pairs; stages = (length_km, conn_in_db, gain_db, nf_db, tilt_db)."""
    prefix = edfa_prefix if edfa_prefix is not None else f"{link_id}-E"
    elements = []
    for i, (length_km, conn_in_db, gain_db, nf_db, tilt_db) in enumerate(stages, start=1):
        elements.append(FiberSpan(length_km=length_km, conn_in_db=conn_in_db))
        elements.append(flat_edfa(f"{prefix}{i}", gain_db, nf_db, tilt_db))
    return OpticalLink(id=link_id, ends=ends, kind=LinkKind.CARRIER, elements=tuple(elements))


@pytest.fixture
def canonical_link() -> OpticalLink:
    """Four 80-km spans, E1..E4 at 16 dB (transparent), flat 5-dB noise figure."""
    return amplified_line(
        "line-p1-p2",
        [(80.0, 0.0, 16.0, 5.0, 0.0)] * 4,
        edfa_prefix="E",
    )


def random_amplified_link(
    rng: np.random.Generator,
    link_id: str = "rand-line",
    n_stages: int | None = None,
    nf_range: tuple[float, float] = (4.0, 7.0),
    conn_range: tuple[float, float] = (0.2, 1.0),
) -> OpticalLink:
    """Random transparent line: per-stage gain = span loss + input-connector loss."""
    n = int(n_stages) if n_stages is not None else int(rng.integers(2, 5))
    stages = []
    for _ in range(n):
        length_km = float(rng.uniform(60.0, 100.0))
        conn_in_db = float(rng.uniform(*conn_range))
        nf_db = float(rng.uniform(*nf_range))
        gain_db = 0.2 * length_km + conn_in_db
        stages.append((length_km, conn_in_db, gain_db, nf_db, 0.0))
    return amplified_line(link_id, stages)


def designer_prior(link: OpticalLink) -> OpticalLink:
    """The planning-desk view of a link: nominal 5-dB NF, no patch losses."""
    elements = []
    for el in link.elements:
        if isinstance(el, EdfaUnit):
            el = dataclasses.replace(el, nf_curve=((0.0, 5.0), (30.0, 5.0)))
        elif isinstance(el, FiberSpan):
            el = dataclasses.replace(el, conn_in_db=0.0, conn_out_db=0.0)
        elements.append(el)
    return dataclasses.replace(link, elements=tuple(elements))


# -- topologies --------------------------------------------------------------


@pytest.fixture(scope="session")
def mesh5():
    """Five fully meshed POPs, one user site behind P1 and one behind P2."""
    return load_topology(DATA_DIR / "mesh5.yaml")


@pytest.fixture(scope="session")
def fourspan_topology():
    """Two POPs joined by the four-span line, one user site behind each."""
    return load_topology(DATA_DIR / "fourspan.yaml")


# -- telemetry helpers -------------------------------------------------------


def operating_points(
    twin: LineTwin,
    launch_dbm: float = 0.0,
    per_edfa_delta: float = 1.0,
    extra_ops: int = 0,
) -> list[TelemetrySnapshot]:
    """Telemetry at the base setpoint plus one gain-perturbed point per EDFA."""
    base = twin.settings()
    edfa_ids = sorted(base)
    snapshots = [twin.telemetry(launch_dbm, "op-0")]
    k = 1
    for eid in edfa_ids:
        gain, _ = base[eid]
        twin.set_gain(eid, gain + per_edfa_delta)
        snapshots.append(twin.telemetry(launch_dbm, f"op-{k}"))
        twin.set_gain(eid, gain)
        k += 1
    for j in range(extra_ops):
        eid = edfa_ids[j % len(edfa_ids)]
        gain, _ = base[eid]
        twin.set_gain(eid, gain - per_edfa_delta)
        snapshots.append(twin.telemetry(launch_dbm, f"op-{k}"))
        twin.set_gain(eid, gain)
        k += 1
    return snapshots


def jitter_snapshots(
    snapshots,
    sigma_db: float,
    rng: np.random.Generator,
) -> list[TelemetrySnapshot]:
    """Add monitor noise to power/OSNR readings; setpoints stay exact."""

    def wobble(value: float) -> float:
        return value + float(rng.normal(0.0, sigma_db))

    noisy = []
    for snap in snapshots:
        edfas = tuple(
            dataclasses.replace(
                mon,
                total_in_dbm=wobble(mon.total_in_dbm),
                total_out_dbm=wobble(mon.total_out_dbm),
                signal_in_dbm=wobble(mon.signal_in_dbm),
                signal_out_dbm=wobble(mon.signal_out_dbm),
            )
            for mon in snap.edfas
        )
        osa = tuple(
            dataclasses.replace(
                row,
                power_dbm=wobble(row.power_dbm),
                osnr_db=wobble(row.osnr_db),
            )
            for row in snap.osa
        )
        noisy.append(dataclasses.replace(snap, edfas=edfas, osa=osa))
    return noisy
