"""Plot-table emitters: small CSV files a plotting frontend can consume.

Each kind writes one header line plus one row per underlying sample, so
row counts are checkable against the data that produced them. Numbers are
formatted with repr-stable precision to keep same-seed runs byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .. import qot
from ..errors import UnknownTarget, ValidationError
from .store import ControlPlane

PLOT_KINDS = ("profile", "accumulated_gsnr", "q_vs_power", "osnr_error_hist")

Q_SWEEP_START_DBM = -4.0
Q_SWEEP_STOP_DBM = 6.0
Q_SWEEP_STEP_DB = 0.5


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def _write(out: str | Path, lines: list[str]) -> Path:
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_plot_data(
    plane: ControlPlane,
    kind: str,
    target: str,
    out: str | Path,
    launch_dbm: float = 0.0,
    modulation: str = "16QAM",
) -> Path:
    """Write one plot table; ``target`` is a link id (or calibration id)."""
    if kind not in PLOT_KINDS:
        raise ValidationError(f"plot kind must be one of {PLOT_KINDS}, got {kind!r}")

    if kind == "profile":
        profile = plane.profile(target, launch_dbm=launch_dbm)
        lines = ["distance_km,power_db"]
        lines += [f"{_fmt(d)},{_fmt(v)}" for d, v in profile.samples]
        return _write(out, lines)

    if kind == "accumulated_gsnr":
        result = plane.link_gsnr(target, launch_dbm)
        if not result.per_edfa_gsnr_db:
            raise UnknownTarget(f"link {target} has no amplified stages to plot")
        _eid, values = result.per_edfa_gsnr_db[-1]
        lines = ["channel,accumulated_gsnr_db"]
        lines += [f"{ch},{_fmt(v)}" for ch, v in enumerate(values)]
        return _write(out, lines)

    if kind == "q_vs_power":
        twin = plane._twin(target)
        grid = plane.topology.grid
        constants = qot.MODULATIONS[modulation]
        powers = np.arange(
            Q_SWEEP_START_DBM, Q_SWEEP_STOP_DBM + 1e-9, Q_SWEEP_STEP_DB
        )
        lines = ["p_in_dbm,q_db"]
        for p in powers:
            result = qot.link_gsnr(twin.effective_link(), grid, float(p))
            worst = float(np.min(result.gsnr))
            q_db = qot.q_from_ber(qot.ber_from_snr(worst, constants))
            lines.append(f"{_fmt(float(p))},{_fmt(q_db)}")
        return _write(out, lines)

    # osnr_error_hist: target is a calibration id
    if target not in plane.calibrations:
        raise UnknownTarget(f"unknown calibration {target}")
    residuals = plane.calibrations[target].residual_osnr_db
    lines = ["sample,delta_osnr_db"]
    lines += [f"{i},{_fmt(v)}" for i, v in enumerate(residuals)]
    return _write(out, lines)
