"""Transceiver operating modes: catalogs, interoperability, selection.

Two transceivers interoperate in a mode when they agree on the full
rate/format tuple (bitrate, modulation, symbol rate, FEC). Vendor-local
mode ids do not participate in that comparison, so cross-vendor catalogs
intersect on capability even when they disagree on naming.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import qot
from .errors import NoCommonMode, NoFeasibleMode, ValidationError


@dataclass(frozen=True)
class TrxMode:
    """One advertised operating point of a transceiver.

    ``required_snr`` is not an input: it is derived from the FEC threshold
    BER through the modulation's BER curve at construction time, so the
    two can never drift apart.
    """

    id: str
    bitrate_gbps: float
    modulation: str
    symbol_rate_gbaud: float
    fec: str
    fec_threshold_ber: float
    min_rx_dbm: float
    max_rx_dbm: float
    required_snr: float = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        constants = qot.MODULATIONS[self.modulation]
        object.__setattr__(
            self, "required_snr", qot.snr_from_ber(self.fec_threshold_ber, constants)
        )

    @property
    def required_snr_db(self) -> float:
        return qot.lin_to_db(self.required_snr)

    @property
    def interop_key(self) -> tuple[float, str, float, str]:
        return (self.bitrate_gbps, self.modulation, self.symbol_rate_gbaud, self.fec)


@dataclass(frozen=True)
class ModeCatalog:
    """The set of modes one transceiver can run, plus its designated probe.

    ``trx_id`` names the owning transceiver (or the catalog template when
    the catalog has not been bound to a unit yet).
    """

    trx_id: str
    modes: tuple[TrxMode, ...]
    probe_mode_id: str

    def __post_init__(self):
        ids = [m.id for m in self.modes]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"catalog {self.trx_id}: duplicate mode ids")
        if self.probe_mode_id not in ids:
            raise ValidationError(
                f"catalog {self.trx_id}: probe mode {self.probe_mode_id!r} "
                "is not one of its modes"
            )

    def mode_by_id(self, mode_id: str) -> TrxMode:
        for mode in self.modes:
            if mode.id == mode_id:
                return mode
        raise NoFeasibleMode(f"catalog {self.trx_id} has no mode {mode_id}")


def intersect_catalogs(a: ModeCatalog, b: ModeCatalog) -> list[TrxMode]:
    """Modes both catalogs support, compared on the capability tuple.

    Returns side A's mode objects (ids may differ across vendors), ordered
    by bitrate descending, then required SNR ascending, then id.
    """
    b_keys = {m.interop_key for m in b.modes}
    common = [m for m in a.modes if m.interop_key in b_keys]
    return sorted(common, key=lambda m: (-m.bitrate_gbps, m.required_snr, m.id))


def select_mode(
    common: list[TrxMode],
    gsnr_est: float,
    trx: qot.TrxNoiseModel,
    p_in_mw: float,
    margin_db: float = 1.0,
) -> TrxMode:
    """Pick the operational mode for an estimated line GSNR.

    Walks the interoperable modes in their canonical order (re-sorted here,
    so input order cannot change the answer) and returns the first whose
    projected total SNR clears the FEC threshold by at least ``margin_db``
    and whose receive-power window contains ``p_in_mw``.
    """
    if not common:
        raise NoCommonMode("no interoperable modes to select from")
    ordered = sorted(common, key=lambda m: (-m.bitrate_gbps, m.required_snr, m.id))
    p_in_dbm = qot.mw_to_dbm(p_in_mw)
    for mode in ordered:
        if not (mode.min_rx_dbm <= p_in_dbm <= mode.max_rx_dbm):
            continue
        budget = qot.SnrBudget(
            snr_ase=gsnr_est, snr_nli=float("inf"), trx=trx, p_in_mw=p_in_mw
        )
        result = qot.combine_snr(budget, qot.MODULATIONS[mode.modulation])
        margin = result.snr_total_db - mode.required_snr_db
        if margin >= margin_db:
            return mode
    raise NoFeasibleMode(
        f"no common mode is workable at {p_in_dbm:.2f} dBm with a "
        f"{margin_db:.1f} dB margin over the estimated GSNR"
    )


def probe_plan(a: ModeCatalog, b: ModeCatalog) -> TrxMode:
    """Mode both ends will use for path probing.

    Prefers a probe mode designated identically on both sides; otherwise
    falls back to the common mode with the highest SNR requirement, which
    makes the probe the most demanding supported signal.
    """
    common = intersect_catalogs(a, b)
    if not common:
        raise NoCommonMode(f"catalogs {a.trx_id} and {b.trx_id} share no mode")
    mode_a = a.mode_by_id(a.probe_mode_id)
    mode_b = b.mode_by_id(b.probe_mode_id)
    if mode_a.interop_key == mode_b.interop_key:
        return mode_a
    return max(common, key=lambda m: (m.required_snr, m.id))
