"""Quality-of-transmission estimation for coherent WDM links.

This module holds the noise bookkeeping used everywhere else: BER and Q
conversions for square-constellation coherent formats, amplifier ASE noise,
an incoherent per-span fiber nonlinearity model, and the inverse-SNR algebra
that combines and splits the individual contributions.

Conventions:
    * Linear SNR values are dimensionless power ratios; ``*_db`` means 10*log10.
    * Per-channel quantities are numpy arrays indexed from the lowest-frequency
      channel of the grid.
    * ASE powers are tracked in the signal (symbol-rate) bandwidth; optical
      OSNR values are referenced to 12.5 GHz.
    * Powers are mW internally, dBm at API boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy.special import erfc, erfcinv

from .errors import (
    DegenerateDispersion,
    EmptyList,
    NonPhysical,
    OutOfRange,
    PowerOutOfRange,
    TrxDominated,
    Underdetermined,
)

if TYPE_CHECKING:  # pragma: no cover
    from .netmodel import ChannelGrid, OpticalLink

PLANCK_J_S = 6.62607015e-34
SPEED_OF_LIGHT_KM_S = 299792.458
OSNR_REF_BANDWIDTH_GHZ = 12.5

_LN10 = math.log(10.0)


def db_to_lin(value_db: float) -> float:
    """Convert a dB ratio to linear."""
    return 10.0 ** (value_db / 10.0)


def lin_to_db(value: float) -> float:
    """Convert a linear ratio to dB. Zero maps to -inf."""
    if value <= 0.0:
        return float("-inf")
    return 10.0 * math.log10(value)


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


def mw_to_dbm(p_mw: float) -> float:
    if p_mw <= 0.0:
        return float("-inf")
    return 10.0 * math.log10(p_mw)


@dataclass(frozen=True)
class ModulationConstants:
    """Closed-form BER curve parameters for a coherent format.

    The pre-FEC bit error ratio of an ideal receiver is modeled as

        ber = kappa1 * erfc(sqrt(kappa2 * snr))

    with ``snr`` the linear signal-to-noise ratio in the signal bandwidth.
    """

    name: str
    kappa1: float
    kappa2: float
    bits_per_symbol: int


QPSK = ModulationConstants("QPSK", kappa1=0.5, kappa2=0.5, bits_per_symbol=2)
QAM16 = ModulationConstants("16QAM", kappa1=3.0 / 8.0, kappa2=0.1, bits_per_symbol=4)

MODULATIONS: dict[str, ModulationConstants] = {m.name: m for m in (QPSK, QAM16)}


def ber_from_snr(snr: float, modulation: ModulationConstants) -> float:
    """Pre-FEC BER of ``modulation`` at a linear SNR.

    Parameters:
        snr: linear signal-to-noise ratio, must be >= 0.
        modulation: constellation constants.

    Returns:
        Bit error ratio in (0, kappa1].
    """
    if not snr >= 0.0:
        raise OutOfRange(f"snr must be >= 0, got {snr}")
    if math.isinf(snr):
        return 0.0
    return float(modulation.kappa1 * erfc(math.sqrt(modulation.kappa2 * snr)))


def snr_from_ber(ber: float, modulation: ModulationConstants) -> float:
    """Invert the BER curve: linear SNR that yields ``ber``.

    Uses plain bisection on [0, 1e6]; the bracket is monotone because
    erfc is strictly decreasing. Iterates until the bracket collapses to
    float resolution (at most 200 rounds), which holds the forward
    round-trip error below 1e-9 relative over the supported BER range.
    """
    if not (0.0 < ber < modulation.kappa1):
        raise OutOfRange(
            f"ber must lie in (0, {modulation.kappa1}) for {modulation.name}, got {ber}"
        )
    lo, hi = 0.0, 1.0e6
    if ber <= ber_from_snr(hi, modulation):
        raise OutOfRange(f"ber {ber} below the invertible floor at snr=1e6")
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        value = ber_from_snr(mid, modulation)
        if value == ber or (hi - lo) <= 1e-15 * max(mid, 1.0):
            break
        if value > ber:
            lo = mid
        else:
            hi = mid
    return mid


def q_from_ber(ber: float) -> float:
    """Q-factor in dB equivalent to a BER, via the Gaussian tail model.

    ber = 0.5 * erfc(q_lin / sqrt(2)), q_db = 20 * log10(q_lin).
    Valid for ber in (0, 0.5).
    """
    if not (0.0 < ber < 0.5):
        raise OutOfRange(f"ber must lie in (0, 0.5), got {ber}")
    q_lin = math.sqrt(2.0) * float(erfcinv(2.0 * ber))
    if q_lin < 1e-6:
        raise OutOfRange(f"q collapses below measurable floor at ber={ber}")
    return 20.0 * math.log10(q_lin)


def ber_from_q(q_db: float) -> float:
    """Inverse of :func:`q_from_ber` for round-trip checks."""
    q_lin = 10.0 ** (q_db / 20.0)
    return float(0.5 * erfc(q_lin / math.sqrt(2.0)))


@dataclass(frozen=True)
class TrxNoiseModel:
    """Back-to-back transceiver noise as two linear SNR terms.

    ``snr_trx_const`` is the power-independent implementation penalty;
    ``snr_p_coeff`` scales with receive power so that the power-dependent
    term contributes ``snr_p_coeff * p_in_mw`` to the linear SNR budget.
    Either term may be ``inf`` to disable it.
    """

    snr_trx_const: float
    snr_p_coeff: float

    def __post_init__(self):
        if not self.snr_trx_const > 0.0:
            raise OutOfRange(f"snr_trx_const must be > 0, got {self.snr_trx_const}")
        if not self.snr_p_coeff > 0.0:
            raise OutOfRange(f"snr_p_coeff must be > 0, got {self.snr_p_coeff}")

    def inverse_sum(self, p_in_mw: float | None) -> float:
        """Total inverse-SNR contribution of the transceiver at ``p_in_mw``."""
        total = 0.0
        if math.isfinite(self.snr_trx_const):
            total += 1.0 / self.snr_trx_const
        if math.isfinite(self.snr_p_coeff):
            if p_in_mw is None or p_in_mw <= 0.0:
                raise OutOfRange(
                    "p_in_mw must be > 0 when the power-dependent term is finite"
                )
            total += 1.0 / (self.snr_p_coeff * p_in_mw)
        return total


@dataclass(frozen=True)
class SnrBudget:
    """Inverse-summable SNR contributions of one lightpath."""

    snr_ase: float
    snr_nli: float
    trx: TrxNoiseModel | None = None
    p_in_mw: float | None = None


@dataclass(frozen=True)
class QotResult:
    """Combined quality-of-transmission figures for one channel."""

    gsnr: float
    gsnr_db: float
    snr_total: float
    snr_total_db: float
    ber: float
    q_db: float
    modulation: str


@dataclass(frozen=True)
class SegmentQot:
    """Deduced line GSNR of one route segment (transceiver noise removed).

    ``snr_meas`` optionally records the raw probe measurement the deduction
    started from, and ``probe_mode`` the mode id that produced it. A deduced
    GSNR can never fall below the measured SNR because stripping positive
    transceiver noise only raises the remaining line term.
    """

    segment_id: str
    gsnr: float
    snr_meas: float | None = None
    probe_mode: str | None = None

    def __post_init__(self):
        if self.snr_meas is not None and self.gsnr < self.snr_meas:
            raise NonPhysical(
                f"segment {self.segment_id}: deduced gsnr {self.gsnr:.6g} below "
                f"measured snr {self.snr_meas:.6g}"
            )

    @property
    def gsnr_db(self) -> float:
        return lin_to_db(self.gsnr)


def combine_snr(budget: SnrBudget, modulation: ModulationConstants) -> QotResult:
    """Fold an SNR budget into end-to-end GSNR, SNR, BER and Q.

    GSNR combines only the line terms (ASE, NLI); the total SNR additionally
    includes the transceiver terms. All terms add on the inverse scale.
    """
    for name, value in (("snr_ase", budget.snr_ase), ("snr_nli", budget.snr_nli)):
        if not value > 0.0:
            raise OutOfRange(f"{name} must be > 0, got {value}")
    inv_line = 0.0
    if math.isfinite(budget.snr_ase):
        inv_line += 1.0 / budget.snr_ase
    if math.isfinite(budget.snr_nli):
        inv_line += 1.0 / budget.snr_nli
    inv_total = inv_line
    if budget.trx is not None:
        inv_total += budget.trx.inverse_sum(budget.p_in_mw)
    gsnr = 1.0 / inv_line if inv_line > 0.0 else float("inf")
    snr_total = 1.0 / inv_total if inv_total > 0.0 else float("inf")
    ber = ber_from_snr(snr_total, modulation)
    q_db = q_from_ber(ber) if 0.0 < ber < 0.5 else float("inf")
    return QotResult(
        gsnr=gsnr,
        gsnr_db=lin_to_db(gsnr),
        snr_total=snr_total,
        snr_total_db=lin_to_db(snr_total),
        ber=ber,
        q_db=q_db,
        modulation=modulation.name,
    )


def concatenate_gsnr(segments: Sequence["SegmentQot | float"]) -> float:
    """End-to-end linear GSNR of segments in series (inverse sum)."""
    if len(segments) == 0:
        raise EmptyList("cannot concatenate zero segments")
    inv = 0.0
    for seg in segments:
        gsnr = seg.gsnr if isinstance(seg, SegmentQot) else float(seg)
        if not gsnr > 0.0:
            raise OutOfRange(f"segment gsnr must be > 0, got {gsnr}")
        if math.isfinite(gsnr):
            inv += 1.0 / gsnr
    return 1.0 / inv if inv > 0.0 else float("inf")


def deduce_segment_gsnr(
    snr_meas: float, trx: TrxNoiseModel, p_in_mw: float | None
) -> float:
    """Strip transceiver noise from a measured SNR, leaving the line GSNR.

    Inverse of the budget combination: 1/gsnr = 1/snr_meas - (trx terms).
    Raises TrxDominated when the transceiver terms already exceed the
    measurement, which means the line contribution is unobservable.
    """
    if not snr_meas > 0.0:
        raise OutOfRange(f"snr_meas must be > 0, got {snr_meas}")
    inv = 1.0 / snr_meas - trx.inverse_sum(p_in_mw)
    if inv <= 0.0:
        raise TrxDominated(
            f"transceiver noise accounts for all of snr_meas={snr_meas:.6g}"
        )
    return 1.0 / inv


@dataclass(frozen=True)
class TrxFit:
    """Fitted transceiver noise model plus the least-squares residual norm."""

    model: TrxNoiseModel
    residual_norm: float


def fit_trx_model(
    samples: Sequence[tuple[float, float]], gsnr_known: float
) -> TrxFit:
    """Fit the two transceiver noise terms from back-to-back style sweeps.

    Each sample is ``(p_in_mw, snr_meas)`` taken over a line of known GSNR.
    On the inverse scale the model is affine in 1/p_in:

        1/snr - 1/gsnr = 1/snr_const + (1/snr_p_coeff) * (1/p_in)

    so ordinary least squares recovers both constants.
    """
    if len(samples) < 2:
        raise Underdetermined("need at least two samples to fit two constants")
    if not gsnr_known > 0.0:
        raise OutOfRange(f"gsnr_known must be > 0, got {gsnr_known}")
    p = np.asarray([s[0] for s in samples], dtype=float)
    snr = np.asarray([s[1] for s in samples], dtype=float)
    if np.any(p <= 0.0) or np.any(snr <= 0.0):
        raise OutOfRange("samples must have positive power and SNR")
    if np.unique(p).size < 2:
        raise Underdetermined("samples must cover at least two receive powers")
    inv_gsnr = 1.0 / gsnr_known if math.isfinite(gsnr_known) else 0.0
    y = 1.0 / snr - inv_gsnr
    design = np.column_stack([np.ones_like(p), 1.0 / p])
    coeffs, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    a, b = float(coeffs[0]), float(coeffs[1])
    if a <= 0.0 or b <= 0.0:
        raise NonPhysical(f"fitted inverse terms must be > 0, got a={a:.3g} b={b:.3g}")
    residual = float(np.linalg.norm(design @ coeffs - y))
    return TrxFit(model=TrxNoiseModel(1.0 / a, 1.0 / b), residual_norm=residual)


def ase_power_w(
    nf_db: float, gain_db: float, freq_thz: float, bandwidth_ghz: float
) -> float:
    """ASE power added by one amplifier stage into ``bandwidth_ghz``.

    p_ase = h * nu * nf_lin * (g_lin - 1) * bandwidth, clamped at zero
    for gains at or below unity.
    """
    gain_lin = db_to_lin(gain_db)
    if gain_lin <= 1.0:
        return 0.0
    nf_lin = db_to_lin(nf_db)
    return PLANCK_J_S * freq_thz * 1e12 * nf_lin * (gain_lin - 1.0) * bandwidth_ghz * 1e9


def _beta2_ps2_km(dispersion_ps_nm_km: float, freq_thz: float) -> float:
    """Group-velocity dispersion from the dispersion parameter at ``freq_thz``."""
    c_m_s = SPEED_OF_LIGHT_KM_S * 1e3
    lambda_m = c_m_s / (freq_thz * 1e12)
    d_si = dispersion_ps_nm_km * 1e-6  # s/m^2
    beta2_si = -d_si * lambda_m**2 / (2.0 * math.pi * c_m_s)
    return beta2_si * 1e27  # ps^2/km


def span_nli_ratio(
    span, grid: "ChannelGrid", p_in_mw: np.ndarray
) -> np.ndarray:
    """Per-channel NLI noise-to-signal ratio added by one fiber span.

    Incoherent single-span closed form, evaluated at the span input power.
    The launch power spectral density is p_in / symbol_rate per channel and
    the nonlinear interaction bandwidth is the occupied WDM band.

    Parameters:
        span: fiber span carrying length, attenuation, dispersion and gamma.
        grid: channel plan (frequencies and symbol rate).
        p_in_mw: per-channel power at the span input, mW.

    Returns:
        Array of dimensionless ratios; adding them across spans is exact
        because later gains and losses apply to noise and signal alike.
    """
    n = grid.count
    if span.gamma_per_w_km <= 0.0:
        return np.zeros(n)
    rs_hz = grid.symbol_rate_gbaud * 1e9
    b_wdm_hz = (n - 1) * grid.spacing_ghz * 1e9 + rs_hz
    alpha_per_m = span.attenuation_db_per_km * _LN10 / 10.0 / 1e3
    length_m = span.length_km * 1e3
    if alpha_per_m <= 0.0:
        raise NonPhysical("nonlinear span requires positive attenuation")
    l_eff = (1.0 - math.exp(-alpha_per_m * length_m)) / alpha_per_m
    l_eff_a = 1.0 / alpha_per_m
    gamma_si = span.gamma_per_w_km / 1e3
    ratios = np.zeros(n)
    for i, freq_thz in enumerate(grid.frequencies_thz()):
        beta2 = _beta2_ps2_km(span.dispersion_ps_nm_km, freq_thz)
        if abs(beta2) < 1e-6:
            raise DegenerateDispersion(
                f"|beta2| < 1e-6 ps^2/km at {freq_thz} THz defeats the NLI model"
            )
        beta2_si = abs(beta2) * 1e-27
        g_txp = p_in_mw[i] * 1e-3 / rs_hz
        if g_txp <= 0.0:
            continue
        g_nli = (
            (8.0 / 27.0)
            * gamma_si**2
            * g_txp**3
            * l_eff**2
            * math.asinh(0.5 * math.pi**2 * beta2_si * l_eff_a * b_wdm_hz**2)
            / (math.pi * beta2_si * l_eff_a)
        )
        ratios[i] = g_nli * rs_hz / (p_in_mw[i] * 1e-3)
    return ratios


def _launch_array(launch_dbm, count: int) -> np.ndarray:
    arr = np.asarray(launch_dbm, dtype=float)
    if arr.ndim == 0:
        arr = np.full(count, float(arr))
    if arr.shape != (count,):
        raise OutOfRange(f"launch must be scalar or length {count}")
    return 10.0 ** (arr / 10.0)


@dataclass
class _WalkState:
    """Running per-channel bookkeeping while stepping along a link."""

    p_mw: np.ndarray
    ase_mw: np.ndarray
    inv_nli: np.ndarray

    def gsnr(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            inv = self.ase_mw / self.p_mw + self.inv_nli
            return np.where(inv > 0.0, 1.0 / inv, np.inf)


def _walk_link(link: "OpticalLink", grid: "ChannelGrid", launch_dbm):
    """Step a channel comb through the link elements, yielding after each.

    Yields ``(element, state)`` with the state already updated for that
    element. ASE is tracked in the signal bandwidth; NLI accumulates as a
    noise-to-signal ratio per channel.
    """
    from . import netmodel

    n = grid.count
    state = _WalkState(
        p_mw=_launch_array(launch_dbm, n),
        ase_mw=np.zeros(n),
        inv_nli=np.zeros(n),
    )
    freqs = np.asarray(grid.frequencies_thz())
    rs_ghz = grid.symbol_rate_gbaud
    for element in link.elements:
        if isinstance(element, netmodel.FiberSpan):
            factor_in = 10.0 ** (-element.conn_in_db / 10.0)
            state.p_mw = state.p_mw * factor_in
            state.ase_mw = state.ase_mw * factor_in
            state.inv_nli = state.inv_nli + span_nli_ratio(element, grid, state.p_mw)
            loss_db = (
                element.attenuation_db_per_km * element.length_km
                + element.conn_out_db
            )
            factor = 10.0 ** (-loss_db / 10.0)
            state.p_mw = state.p_mw * factor
            state.ase_mw = state.ase_mw * factor
        elif isinstance(element, netmodel.EdfaUnit):
            gains_db = element.channel_gains_db(n)
            gains = 10.0 ** (gains_db / 10.0)
            state.p_mw = state.p_mw * gains
            state.ase_mw = state.ase_mw * gains
            nf_db = element.nf_at(element.gain_db)
            fresh = np.array(
                [
                    ase_power_w(nf_db, g_db, f, rs_ghz) * 1e3
                    for g_db, f in zip(gains_db, freqs)
                ]
            )
            state.ase_mw = state.ase_mw + fresh
            total_dbm = mw_to_dbm(float(np.sum(state.p_mw) + np.sum(state.ase_mw)))
            if total_dbm > element.max_total_out_dbm + 1e-9:
                raise PowerOutOfRange(
                    f"{element.id}: total output {total_dbm:.2f} dBm exceeds "
                    f"limit {element.max_total_out_dbm:.2f} dBm"
                )
        elif isinstance(element, netmodel.RoadmUnit):
            factor = 10.0 ** (-element.insertion_loss_db / 10.0)
            state.p_mw = state.p_mw * factor
            state.ase_mw = state.ase_mw * factor
        else:  # defensive: schema validation should make this unreachable
            raise OutOfRange(f"unknown element type {type(element).__name__}")
        yield element, state


def ase_snr(link: "OpticalLink", grid: "ChannelGrid", launch_dbm) -> np.ndarray:
    """Per-channel linear SNR due to amplifier ASE alone, at link output.

    The SNR is referenced to the signal (symbol-rate) bandwidth.
    """
    state = None
    for _, state in _walk_link(link, grid, launch_dbm):
        pass
    if state is None:
        raise EmptyList(f"link {link.id} has no elements")
    with np.errstate(divide="ignore"):
        return np.where(state.ase_mw > 0.0, state.p_mw / state.ase_mw, np.inf)


def nli_snr(link: "OpticalLink", grid: "ChannelGrid", launch_dbm) -> np.ndarray:
    """Per-channel linear SNR due to fiber nonlinearity alone."""
    state = None
    for _, state in _walk_link(link, grid, launch_dbm):
        pass
    if state is None:
        raise EmptyList(f"link {link.id} has no elements")
    with np.errstate(divide="ignore"):
        return np.where(state.inv_nli > 0.0, 1.0 / state.inv_nli, np.inf)


@dataclass(frozen=True)
class LinkQot:
    """Per-channel GSNR of one link plus the accumulated trace per EDFA."""

    link_id: str
    gsnr: np.ndarray
    gsnr_db: np.ndarray
    per_edfa_gsnr_db: tuple[tuple[str, tuple[float, ...]], ...]


def link_gsnr(link: "OpticalLink", grid: "ChannelGrid", launch_dbm) -> LinkQot:
    """Walk a link once and report GSNR per channel, with per-EDFA history.

    GSNR combines ASE and NLI only; transceiver terms belong to the SNR
    budget downstream. The per-EDFA trace records the accumulated GSNR at
    each amplifier output in element order.
    """
    from . import netmodel

    trace: list[tuple[str, tuple[float, ...]]] = []
    state = None
    for element, state in _walk_link(link, grid, launch_dbm):
        if isinstance(element, netmodel.EdfaUnit):
            gsnr_db = 10.0 * np.log10(state.gsnr())
            trace.append((element.id, tuple(float(x) for x in gsnr_db)))
    if state is None:
        raise EmptyList(f"link {link.id} has no elements")
    gsnr = state.gsnr()
    with np.errstate(divide="ignore"):
        gsnr_db = 10.0 * np.log10(gsnr)
    return LinkQot(
        link_id=link.id,
        gsnr=gsnr,
        gsnr_db=gsnr_db,
        per_edfa_gsnr_db=tuple(trace),
    )


def osnr_db_from_state(p_mw: np.ndarray, ase_mw: np.ndarray, symbol_rate_gbaud: float) -> np.ndarray:
    """Per-channel OSNR in dB re 12.5 GHz from signal and in-band ASE powers."""
    scale = symbol_rate_gbaud / OSNR_REF_BANDWIDTH_GHZ
    with np.errstate(divide="ignore"):
        osnr = np.where(ase_mw > 0.0, p_mw / ase_mw * scale, np.inf)
        return 10.0 * np.log10(osnr)
