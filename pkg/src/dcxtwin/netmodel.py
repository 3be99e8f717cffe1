"""Topology domain model: sites, transceivers, links, and the channel grid.

The model is loaded from a YAML document in two stages. Parsing is strictly
structural: unknown keys anywhere are rejected, values must have the right
shape and type, and ids must be unique. Semantic rules (numeric ranges,
reference resolution, graph connectivity) live in :func:`validate_topology`,
which reports every violation as data instead of stopping at the first.
:func:`load_topology` runs both stages and raises if anything is wrong.

Loaded objects are immutable; runtime state (amplifier settings applied
later, faults, occupancy) lives in the line twin and the coordinator,
never here.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import modes as modes_mod
from . import qot
from .errors import ParseError, UnknownSite, ValidationError


class SiteKind(str, enum.Enum):
    """Site roles: user data centers (UDC/SDC) and carrier POPs."""

    UDC = "UDC"
    SDC = "SDC"
    POP = "POP"


class LinkKind(str, enum.Enum):
    """AAL links attach user sites to POPs; CARRIER links join POPs."""

    AAL = "AAL"
    CARRIER = "CARRIER"


USER_SITE_KINDS = frozenset({SiteKind.UDC, SiteKind.SDC})


@dataclass(frozen=True)
class Site:
    id: str
    kind: SiteKind
    trx_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrxUnit:
    """A deployed transceiver: identity plus catalog and noise-model refs."""

    id: str
    serial: str
    site_id: str
    catalog_id: str
    noise_model_id: str


@dataclass(frozen=True)
class FiberSpan:
    """One fiber section with lumped connector losses at both ends."""

    length_km: float
    attenuation_db_per_km: float = 0.2
    dispersion_ps_nm_km: float = 16.7
    gamma_per_w_km: float = 1.3
    conn_in_db: float = 0.0
    conn_out_db: float = 0.0


@dataclass(frozen=True)
class EdfaUnit:
    """An amplifier stage with settable gain and tilt.

    ``nf_curve`` maps gain setpoints (dB) to noise figure (dB); lookups
    interpolate linearly and clamp outside the tabulated range. Per-channel
    gain applies the tilt linearly across the band, so the edge-to-edge
    difference equals ``tilt_db`` (positive favors higher frequencies).
    """

    id: str
    gain_db: float
    tilt_db: float = 0.0
    nf_curve: tuple[tuple[float, float], ...] = ((0.0, 5.0), (30.0, 5.0))
    gain_range_db: tuple[float, float] = (0.0, 30.0)
    tilt_range_db: tuple[float, float] = (-3.0, 3.0)
    max_total_out_dbm: float = 23.0
    monitor_in: bool = True
    monitor_out: bool = True

    def nf_at(self, gain_db: float) -> float:
        gains = [g for g, _ in self.nf_curve]
        nfs = [n for _, n in self.nf_curve]
        return float(np.interp(gain_db, gains, nfs))

    def channel_gains_db(self, count: int) -> np.ndarray:
        if count <= 1:
            return np.full(max(count, 1), self.gain_db)
        x = np.arange(count) / (count - 1) - 0.5
        return self.gain_db + self.tilt_db * x


@dataclass(frozen=True)
class RoadmUnit:
    id: str
    insertion_loss_db: float = 9.0


Element = FiberSpan | EdfaUnit | RoadmUnit


@dataclass(frozen=True)
class OpticalLink:
    """A directed-use, bidirectionally-symmetric element chain between sites."""

    id: str
    ends: tuple[str, str]
    kind: LinkKind
    elements: tuple[Element, ...]
    params_known: bool = True

    @property
    def length_km(self) -> float:
        return sum(e.length_km for e in self.elements if isinstance(e, FiberSpan))

    @property
    def spans(self) -> tuple[FiberSpan, ...]:
        return tuple(e for e in self.elements if isinstance(e, FiberSpan))

    @property
    def edfas(self) -> tuple[EdfaUnit, ...]:
        return tuple(e for e in self.elements if isinstance(e, EdfaUnit))

    def other_end(self, site_id: str) -> str:
        if site_id == self.ends[0]:
            return self.ends[1]
        if site_id == self.ends[1]:
            return self.ends[0]
        raise ValidationError(f"site {site_id} is not an end of link {self.id}")


@dataclass(frozen=True)
class ChannelGrid:
    """Fixed-grid channel plan shared by every link in the domain."""

    center_thz: float
    spacing_ghz: float
    count: int
    symbol_rate_gbaud: float

    def frequencies_thz(self) -> tuple[float, ...]:
        """Channel center frequencies, ascending from channel 0."""
        half = (self.count - 1) / 2.0
        return tuple(
            self.center_thz + (i - half) * self.spacing_ghz * 1e-3
            for i in range(self.count)
        )


@dataclass(frozen=True)
class Topology:
    """Immutable network description; see :func:`validate_topology`."""

    grid: ChannelGrid
    sites: dict[str, Site]
    trxs: dict[str, TrxUnit]
    links: dict[str, OpticalLink]
    allowlist: frozenset[str]
    catalogs: dict[str, modes_mod.ModeCatalog]
    noise_models: dict[str, qot.TrxNoiseModel]

    def pops(self) -> list[Site]:
        return sorted(
            (s for s in self.sites.values() if s.kind is SiteKind.POP),
            key=lambda s: s.id,
        )

    def links_at(self, site_id: str) -> list[OpticalLink]:
        return sorted(
            (l for l in self.links.values() if site_id in l.ends),
            key=lambda l: l.id,
        )

    def aal_links_of(self, site_id: str) -> list[OpticalLink]:
        return [l for l in self.links_at(site_id) if l.kind is LinkKind.AAL]

    def carrier_links_between(self, pop_a: str, pop_b: str) -> list[OpticalLink]:
        return [
            l
            for l in links_between(self, pop_a, pop_b)
            if l.kind is LinkKind.CARRIER
        ]

    def trx_units_at(self, site_id: str) -> list[TrxUnit]:
        return sorted(
            (t for t in self.trxs.values() if t.site_id == site_id),
            key=lambda t: t.id,
        )

    def catalog_for(self, trx_id: str) -> modes_mod.ModeCatalog:
        """The trx's catalog template rebound to the unit's id."""
        trx = self.trxs[trx_id]
        template = self.catalogs[trx.catalog_id]
        return dataclasses.replace(template, trx_id=trx_id)

    def edfa_location(self, edfa_id: str) -> tuple[str, int]:
        """Locate an amplifier: (link id, element index)."""
        for link in sorted(self.links.values(), key=lambda l: l.id):
            for idx, el in enumerate(link.elements):
                if isinstance(el, EdfaUnit) and el.id == edfa_id:
                    return link.id, idx
        raise ValidationError(f"unknown EDFA id {edfa_id}")


def links_between(t: Topology, a: str, b: str) -> list[OpticalLink]:
    """All links whose endpoint set is ``{a, b}``, in stable id order."""
    for site_id in (a, b):
        if site_id not in t.sites:
            raise UnknownSite(f"unknown site {site_id}")
    return sorted(
        (l for l in t.links.values() if set(l.ends) == {a, b}),
        key=lambda l: l.id,
    )


# ---------------------------------------------------------------------------
# Semantic validation


def validate_topology(t: Topology) -> list[str]:
    """Check every semantic invariant; return one message per violation.

    An empty list means the topology is well formed. Each message names the
    offending entity and the rule it breaks, so callers can surface all
    problems at once instead of fixing them one reload at a time.
    """
    out: list[str] = []

    g = t.grid
    if not g.center_thz > 0:
        out.append("grid: center_thz must be > 0")
    if not g.spacing_ghz > 0:
        out.append("grid: spacing_ghz must be > 0")
    if not g.symbol_rate_gbaud > 0:
        out.append("grid: symbol_rate_gbaud must be > 0")
    elif g.spacing_ghz < g.symbol_rate_gbaud:
        out.append("grid: spacing_ghz must be >= symbol_rate_gbaud")
    if not (1 <= g.count <= 128):
        out.append("grid: count must be between 1 and 128")

    for site in sorted(t.sites.values(), key=lambda s: s.id):
        for trx_id in site.trx_ids:
            if trx_id not in t.trxs or t.trxs[trx_id].site_id != site.id:
                out.append(f"site {site.id}: trx_ids lists {trx_id} not homed here")

    for trx in sorted(t.trxs.values(), key=lambda x: x.id):
        if trx.site_id not in t.sites:
            out.append(f"trx {trx.id}: unknown site {trx.site_id}")
        elif trx.id not in t.sites[trx.site_id].trx_ids:
            out.append(f"trx {trx.id}: missing from site {trx.site_id} trx_ids")
        if trx.catalog_id not in t.catalogs:
            out.append(f"trx {trx.id}: unknown catalog {trx.catalog_id}")
        if trx.noise_model_id not in t.noise_models:
            out.append(f"trx {trx.id}: unknown noise model {trx.noise_model_id}")

    seen_edfas: dict[str, str] = {}
    for link in sorted(t.links.values(), key=lambda l: l.id):
        where = f"link {link.id}"
        end_kinds: list[SiteKind | None] = []
        for end in link.ends:
            if end not in t.sites:
                out.append(f"{where}: unknown site {end}")
                end_kinds.append(None)
            else:
                end_kinds.append(t.sites[end].kind)
        if link.ends[0] == link.ends[1]:
            out.append(f"{where}: ends must be two distinct sites")
        if None not in end_kinds:
            if link.kind is LinkKind.CARRIER:
                if (end_kinds[0], end_kinds[1]) != (SiteKind.POP, SiteKind.POP):
                    out.append(f"{where}: CARRIER links must join two POP sites")
            else:
                if not (
                    (end_kinds[0] in USER_SITE_KINDS and end_kinds[1] is SiteKind.POP)
                    or (end_kinds[1] in USER_SITE_KINDS and end_kinds[0] is SiteKind.POP)
                ):
                    out.append(f"{where}: AAL links must join a user site to a POP")
        if not link.elements:
            out.append(f"{where}: elements must be non-empty")
        for idx, el in enumerate(link.elements):
            at = f"{where} elements[{idx}]"
            if isinstance(el, FiberSpan):
                if not (0.0 < el.length_km <= 500.0):
                    out.append(f"{at}: length_km must be in (0, 500]")
                if not (0.1 <= el.attenuation_db_per_km <= 1.0):
                    out.append(f"{at}: attenuation_db_per_km must be in [0.1, 1.0]")
                if not (0.0 <= el.conn_in_db <= 5.0):
                    out.append(f"{at}: conn_in_db must be in [0, 5]")
                if not (0.0 <= el.conn_out_db <= 5.0):
                    out.append(f"{at}: conn_out_db must be in [0, 5]")
                if el.gamma_per_w_km < 0.0:
                    out.append(f"{at}: gamma_per_w_km must be >= 0")
            elif isinstance(el, EdfaUnit):
                if el.id in seen_edfas:
                    out.append(
                        f"{at}: duplicate EDFA id {el.id} "
                        f"(also in {seen_edfas[el.id]})"
                    )
                else:
                    seen_edfas[el.id] = where
                lo, hi = el.gain_range_db
                if not (lo <= el.gain_db <= hi):
                    out.append(
                        f"{at}: gain_db {el.gain_db} outside range [{lo}, {hi}]"
                    )
                lo, hi = el.tilt_range_db
                if not (lo <= el.tilt_db <= hi):
                    out.append(
                        f"{at}: tilt_db {el.tilt_db} outside range [{lo}, {hi}]"
                    )
                if len(el.nf_curve) < 2:
                    out.append(f"{at}: nf_curve needs at least two points")
                gains = [gp for gp, _ in el.nf_curve]
                if any(gains[i] >= gains[i + 1] for i in range(len(gains) - 1)):
                    out.append(f"{at}: nf_curve gains must strictly increase")
                if any(nf <= 0.0 for _, nf in el.nf_curve):
                    out.append(f"{at}: noise figures must be > 0 dB")
            elif isinstance(el, RoadmUnit):
                if not (0.0 <= el.insertion_loss_db <= 25.0):
                    out.append(f"{at}: insertion_loss_db must be in [0, 25]")

    pop_ids = {s.id for s in t.sites.values() if s.kind is SiteKind.POP}
    adjacency: dict[str, set[str]] = {p: set() for p in pop_ids}
    for link in t.links.values():
        if link.kind is LinkKind.CARRIER:
            a, b = link.ends
            if a in pop_ids and b in pop_ids:
                adjacency[a].add(b)
                adjacency[b].add(a)
    for pop in sorted(pop_ids):
        if not adjacency[pop]:
            out.append(f"site {pop}: POP terminates no CARRIER link")
    if len(pop_ids) > 1:
        start = min(pop_ids)
        reached = {start}
        frontier = [start]
        while frontier:
            nxt = frontier.pop()
            for nb in adjacency[nxt]:
                if nb not in reached:
                    reached.add(nb)
                    frontier.append(nb)
        missing = sorted(pop_ids - reached)
        if missing:
            out.append(
                "pop-graph-connectivity: POPs unreachable from "
                f"{start}: {', '.join(missing)}"
            )

    return out


# ---------------------------------------------------------------------------
# Structural parsing


def _require_mapping(node: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(node, Mapping):
        raise ValidationError("expected a mapping", path)
    return node


def _check_keys(
    node: Mapping[str, Any], required: set[str], optional: set[str], path: str
) -> None:
    keys = set(node.keys())
    unknown = keys - required - optional
    if unknown:
        raise ValidationError(f"unknown keys {sorted(unknown)}", path)
    missing = required - keys
    if missing:
        raise ValidationError(f"missing keys {sorted(missing)}", path)


def _number(node: Mapping[str, Any], key: str, path: str, default=None) -> float:
    if key not in node:
        if default is None:
            raise ValidationError(f"missing key {key}", path)
        return float(default)
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{key} must be a number", path)
    return float(value)


def _string(node: Mapping[str, Any], key: str, path: str) -> str:
    value = node.get(key)
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{key} must be a non-empty string", path)
    return value


def _pair(node: Mapping[str, Any], key: str, path: str, default) -> tuple[float, float]:
    if key not in node:
        return default
    value = node[key]
    if (
        not isinstance(value, Sequence)
        or len(value) != 2
        or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value)
    ):
        raise ValidationError(f"{key} must be a [low, high] pair", path)
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ValidationError(f"{key} low bound exceeds high bound", path)
    return lo, hi


def _parse_grid(node: Any) -> ChannelGrid:
    node = _require_mapping(node, "grid")
    _check_keys(
        node,
        {"center_thz", "spacing_ghz", "count", "symbol_rate_gbaud"},
        set(),
        "grid",
    )
    count = node["count"]
    if isinstance(count, bool) or not isinstance(count, int):
        raise ValidationError("count must be an integer", "grid")
    return ChannelGrid(
        center_thz=_number(node, "center_thz", "grid"),
        spacing_ghz=_number(node, "spacing_ghz", "grid"),
        count=count,
        symbol_rate_gbaud=_number(node, "symbol_rate_gbaud", "grid"),
    )


def _parse_span(node: Mapping[str, Any], path: str) -> FiberSpan:
    _check_keys(
        node,
        {"type", "length_km"},
        {
            "attenuation_db_per_km",
            "dispersion_ps_nm_km",
            "gamma_per_w_km",
            "conn_in_db",
            "conn_out_db",
        },
        path,
    )
    return FiberSpan(
        length_km=_number(node, "length_km", path),
        attenuation_db_per_km=_number(node, "attenuation_db_per_km", path, 0.2),
        dispersion_ps_nm_km=_number(node, "dispersion_ps_nm_km", path, 16.7),
        gamma_per_w_km=_number(node, "gamma_per_w_km", path, 1.3),
        conn_in_db=_number(node, "conn_in_db", path, 0.0),
        conn_out_db=_number(node, "conn_out_db", path, 0.0),
    )


def _parse_edfa(node: Mapping[str, Any], path: str) -> EdfaUnit:
    _check_keys(
        node,
        {"type", "id", "gain_db"},
        {
            "tilt_db",
            "nf_db",
            "nf_curve",
            "gain_range_db",
            "tilt_range_db",
            "max_total_out_dbm",
            "monitor_in",
            "monitor_out",
        },
        path,
    )
    if "nf_db" in node and "nf_curve" in node:
        raise ValidationError("give nf_db or nf_curve, not both", path)
    gain_range = _pair(node, "gain_range_db", path, (0.0, 30.0))
    if "nf_curve" in node:
        raw = node["nf_curve"]
        if not isinstance(raw, Sequence) or not raw:
            raise ValidationError("nf_curve must be a non-empty list", path)
        curve = []
        for i, entry in enumerate(raw):
            if (
                not isinstance(entry, Sequence)
                or len(entry) != 2
                or any(
                    isinstance(v, bool) or not isinstance(v, (int, float))
                    for v in entry
                )
            ):
                raise ValidationError(f"nf_curve[{i}] must be [gain_db, nf_db]", path)
            curve.append((float(entry[0]), float(entry[1])))
        nf_curve = tuple(curve)
    else:
        # Flat-noise shorthand: one nf_db figure over the whole gain range.
        nf = _number(node, "nf_db", path, 5.0)
        nf_curve = ((gain_range[0], nf), (gain_range[1], nf))
    for flag in ("monitor_in", "monitor_out"):
        if flag in node and not isinstance(node[flag], bool):
            raise ValidationError(f"{flag} must be a boolean", path)
    return EdfaUnit(
        id=_string(node, "id", path),
        gain_db=_number(node, "gain_db", path),
        tilt_db=_number(node, "tilt_db", path, 0.0),
        nf_curve=nf_curve,
        gain_range_db=gain_range,
        tilt_range_db=_pair(node, "tilt_range_db", path, (-3.0, 3.0)),
        max_total_out_dbm=_number(node, "max_total_out_dbm", path, 23.0),
        monitor_in=bool(node.get("monitor_in", True)),
        monitor_out=bool(node.get("monitor_out", True)),
    )


def _parse_roadm(node: Mapping[str, Any], path: str) -> RoadmUnit:
    _check_keys(node, {"type", "id"}, {"insertion_loss_db"}, path)
    return RoadmUnit(
        id=_string(node, "id", path),
        insertion_loss_db=_number(node, "insertion_loss_db", path, 9.0),
    )


_ELEMENT_PARSERS = {"fiber": _parse_span, "edfa": _parse_edfa, "roadm": _parse_roadm}


def _parse_link(node: Any, path: str) -> OpticalLink:
    node = _require_mapping(node, path)
    _check_keys(node, {"id", "kind", "ends", "elements"}, {"params_known"}, path)
    link_id = _string(node, "id", path)
    kind_raw = _string(node, "kind", path)
    try:
        kind = LinkKind(kind_raw)
    except ValueError:
        raise ValidationError(f"kind must be one of {[k.value for k in LinkKind]}", path)
    ends = node["ends"]
    if (
        not isinstance(ends, Sequence)
        or isinstance(ends, str)
        or len(ends) != 2
        or not all(isinstance(e, str) for e in ends)
    ):
        raise ValidationError("ends must be a pair of site ids", f"{path}.ends")
    raw_elements = node["elements"]
    if not isinstance(raw_elements, Sequence) or not raw_elements:
        raise ValidationError("elements must be a non-empty list", path)
    elements: list[Element] = []
    for i, raw in enumerate(raw_elements):
        el_path = f"{path}.elements[{i}]"
        raw = _require_mapping(raw, el_path)
        el_type = raw.get("type")
        parser = _ELEMENT_PARSERS.get(el_type)
        if parser is None:
            raise ValidationError(
                f"type must be one of {sorted(_ELEMENT_PARSERS)}", el_path
            )
        elements.append(parser(raw, el_path))
    # Access lines default to unknown fiber parameters: the carrier cannot
    # see inside a customer premises run. Carrier links default to known.
    params_known = node.get("params_known", kind is LinkKind.CARRIER)
    if not isinstance(params_known, bool):
        raise ValidationError("params_known must be a boolean", path)
    return OpticalLink(
        id=link_id,
        ends=(ends[0], ends[1]),
        kind=kind,
        elements=tuple(elements),
        params_known=params_known,
    )


def _parse_mode(node: Any, path: str) -> modes_mod.TrxMode:
    node = _require_mapping(node, path)
    _check_keys(
        node,
        {
            "id",
            "bitrate_gbps",
            "modulation",
            "symbol_rate_gbaud",
            "fec",
            "fec_threshold_ber",
            "min_rx_dbm",
            "max_rx_dbm",
        },
        set(),
        path,
    )
    modulation = _string(node, "modulation", path)
    if modulation not in qot.MODULATIONS:
        raise ValidationError(
            f"modulation must be one of {sorted(qot.MODULATIONS)}", path
        )
    threshold = _number(node, "fec_threshold_ber", path)
    if not (0.0 < threshold < qot.MODULATIONS[modulation].kappa1):
        raise ValidationError(
            f"fec_threshold_ber must lie inside the {modulation} BER range", path
        )
    mode = modes_mod.TrxMode(
        id=_string(node, "id", path),
        bitrate_gbps=_number(node, "bitrate_gbps", path),
        modulation=modulation,
        symbol_rate_gbaud=_number(node, "symbol_rate_gbaud", path),
        fec=_string(node, "fec", path),
        fec_threshold_ber=threshold,
        min_rx_dbm=_number(node, "min_rx_dbm", path),
        max_rx_dbm=_number(node, "max_rx_dbm", path),
    )
    if mode.bitrate_gbps <= 0 or mode.symbol_rate_gbaud <= 0:
        raise ValidationError("bitrate and symbol rate must be > 0", path)
    if mode.min_rx_dbm > mode.max_rx_dbm:
        raise ValidationError("min_rx_dbm must be <= max_rx_dbm", path)
    return mode


def _parse_catalog(node: Any, path: str) -> modes_mod.ModeCatalog:
    node = _require_mapping(node, path)
    _check_keys(node, {"id", "modes", "probe_mode_id"}, set(), path)
    raw_modes = node["modes"]
    if not isinstance(raw_modes, Sequence) or not raw_modes:
        raise ValidationError("modes must be a non-empty list", path)
    parsed = tuple(
        _parse_mode(m, f"{path}.modes[{i}]") for i, m in enumerate(raw_modes)
    )
    try:
        return modes_mod.ModeCatalog(
            trx_id=_string(node, "id", path),
            modes=parsed,
            probe_mode_id=_string(node, "probe_mode_id", path),
        )
    except ValidationError as exc:
        raise ValidationError(str(exc), path)


def _parse_noise_model(node: Any, path: str) -> tuple[str, qot.TrxNoiseModel]:
    node = _require_mapping(node, path)
    _check_keys(node, {"id", "snr_trx_const"}, {"snr_p_coeff_per_mw"}, path)
    const = _number(node, "snr_trx_const", path)
    coeff = _number(node, "snr_p_coeff_per_mw", path, float("inf"))
    try:
        model = qot.TrxNoiseModel(snr_trx_const=const, snr_p_coeff=coeff)
    except Exception as exc:
        raise ValidationError(str(exc), path)
    return _string(node, "id", path), model


def parse_topology(doc: Any) -> Topology:
    """Build the domain model from a parsed YAML document (structure only).

    Raises ValidationError on malformed structure; semantic rules are the
    business of :func:`validate_topology`.
    """
    doc = _require_mapping(doc, "<root>")
    _check_keys(
        doc,
        {"grid", "sites", "trxs", "links", "allowlist"},
        {"catalogs", "noise_models"},
        "<root>",
    )
    grid = _parse_grid(doc["grid"])

    raw_sites = doc["sites"]
    if not isinstance(raw_sites, Sequence) or not raw_sites:
        raise ValidationError("sites must be a non-empty list", "sites")
    site_kinds: dict[str, SiteKind] = {}
    for i, raw in enumerate(raw_sites):
        path = f"sites[{i}]"
        raw = _require_mapping(raw, path)
        _check_keys(raw, {"id", "kind"}, set(), path)
        sid = _string(raw, "id", path)
        kind_raw = _string(raw, "kind", path)
        try:
            kind = SiteKind(kind_raw)
        except ValueError:
            raise ValidationError(
                f"kind must be one of {[k.value for k in SiteKind]}", path
            )
        if sid in site_kinds:
            raise ValidationError(f"duplicate site id {sid}", path)
        site_kinds[sid] = kind

    catalogs: dict[str, modes_mod.ModeCatalog] = {}
    for i, raw in enumerate(doc.get("catalogs", []) or []):
        cat = _parse_catalog(raw, f"catalogs[{i}]")
        if cat.trx_id in catalogs:
            raise ValidationError(f"duplicate catalog id {cat.trx_id}", f"catalogs[{i}]")
        catalogs[cat.trx_id] = cat

    noise_models: dict[str, qot.TrxNoiseModel] = {}
    for i, raw in enumerate(doc.get("noise_models", []) or []):
        nm_id, nm = _parse_noise_model(raw, f"noise_models[{i}]")
        if nm_id in noise_models:
            raise ValidationError(
                f"duplicate noise model id {nm_id}", f"noise_models[{i}]"
            )
        noise_models[nm_id] = nm

    trxs: dict[str, TrxUnit] = {}
    raw_trxs = doc["trxs"]
    if raw_trxs is None:
        raw_trxs = []
    if not isinstance(raw_trxs, Sequence):
        raise ValidationError("trxs must be a list", "trxs")
    for i, raw in enumerate(raw_trxs):
        path = f"trxs[{i}]"
        raw = _require_mapping(raw, path)
        _check_keys(raw, {"id", "serial", "site", "catalog", "noise_model"}, set(), path)
        trx = TrxUnit(
            id=_string(raw, "id", path),
            serial=_string(raw, "serial", path),
            site_id=_string(raw, "site", path),
            catalog_id=_string(raw, "catalog", path),
            noise_model_id=_string(raw, "noise_model", path),
        )
        if trx.id in trxs:
            raise ValidationError(f"duplicate trx id {trx.id}", path)
        trxs[trx.id] = trx

    sites: dict[str, Site] = {}
    for sid, kind in site_kinds.items():
        homed = tuple(sorted(t.id for t in trxs.values() if t.site_id == sid))
        sites[sid] = Site(id=sid, kind=kind, trx_ids=homed)

    links: dict[str, OpticalLink] = {}
    raw_links = doc["links"]
    if raw_links is None:
        raw_links = []
    if not isinstance(raw_links, Sequence):
        raise ValidationError("links must be a list", "links")
    for i, raw in enumerate(raw_links):
        link = _parse_link(raw, f"links[{i}]")
        if link.id in links:
            raise ValidationError(f"duplicate link id {link.id}", f"links[{i}]")
        links[link.id] = link

    raw_allow = doc["allowlist"]
    if raw_allow is None:
        raw_allow = []
    if not isinstance(raw_allow, Sequence) or not all(
        isinstance(s, str) for s in raw_allow
    ):
        raise ValidationError("allowlist must be a list of serials", "allowlist")

    return Topology(
        grid=grid,
        sites=sites,
        trxs=trxs,
        links=links,
        allowlist=frozenset(raw_allow),
        catalogs=catalogs,
        noise_models=noise_models,
    )


def load_topology(path: str | Path) -> Topology:
    """Read, parse and fully validate a topology YAML file."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML in {path}: {exc}") from exc
    topology = parse_topology(doc)
    violations = validate_topology(topology)
    if violations:
        raise ValidationError("; ".join(violations))
    return topology


# ---------------------------------------------------------------------------
# Serialization


def _serialize_element(el: Element) -> dict:
    if isinstance(el, FiberSpan):
        return {
            "type": "fiber",
            "length_km": el.length_km,
            "attenuation_db_per_km": el.attenuation_db_per_km,
            "dispersion_ps_nm_km": el.dispersion_ps_nm_km,
            "gamma_per_w_km": el.gamma_per_w_km,
            "conn_in_db": el.conn_in_db,
            "conn_out_db": el.conn_out_db,
        }
    if isinstance(el, EdfaUnit):
        return {
            "type": "edfa",
            "id": el.id,
            "gain_db": el.gain_db,
            "tilt_db": el.tilt_db,
            "nf_curve": [[g, nf] for g, nf in el.nf_curve],
            "gain_range_db": list(el.gain_range_db),
            "tilt_range_db": list(el.tilt_range_db),
            "max_total_out_dbm": el.max_total_out_dbm,
            "monitor_in": el.monitor_in,
            "monitor_out": el.monitor_out,
        }
    return {"type": "roadm", "id": el.id, "insertion_loss_db": el.insertion_loss_db}


def serialize_topology(t: Topology) -> dict:
    """Emit the exact document schema that :func:`parse_topology` accepts.

    Round trip: ``parse_topology(serialize_topology(t)) == t`` field for
    field, which also makes this the canonical HTTP representation.
    """
    doc: dict[str, Any] = {
        "grid": {
            "center_thz": t.grid.center_thz,
            "spacing_ghz": t.grid.spacing_ghz,
            "count": t.grid.count,
            "symbol_rate_gbaud": t.grid.symbol_rate_gbaud,
        },
        "sites": [
            {"id": s.id, "kind": s.kind.value}
            for s in sorted(t.sites.values(), key=lambda s: s.id)
        ],
        "trxs": [
            {
                "id": x.id,
                "serial": x.serial,
                "site": x.site_id,
                "catalog": x.catalog_id,
                "noise_model": x.noise_model_id,
            }
            for x in sorted(t.trxs.values(), key=lambda x: x.id)
        ],
        "links": [
            {
                "id": l.id,
                "kind": l.kind.value,
                "ends": list(l.ends),
                "params_known": l.params_known,
                "elements": [_serialize_element(e) for e in l.elements],
            }
            for l in sorted(t.links.values(), key=lambda l: l.id)
        ],
        "allowlist": sorted(t.allowlist),
    }
    if t.catalogs:
        doc["catalogs"] = [
            {
                "id": c.trx_id,
                "probe_mode_id": c.probe_mode_id,
                "modes": [
                    {
                        "id": m.id,
                        "bitrate_gbps": m.bitrate_gbps,
                        "modulation": m.modulation,
                        "symbol_rate_gbaud": m.symbol_rate_gbaud,
                        "fec": m.fec,
                        "fec_threshold_ber": m.fec_threshold_ber,
                        "min_rx_dbm": m.min_rx_dbm,
                        "max_rx_dbm": m.max_rx_dbm,
                    }
                    for m in c.modes
                ],
            }
            for c in sorted(t.catalogs.values(), key=lambda c: c.trx_id)
        ]
    if t.noise_models:
        models = []
        for nm_id in sorted(t.noise_models):
            nm = t.noise_models[nm_id]
            entry: dict[str, Any] = {"id": nm_id, "snr_trx_const": nm.snr_trx_const}
            if nm.snr_p_coeff != float("inf"):
                entry["snr_p_coeff_per_mw"] = nm.snr_p_coeff
            models.append(entry)
        doc["noise_models"] = models
    return doc
