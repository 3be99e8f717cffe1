"""Route enumeration over the POP overlay, segmenting, and spectrum fit.

A route between two user sites is an access line into the carrier network,
a simple walk across POP sites over carrier links, and an access line out.
Everything here is a pure function: occupancy arrives as an immutable
snapshot and conflict handling at commit time belongs to the provisioning
protocol, not to these helpers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import AbstractSet, Mapping, Sequence

from . import qot
from .errors import (
    MissingSegmentData,
    NoAalAttachment,
    OutOfRange,
    SpectrumExhausted,
    UnknownSite,
    ValidationError,
)
from .netmodel import USER_SITE_KINDS, LinkKind, OpticalLink, Topology

DEFAULT_MAX_POPS = 3

SEGMENT_POLICIES = ("per-link", "per-hop")


@dataclass(frozen=True)
class RouteCandidate:
    """One enumerated path: AAL in, POPs across, AAL out."""

    id: str
    site_a: str
    site_b: str
    pop_sequence: tuple[str, ...]
    link_sequence: tuple[str, ...]
    hop_count: int


@dataclass(frozen=True)
class Segment:
    """A contiguous probe-delimited slice of a route's link sequence."""

    route_id: str
    index: int
    links: tuple[str, ...]

    @property
    def segment_id(self) -> str:
        return f"{self.route_id}#{self.index}"


@dataclass
class SpectrumAssignment:
    """A continuity-satisfying channel pick, confirmed link by link."""

    route_id: str
    channel_index: int
    confirmed: dict[str, bool] = field(default_factory=dict)


def enumerate_routes(
    t: Topology, a: str, b: str, max_pops: int = DEFAULT_MAX_POPS
) -> list[RouteCandidate]:
    """All simple POP walks of length 2..max_pops joining ``a`` and ``b``.

    Where several access lines or carrier links join the same pair of
    sites, the lowest link id is used, so each POP sequence maps to exactly
    one candidate. Output is ordered by POP count then lexicographic POP
    ids, which makes the enumeration reproducible.
    """
    for sid in (a, b):
        if sid not in t.sites:
            raise UnknownSite(f"unknown site {sid}")
        if t.sites[sid].kind not in USER_SITE_KINDS:
            raise ValidationError(f"site {sid} is not a user site")
    if a == b:
        raise ValidationError("route endpoints must differ")
    if max_pops < 2:
        raise OutOfRange(f"max_pops must be >= 2, got {max_pops}")

    entry = _attach_points(t, a)
    exits = _attach_points(t, b)

    adjacency: dict[str, dict[str, OpticalLink]] = {}
    for link in sorted(t.links.values(), key=lambda l: l.id):
        if link.kind is LinkKind.CARRIER:
            p, q = link.ends
            adjacency.setdefault(p, {}).setdefault(q, link)
            adjacency.setdefault(q, {}).setdefault(p, link)

    sequences: list[tuple[str, ...]] = []

    def extend(path: list[str]) -> None:
        if len(path) >= 2 and path[-1] in exits:
            sequences.append(tuple(path))
        if len(path) >= max_pops:
            return
        for neighbor in sorted(adjacency.get(path[-1], {})):
            if neighbor not in path:
                path.append(neighbor)
                extend(path)
                path.pop()

    for start in sorted(entry):
        extend([start])
    sequences.sort(key=lambda seq: (len(seq), seq))

    routes = []
    for seq in sequences:
        link_ids = [entry[seq[0]].id]
        for p, q in zip(seq, seq[1:]):
            link_ids.append(adjacency[p][q].id)
        link_ids.append(exits[seq[-1]].id)
        routes.append(
            RouteCandidate(
                id="/".join((a, *seq, b)),
                site_a=a,
                site_b=b,
                pop_sequence=seq,
                link_sequence=tuple(link_ids),
                hop_count=len(link_ids),
            )
        )
    return routes


def _attach_points(t: Topology, site_id: str) -> dict[str, OpticalLink]:
    """POPs reachable from a user site, each with its lowest-id access line."""
    aals = t.aal_links_of(site_id)
    if not aals:
        raise NoAalAttachment(f"site {site_id} has no access line")
    points: dict[str, OpticalLink] = {}
    for link in aals:  # already in id order
        points.setdefault(link.other_end(site_id), link)
    return points


def decompose_segments(
    r: RouteCandidate, policy: str = "per-link"
) -> list[Segment]:
    """Split a route into QoT segments; both policies are one-per-link here.

    The per-hop policy exists for future segmentations that group an AAL
    with its first carrier link; with single-link hops it coincides with
    per-link, so the concatenation-covers-route invariant holds for both.
    """
    if policy not in SEGMENT_POLICIES:
        raise ValidationError(
            f"policy must be one of {list(SEGMENT_POLICIES)}, got {policy!r}"
        )
    return [
        Segment(route_id=r.id, index=i, links=(link_id,))
        for i, link_id in enumerate(r.link_sequence)
    ]


def assign_spectrum(
    t: Topology,
    r: RouteCandidate,
    occupancy: Mapping[str, AbstractSet[int]],
) -> SpectrumAssignment:
    """First-fit channel that is free on every carrier link of the route.

    Access lines carry a single channel by construction and do not
    constrain the pick. Confirmation flags start false; the provisioning
    protocol raises them per link at commit time.
    """
    carrier_ids = [
        lid for lid in r.link_sequence if t.links[lid].kind is LinkKind.CARRIER
    ]
    for lid in carrier_ids:
        if lid not in occupancy:
            raise ValidationError(f"occupancy snapshot missing carrier link {lid}")
    used: set[int] = set()
    for lid in carrier_ids:
        used.update(occupancy[lid])
    for channel in range(t.grid.count):
        if channel not in used:
            return SpectrumAssignment(
                route_id=r.id,
                channel_index=channel,
                confirmed={lid: False for lid in carrier_ids},
            )
    raise SpectrumExhausted(
        f"route {r.id}: no channel free on all of {', '.join(carrier_ids)}"
    )


@dataclass(frozen=True)
class RankedRoute:
    """A candidate with its concatenated end-to-end GSNR."""

    candidate: RouteCandidate
    gsnr: float

    @property
    def gsnr_db(self) -> float:
        return qot.lin_to_db(self.gsnr)


def rank_routes(
    candidates: Sequence[RouteCandidate],
    segment_gsnr: Mapping[str, float],
) -> list[RankedRoute]:
    """Order candidates by end-to-end GSNR, best first.

    ``segment_gsnr`` maps segment ids (per-link decomposition) to linear
    GSNR estimates. Ties fall back to fewer hops, then route id, so the
    result does not depend on input order beyond being a permutation of it.
    """
    ranked = []
    for candidate in candidates:
        per_segment = []
        for segment in decompose_segments(candidate):
            if segment.segment_id not in segment_gsnr:
                raise MissingSegmentData(
                    f"route {candidate.id}: no GSNR for segment {segment.segment_id}"
                )
            per_segment.append(segment_gsnr[segment.segment_id])
        ranked.append(
            RankedRoute(candidate=candidate, gsnr=qot.concatenate_gsnr(per_segment))
        )
    ranked.sort(key=lambda rr: (-rr.gsnr, rr.candidate.hop_count, rr.candidate.id))
    return ranked


def route_length_km(t: Topology, r: RouteCandidate) -> float:
    """Total fiber length along the route, for latency-style reporting."""
    return sum(t.links[lid].length_km for lid in r.link_sequence)
