"""Exception hierarchy shared across the control-plane packages.

Every error raised by this library derives from :class:`DcxError` so callers
can catch one base class at API boundaries. Subclasses carry enough context
in their message to be actionable (offending key, id, or value).
"""

from __future__ import annotations


class DcxError(Exception):
    """Base class for all errors raised by dcxtwin."""


class ParseError(DcxError):
    """Input document could not be parsed at all (bad YAML/JSON)."""


class ValidationError(DcxError):
    """Parsed input violates the schema or a semantic rule.

    Attributes:
        path: dotted location of the offending element, when known.
    """

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class UnknownSite(DcxError):
    """A site id was referenced that the topology does not define."""


class UnknownTarget(DcxError):
    """A link, EDFA, fault, session or other addressable id is unknown."""


class OutOfRange(DcxError):
    """A numeric argument lies outside its mathematical domain."""


class PowerOutOfRange(DcxError):
    """A power level violates a device limit or a mode's receive window."""


class DegenerateDispersion(DcxError):
    """Fiber dispersion is too close to zero for the nonlinear model."""


class NonPhysical(DcxError):
    """A fitted or supplied physical quantity came out non-physical."""


class TrxDominated(DcxError):
    """Transceiver noise exceeds the measured total; deduction impossible."""


class EmptyList(DcxError):
    """An aggregate operation received no elements."""


class Underdetermined(DcxError):
    """A fit or calibration lacks the observability to identify its unknowns."""


class NoFeasibleMode(DcxError):
    """No transceiver mode satisfies the SNR margin and receive-power window."""


class NoCommonMode(DcxError):
    """Two catalogs share no interoperable mode."""


class NoInteroperableMode(DcxError):
    """Provisioning failed because the endpoints share no usable mode."""


class NoAalAttachment(DcxError):
    """A user site has no access link into any carrier POP."""


class SpectrumExhausted(DcxError):
    """No spectrum slot is free on every link of the requested route."""


class MissingSegmentData(DcxError):
    """A route is missing the per-segment measurements needed to rank it."""


class GridMismatch(DcxError):
    """Two artifacts were built against different channel grids."""


class NoBaseline(DcxError):
    """An operation that compares against a baseline has none recorded."""


class UnknownFault(DcxError):
    """A fault id was referenced that is not currently active."""


class NegativeLength(DcxError):
    """A length, delay, or resolution that must be positive is not."""


class ProtocolViolation(DcxError):
    """A session received a message its current state cannot accept."""


class NotPending(DcxError):
    """A decision was submitted for a session not awaiting approval."""


class AuthFailed(DcxError):
    """Transceiver registration was rejected by the allowlist."""


class InconsistentPriors(DcxError):
    """Prior information supplied to an estimator contradicts itself."""


class StepFailure(DcxError):
    """A scenario step could not be executed."""


class BindFailure(DcxError):
    """A network port could not be bound."""


class InfeasibleRanges(DcxError):
    """Device adjustment ranges leave no lattice point to search."""


class CorruptLog(DcxError):
    """An event log fails its integrity checks (gap, schema, or digest)."""
