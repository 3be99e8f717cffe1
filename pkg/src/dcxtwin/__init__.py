"""Digital-twin control plane for data-center interconnect optical paths.

Layered bottom-up: ``qot`` (signal-quality math), ``netmodel`` (domain
types + YAML ingestion), ``modes`` (transceiver catalogs), ``routing``
(POP-overlay paths + spectrum), ``linetwin`` (deterministic line
simulation), ``monitor`` (localization, calibration, optimization),
``protocol`` (user–carrier provisioning machines), and ``gateway``
(HTTP/JSON service, event log, scenarios, CLI).
"""

from . import errors, linetwin, modes, monitor, netmodel, protocol, qot, routing

__all__ = [
    "errors",
    "linetwin",
    "modes",
    "monitor",
    "netmodel",
    "protocol",
    "qot",
    "routing",
]

__version__ = "0.1.0"
