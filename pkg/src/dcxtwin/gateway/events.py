"""Append-only event log with snapshot-checked deterministic replay.

Every mutation of the control plane is recorded as one event carrying
three things: a human-readable payload, the list of state *effects* (set
or delete of a path in the state tree), and the full state snapshot after
applying them. State is therefore a pure fold of effects over the initial
state, and :func:`replay_events` re-runs that fold, verifying gapless
sequence numbers and per-record snapshot equality as it goes. Persistence
is newline-delimited JSON so logs diff and golden-file cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..errors import CorruptLog, ValidationError
from ..protocol import canonical_json

EVENT_KINDS = ("session", "fault", "calibration", "decision", "settings")

_RECORD_FIELDS = ("seq", "timestamp", "kind", "payload", "effects", "state")


def initial_state() -> dict:
    """The empty control-plane state every log starts from."""
    return {
        "occupancy": {},
        "sessions": {},
        "faults": {},
        "settings": {},
        "calibrations": {},
        "devices": {},
    }


def apply_effects(state: Mapping, effects: Iterable[Mapping]) -> dict:
    """Pure fold step: apply set/delete effects, returning a new state."""
    new = json.loads(canonical_json(state))
    for effect in effects:
        path = list(effect["path"])
        if not path:
            raise ValidationError("effect path must be non-empty")
        node = new
        for key in path[:-1]:
            node = node.setdefault(key, {})
        if effect.get("delete"):
            node.pop(path[-1], None)
        else:
            node[path[-1]] = effect["value"]
    return new


@dataclass(frozen=True)
class EventRecord:
    seq: int
    timestamp: int
    kind: str
    payload: Mapping
    effects: tuple
    state: Mapping

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "payload": self.payload,
            "effects": list(self.effects),
            "state": self.state,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def _record_from_dict(doc: Mapping, where: str) -> EventRecord:
    missing = [k for k in _RECORD_FIELDS if k not in doc]
    if missing:
        raise CorruptLog(f"{where}: record missing fields {missing}")
    if doc["kind"] not in EVENT_KINDS:
        raise CorruptLog(f"{where}: unknown event kind {doc['kind']!r}")
    return EventRecord(
        seq=int(doc["seq"]),
        timestamp=int(doc["timestamp"]),
        kind=str(doc["kind"]),
        payload=doc["payload"],
        effects=tuple(doc["effects"]),
        state=doc["state"],
    )


class EventLog:
    """In-memory append-only log, optionally mirrored line-by-line to disk."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: list[EventRecord] = []
        self._state = initial_state()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    @property
    def state(self) -> dict:
        """The current folded state (same object the last record stores)."""
        return self._state

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else 0

    def append(self, kind: str, payload: Mapping, effects: Sequence[Mapping]) -> EventRecord:
        if kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {kind!r}")
        self._state = apply_effects(self._state, effects)
        seq = self.last_seq + 1
        record = EventRecord(
            seq=seq,
            timestamp=seq,
            kind=kind,
            payload=json.loads(canonical_json(payload)),
            effects=tuple(json.loads(canonical_json(list(effects)))),
            state=self._state,
        )
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(record.to_json() + "\n")
        return record

    def since(self, seq: int) -> list[EventRecord]:
        return [r for r in self.records if r.seq > seq]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def write_jsonl(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(self.to_jsonl())
        return out


def load_records(path: str | Path) -> list[EventRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"line {lineno}: not valid JSON ({exc})") from exc
        records.append(_record_from_dict(doc, f"line {lineno}"))
    return records


def replay_events(source: str | Path | Sequence[EventRecord]) -> dict:
    """Reconstruct state by folding the log; verify it against snapshots.

    Raises CorruptLog on a sequence gap, a schema violation, or any record
    whose stored snapshot differs from the fold up to that point. An empty
    log reconstructs the initial state.
    """
    if isinstance(source, (str, Path)):
        records: Sequence[EventRecord] = load_records(source)
    else:
        records = source
    state = initial_state()
    last_seq = 0
    for record in records:
        if record.seq != last_seq + 1:
            raise CorruptLog(
                f"sequence gap: expected {last_seq + 1}, found {record.seq}"
            )
        state = apply_effects(state, record.effects)
        if state != record.state:
            raise CorruptLog(f"snapshot mismatch at seq {record.seq}")
        last_seq = record.seq
    return state
