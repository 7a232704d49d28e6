"""Broker state-transition trace.

One tab-separated line per transition: simTimeMs, brokerId, event kind,
messageId, from, to, scope, subscriptionId, cacheHit flag. Empty fields
are written as ``-``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, TextIO

COLUMNS = ("simTimeMs", "brokerId", "kind", "messageId", "from", "to", "scope",
           "subscriptionId", "cacheHit")


@dataclass(frozen=True)
class TraceRecord:
    time: int
    broker: str
    kind: str
    message_id: Optional[str] = None
    src: Optional[str] = None
    dst: Optional[str] = None
    scope: Optional[str] = None
    subscription_id: Optional[str] = None
    cache_hit: bool = False

    def line(self) -> str:
        fields = (self.time, self.broker, self.kind, self.message_id, self.src, self.dst,
                  self.scope, self.subscription_id, int(self.cache_hit))
        return "\t".join("-" if f is None else str(f) for f in fields)

    @classmethod
    def parse(cls, line: str) -> TraceRecord:
        parts = [None if p == "-" else p for p in line.rstrip("\n").split("\t")]
        if len(parts) != len(COLUMNS):
            raise ValueError(f"trace line has {len(parts)} fields, expected {len(COLUMNS)}")
        return cls(int(parts[0]), parts[1], parts[2], parts[3], parts[4], parts[5], parts[6],
                   parts[7], parts[8] == "1")


class Trace:
    """Append-only list of records shared by the brokers of one run."""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[TraceRecord] = []

    def add(self, *args, **kwargs) -> None:
        if self.enabled:
            self.records.append(TraceRecord(*args, **kwargs))

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def lines(self) -> Iterable[str]:
        return (r.line() for r in self.records)

    def write(self, fh: TextIO) -> None:
        for line in self.lines():
            fh.write(line + "\n")

    def kinds(self, broker: Optional[str] = None) -> list[str]:
        return [r.kind for r in self.records if broker is None or r.broker == broker]
