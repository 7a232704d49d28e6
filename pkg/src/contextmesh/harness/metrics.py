"""Run metrics, the CSV row format and run comparison."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from typing import Iterable, TextIO

CSV_COLUMNS = (
    "mode", "bulk", "localTransport", "nQueries", "availability", "seed", "deviceEnergy_mJ",
    "meanPerQuery_mJ", "hitRate", "msgs_IPC", "msgs_SOCKET", "msgs_LHTTP", "msgs_RHTTP",
    "satisfied", "droppedExpired", "durationMs",
)


class MismatchedWorkload(ValueError):
    pass


@dataclass
class Metrics:
    mode: str
    bulk: bool
    local_transport: str
    n_queries: int
    availability: float
    seed: int
    device_energy_mj: float = 0.0
    cloud_energy_mj: float = 0.0
    queries_issued: int = 0
    satisfied: int = 0
    expired_unsatisfied: int = 0
    pending_at_end: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    msgs_ipc: int = 0
    msgs_socket: int = 0
    msgs_lhttp: int = 0
    msgs_rhttp: int = 0
    bulk_enqueued: int = 0
    bulk_flushes: int = 0
    deadline_flushes: int = 0
    subscription_network_calls: int = 0
    network_calls_while_down: int = 0
    stale_notifications: int = 0
    duplicate_notifications: int = 0
    dropped_expired: int = 0
    duration_ms: int = 0

    @property
    def hit_rate(self) -> float:
        lookups = self.cache_hits + self.cache_misses
        return self.cache_hits / lookups if lookups else 0.0

    @property
    def mean_per_query_mj(self) -> float:
        return self.device_energy_mj / self.queries_issued if self.queries_issued else 0.0

    @property
    def per_satisfied_mj(self) -> float:
        return self.device_energy_mj / self.satisfied if self.satisfied else float("inf")

    def csv_row(self) -> dict:
        return {
            "mode": self.mode, "bulk": int(self.bulk), "localTransport": self.local_transport,
            "nQueries": self.n_queries, "availability": f"{self.availability:g}", "seed": self.seed,
            "deviceEnergy_mJ": f"{self.device_energy_mj:.3f}",
            "meanPerQuery_mJ": f"{self.mean_per_query_mj:.4f}", "hitRate": f"{self.hit_rate:.4f}",
            "msgs_IPC": self.msgs_ipc, "msgs_SOCKET": self.msgs_socket,
            "msgs_LHTTP": self.msgs_lhttp, "msgs_RHTTP": self.msgs_rhttp,
            "satisfied": self.satisfied, "droppedExpired": self.dropped_expired,
            "durationMs": self.duration_ms,
        }

    def summary(self) -> str:
        return (f"mode={self.mode} bulk={int(self.bulk)} transport={self.local_transport} "
                f"queries={self.n_queries} availability={self.availability:g} seed={self.seed} "
                f"device={self.device_energy_mj / 1000:.3f}J perQuery={self.mean_per_query_mj:.2f}mJ "
                f"hitRate={self.hit_rate:.3f} satisfied={self.satisfied}/{self.queries_issued} "
                f"duration={self.duration_ms}ms")


def write_csv(rows: Iterable[dict], fh: TextIO, header: bool = True,
              columns: tuple[str, ...] = CSV_COLUMNS) -> None:
    writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
    if header:
        writer.writeheader()
    for row in rows:
        writer.writerow(row)


def csv_text(metrics: Iterable[Metrics]) -> str:
    buf = io.StringIO()
    write_csv((m.csv_row() for m in metrics), buf)
    return buf.getvalue()


_NUMERIC = [f.name for f in fields(Metrics)
            if f.type in ("int", "float") and f.name not in ("n_queries", "seed")]


@dataclass
class Comparison:
    deltas: dict[str, float]
    ratios: dict[str, float]
    device_energy_winner: str  # "A", "B" or "tie"


def compare_runs(a: Metrics, b: Metrics) -> Comparison:
    """Field-wise B - A differences and B / A ratios; the lower device energy wins."""
    if a.n_queries != b.n_queries:
        raise MismatchedWorkload(f"workloads differ: {a.n_queries} vs {b.n_queries} queries")
    va, vb = asdict(a), asdict(b)
    names = _NUMERIC + ["hit_rate", "mean_per_query_mj"]
    va.update(hit_rate=a.hit_rate, mean_per_query_mj=a.mean_per_query_mj)
    vb.update(hit_rate=b.hit_rate, mean_per_query_mj=b.mean_per_query_mj)
    deltas = {n: vb[n] - va[n] for n in names}
    ratios = {n: (vb[n] / va[n] if va[n] else (1.0 if vb[n] == va[n] else float("inf")))
              for n in names}
    if a.device_energy_mj == b.device_energy_mj:
        winner = "tie"
    else:
        winner = "A" if a.device_energy_mj < b.device_energy_mj else "B"
    return Comparison(deltas, ratios, winner)
