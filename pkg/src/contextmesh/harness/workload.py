"""Seeded random streams and the query workload."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from contextmesh.harness.config import ScenarioConfig


class Rng:
    """Independent named substreams derived from one seed."""

    def __init__(self, seed: int):
        self.seed = seed

    def stream(self, name: str) -> np.random.Generator:
        key = zlib.crc32(name.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))


def generate_arrivals(n: int, mean_ms: float, stream: np.random.Generator) -> np.ndarray:
    """Cumulative arrival times with exponential gaps of the given mean (inverse transform)."""
    if n < 1 or mean_ms <= 0:
        raise ValueError("need n >= 1 and mean > 0")
    u = 1.0 - stream.random(n)  # uniform on (0, 1]
    gaps = -mean_ms * np.log(u)
    return np.cumsum(gaps)


def sample_provider_delay(stream: np.random.Generator, min_ms: int = 10, max_ms: int = 2000,
                          size=None):
    """Uniform delay on [min_ms, max_ms), floored to whole milliseconds."""
    d = np.floor(min_ms + (max_ms - min_ms) * stream.random(size)).astype(np.int64)
    return int(d) if size is None else d


@dataclass(frozen=True)
class Query:
    index: int
    time: int
    consumer: str
    scope: str
    entity_id: str
    provider_delay_ms: int

    @property
    def subscription_id(self) -> str:
        return f"q{self.index}"


def build_workload(cfg: ScenarioConfig, seed: int) -> list[Query]:
    """Queries with arrival times, round-robin consumers, target entities and provider delays.

    Every random quantity is drawn per query index, so runs of different modes on
    the same seed see the same queries and the same provider delays.
    """
    rng = Rng(seed)
    w = cfg.workload
    consumers = [c for c in cfg.clients if c.role == "consumer"]
    times = generate_arrivals(w.n_queries, w.mean_interarrival_ms, rng.stream("arrivals"))
    delays = sample_provider_delay(rng.stream("delays"), cfg.provider_delay.min_ms,
                                   cfg.provider_delay.max_ms, size=w.n_queries)
    entities = rng.stream("entities").integers(0, w.entities_per_scope, size=w.n_queries)
    queries = []
    for i in range(w.n_queries):
        c = consumers[i % len(consumers)]
        queries.append(Query(i, w.start_ms + int(np.rint(times[i])), c.id, c.scope_of_interest,
                             f"user{int(entities[i])}", int(delays[i])))
    return queries
