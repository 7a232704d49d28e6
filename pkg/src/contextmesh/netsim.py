"""Simulated transports, availability schedules and the per-call energy model.

Per-call costs are calibrated from measured totals of request-reply calls
between two processes on one handset (``MEASURED``): for each transport and
role the per-call cost is the mean, over the four measured rows, of the row
total divided by its call count.

Those measurements were taken over loopback, so they cover CPU only. Calls
that leave the device additionally pay ``radio_per_call_mj`` on the device
side (Wi-Fi), which is what makes a device-side broker and its cache pay off.
"""

from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Union

from contextmesh.contextml.messages import ProtocolMessage, payload_bytes


class TransportClass(enum.Enum):
    LOCAL_IPC = "ipc"
    LOCAL_SOCKET = "socket"
    LOCAL_HTTP = "http"
    REMOTE_HTTP = "remote_http"

    @property
    def is_local(self) -> bool:
        return self is not TransportClass.REMOTE_HTTP

    @classmethod
    def local(cls, name: str) -> TransportClass:
        """Map a CLI/config name (ipc, socket, http) to its local transport class."""
        try:
            cls_ = cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown local transport {name!r}; use ipc, socket or http") from None
        if not cls_.is_local:
            raise ValueError(f"{name!r} is not a local transport")
        return cls_


class CallRole(enum.Enum):
    CALLER = "CALLER"
    CALLEE = "CALLEE"


# Measured totals in joules: {mechanism: (calls, server/callee J, client/caller J)}.
MEASURED_CALLS = (500, 1000, 2000, 3000)
MEASURED = {
    "IPC": {"server": (0.092, 0.147, 0.554, 0.603), "client": (0.034, 0.116, 0.311, 0.482)},
    "HTTP": {"server": (4.08, 8.03, 15.65, 27.33), "client": (4.52, 8.79, 17.15, 22.7)},
    "Sockets": {"server": (1.32, 2.87, 4.82, 7.456), "client": (0.998, 1.76, 3.52, 6.145)},
}
_MECHANISM = {
    TransportClass.LOCAL_IPC: "IPC",
    TransportClass.LOCAL_SOCKET: "Sockets",
    TransportClass.LOCAL_HTTP: "HTTP",
    TransportClass.REMOTE_HTTP: "HTTP",
}
_TABLE_ROLE = {CallRole.CALLEE: "server", CallRole.CALLER: "client"}


def row_totals_j(mechanism: str) -> list[float]:
    """Caller + callee joules for each measured row."""
    t = MEASURED[mechanism]
    return [s + c for s, c in zip(t["server"], t["client"])]


def per_call_rows_mj(mechanism: str, role: Optional[str] = None) -> list[float]:
    """Per-call millijoules for each row; ``role`` of None means caller + callee."""
    totals = row_totals_j(mechanism) if role is None else MEASURED[mechanism][role]
    return [1000.0 * j / n for j, n in zip(totals, MEASURED_CALLS)]


def row_ratios(numerator: str, denominator: str = "IPC") -> list[float]:
    return [a / b for a, b in zip(row_totals_j(numerator), row_totals_j(denominator))]


def ratio_of_means(numerator: str, denominator: str = "IPC") -> float:
    num = per_call_rows_mj(numerator)
    den = per_call_rows_mj(denominator)
    return (sum(num) / len(num)) / (sum(den) / len(den))


@dataclass
class EnergyModel:
    """Per-call costs plus the device-side terms the loopback measurements cannot see.

    ``broker_start_mj`` is charged once to a device broker when it starts, and
    ``bulk_hold_mw`` accrues while its bulk queue holds work (the broker must
    stay awake until the queue is flushed).
    """

    per_call_mj: dict[tuple[TransportClass, CallRole], float]
    per_byte_mj: float = 0.0
    cpu_poll_mj: float = 0.05
    radio_per_call_mj: float = 80.0
    broker_start_mj: float = 20000.0
    bulk_hold_mw: float = 600.0

    def __post_init__(self):
        for key, value in self.per_call_mj.items():
            if value < 0:
                raise ValueError(f"negative per-call cost for {key}")
        for name in ("per_byte_mj", "cpu_poll_mj", "radio_per_call_mj", "broker_start_mj",
                     "bulk_hold_mw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def per_call(self, cls: TransportClass, role: CallRole) -> float:
        return self.per_call_mj[(cls, role)]

    def per_call_total(self, cls: TransportClass) -> float:
        return self.per_call(cls, CallRole.CALLER) + self.per_call(cls, CallRole.CALLEE)

    def callee_share(self, cls: TransportClass) -> float:
        return self.per_call(cls, CallRole.CALLEE) / self.per_call_total(cls)

    def class_ordering_holds(self) -> bool:
        ipc, sock, http = (TransportClass.LOCAL_IPC, TransportClass.LOCAL_SOCKET,
                           TransportClass.LOCAL_HTTP)
        return all(self.per_call(ipc, r) < self.per_call(sock, r) < self.per_call(http, r)
                   for r in CallRole)


def calibrate_from_measurements() -> EnergyModel:
    per_call = {}
    for cls, mech in _MECHANISM.items():
        for role, column in _TABLE_ROLE.items():
            rows = per_call_rows_mj(mech, column)
            per_call[(cls, role)] = sum(rows) / len(rows)
    return EnergyModel(per_call)


# -- latency -------------------------------------------------------------------

SOCKET_OVER_IPC_MIN = 3.0
HTTP_OVER_IPC_MIN = 15.0


def default_latencies() -> dict[TransportClass, int]:
    return {
        TransportClass.LOCAL_IPC: 2,
        TransportClass.LOCAL_SOCKET: 6,
        TransportClass.LOCAL_HTTP: 30,
        TransportClass.REMOTE_HTTP: 50,
    }


def latency_problems(latencies: Mapping[TransportClass, float],
                     allow_unconstrained: bool = False) -> list[str]:
    """Violations of the latency rules; empty when the map is acceptable."""
    problems = []
    missing = set(TransportClass) - set(latencies)
    if missing:
        problems.append(f"missing latency for {sorted(c.name for c in missing)}")
        return problems
    for cls, value in latencies.items():
        if value <= 0:
            problems.append(f"latency.{cls.name} must be > 0")
    if problems or allow_unconstrained:
        return problems
    ipc = latencies[TransportClass.LOCAL_IPC]
    if latencies[TransportClass.LOCAL_SOCKET] < SOCKET_OVER_IPC_MIN * ipc:
        problems.append(f"latency.LOCAL_SOCKET must be >= {SOCKET_OVER_IPC_MIN:g} x LOCAL_IPC")
    if latencies[TransportClass.LOCAL_HTTP] < HTTP_OVER_IPC_MIN * ipc:
        problems.append(f"latency.LOCAL_HTTP must be >= {HTTP_OVER_IPC_MIN:g} x LOCAL_IPC")
    if latencies[TransportClass.REMOTE_HTTP] < latencies[TransportClass.LOCAL_HTTP]:
        problems.append("latency.REMOTE_HTTP must be >= LOCAL_HTTP")
    return problems


# -- override files ------------------------------------------------------------

def load_overrides(path: Union[str, Path], model: Optional[EnergyModel] = None,
                   latencies: Optional[dict[TransportClass, int]] = None,
                   ) -> tuple[EnergyModel, dict[TransportClass, int]]:
    """Apply a flat ``key=value`` override file to a model and latency map.

    Keys: ``percall.<CLASS>.<ROLE>`` (mJ), ``latency.<CLASS>`` (ms), ``perByte``,
    ``cpuPoll``, ``radioPerCall``, ``brokerStart`` (mJ) and ``bulkHold`` (mW).
    """
    text = Path(path).read_text(encoding="utf-8")
    return apply_overrides(parse_overrides(text, str(path)), model, latencies)


def parse_overrides(text: str, source: str = "<overrides>") -> dict[str, float]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected key=value")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise ValueError(f"{source}:{lineno}: {value.strip()!r} is not a number") from None
    return values


_SCALARS = {"perByte": "per_byte_mj", "cpuPoll": "cpu_poll_mj", "radioPerCall": "radio_per_call_mj",
            "brokerStart": "broker_start_mj", "bulkHold": "bulk_hold_mw"}


def apply_overrides(values: Mapping[str, float], model: Optional[EnergyModel] = None,
                    latencies: Optional[dict[TransportClass, int]] = None,
                    ) -> tuple[EnergyModel, dict[TransportClass, int]]:
    model = model or calibrate_from_measurements()
    latencies = dict(latencies or default_latencies())
    per_call = dict(model.per_call_mj)
    scalars = {}
    for key, value in values.items():
        parts = key.split(".")
        try:
            if parts[0] == "percall" and len(parts) == 3:
                per_call[(TransportClass[parts[1]], CallRole[parts[2]])] = value
            elif parts[0] == "latency" and len(parts) == 2:
                latencies[TransportClass[parts[1]]] = value
            elif key in _SCALARS:
                scalars[_SCALARS[key]] = value
            else:
                raise KeyError(key)
        except KeyError:
            raise ValueError(f"unknown override key {key!r}") from None
    return replace(model, per_call_mj=per_call, **scalars), latencies


# -- links and availability ----------------------------------------------------

@dataclass(frozen=True)
class AvailabilitySchedule:
    """Deterministic periodic window: up for the first ``up_fraction`` of each period."""

    period_ms: int = 60_000
    up_fraction: float = 1.0
    phase_ms: int = 0

    def __post_init__(self):
        if self.period_ms <= 0:
            raise ValueError("period must be > 0")
        if not 0.5 <= self.up_fraction <= 1.0:
            raise ValueError(f"up fraction {self.up_fraction} outside [0.5, 1.0]")

    @property
    def up_ms(self) -> float:
        # rounded so that e.g. 0.55 * 100 lands exactly on 55
        return round(self.up_fraction * self.period_ms, 9)

    @property
    def always_up(self) -> bool:
        return self.up_fraction >= 1.0

    def is_up(self, now: float) -> bool:
        return self.always_up or (now - self.phase_ms) % self.period_ms < self.up_ms

    def next_change(self, now: float) -> Optional[int]:
        """First integer time strictly after ``now`` at which the state flips."""
        if self.always_up:
            return None
        k = math.floor((now - self.phase_ms) / self.period_ms)
        start = self.phase_ms + k * self.period_ms
        for edge in (start + self.up_ms, start + self.period_ms, start + self.period_ms + self.up_ms):
            t = math.ceil(edge)
            if t > now:
                return t
        raise AssertionError("unreachable")

    def up_time(self, start: float, end: float) -> float:
        """Total up time in [start, end)."""
        if self.always_up:
            return end - start

        def cumulative(t: float) -> float:
            k, r = divmod(t - self.phase_ms, self.period_ms)
            return k * self.up_ms + min(r, self.up_ms)

        return cumulative(end) - cumulative(start)


ALWAYS_UP = AvailabilitySchedule()


@dataclass(frozen=True)
class Link:
    src: str
    dst: str
    cls: TransportClass
    latency_ms: int
    schedule: AvailabilitySchedule = ALWAYS_UP

    def __post_init__(self):
        if self.latency_ms <= 0:
            raise ValueError("link latency must be > 0")


@dataclass
class EnergyLedger:
    """Accumulated energy per component; components on the device are tracked separately."""

    device_components: set[str] = field(default_factory=set)
    energy_mj: dict[str, float] = field(default_factory=lambda: defaultdict(float))
    call_counts: Counter = field(default_factory=Counter)

    def charge(self, component: str, mj: float) -> None:
        if mj < 0:
            raise ValueError("energy charges must be non-negative")
        self.energy_mj[component] += mj

    def on_device(self, component: str) -> bool:
        return component in self.device_components

    @property
    def device_mj(self) -> float:
        return sum(v for k, v in self.energy_mj.items() if k in self.device_components)

    @property
    def cloud_mj(self) -> float:
        return sum(v for k, v in self.energy_mj.items() if k not in self.device_components)

    @property
    def total_mj(self) -> float:
        return sum(self.energy_mj.values())


def charge_call(ledger: EnergyLedger, link: Link, payload_bytes: int, model: EnergyModel) -> None:
    """Charge one request-reply call over ``link`` to both endpoints."""
    byte_cost = payload_bytes * model.per_byte_mj
    for component, role in ((link.src, CallRole.CALLER), (link.dst, CallRole.CALLEE)):
        cost = model.per_call(link.cls, role) + byte_cost
        if not link.cls.is_local and ledger.on_device(component):
            cost += model.radio_per_call_mj
        ledger.charge(component, cost)
    ledger.call_counts[link.cls] += 1


@dataclass(frozen=True)
class Delivered:
    at: int


@dataclass(frozen=True)
class Refused:
    reason: str = "link down"


def deliver(msg: ProtocolMessage, link: Link, now: int, ledger: EnergyLedger,
            model: EnergyModel) -> Union[Delivered, Refused]:
    """Put ``msg`` on ``link``: charged and delivered after the latency if the link is up."""
    if not link.schedule.is_up(now):
        return Refused()
    charge_call(ledger, link, payload_bytes(msg), model)
    return Delivered(now + link.latency_ms)
