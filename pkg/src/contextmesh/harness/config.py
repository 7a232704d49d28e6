"""Scenario configuration: dataclasses, defaults and the TOML scenario loader.

Field names in scenario files are exactly the dataclass field names below.
"""

from __future__ import annotations

import enum
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from contextmesh.broker.topology import TopologyError, validate_topology
from contextmesh.netsim import (
    EnergyModel, TransportClass, apply_overrides, calibrate_from_measurements, latency_problems,
)


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field (e.g. ``clients[3].served_scopes``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class Host(enum.Enum):
    DEVICE = "device"
    CLOUD = "cloud"


class Mode(enum.Enum):
    BROKERED = "broker"
    NO_BROKER = "nobroker"


@dataclass
class BrokerSpec:
    id: str
    host: Host


@dataclass
class ClientSpec:
    id: str
    host: Host
    role: str  # consumer | provider
    served_scopes: list[str] = field(default_factory=list)
    scope_of_interest: Optional[str] = None
    broker: Optional[str] = None  # home broker override; see world.home_broker

    @property
    def is_provider(self) -> bool:
        return self.role == "provider"


@dataclass
class ScopeSpec:
    name: str
    payload_bytes: int
    validity_ms: int


@dataclass
class WorkloadSpec:
    n_queries: int = 1000
    mean_interarrival_ms: float = 50.0
    seed: int = 0
    entities_per_scope: int = 1000
    start_ms: int = 1000


@dataclass
class DelaySpec:
    min_ms: int = 10
    max_ms: int = 2000


@dataclass
class AvailabilitySpec:
    up_fraction: float = 1.0
    period_ms: int = 60_000
    phase_ms: int = 0


@dataclass
class ScenarioConfig:
    brokers: list[BrokerSpec]
    edges: list[tuple[str, str]]
    clients: list[ClientSpec]
    scopes: list[ScopeSpec]
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    provider_delay: DelaySpec = field(default_factory=DelaySpec)
    availability: AvailabilitySpec = field(default_factory=AvailabilitySpec)
    mode: Mode = Mode.BROKERED
    bulk_mode: bool = False
    local_transport: TransportClass = TransportClass.LOCAL_HTTP
    duration_cap_ms: int = 3_600_000
    reg_exchange_interval_ms: int = 30_000
    housekeeping_interval_ms: int = 10_000
    poll_interval_ms: int = 1000
    cache_enabled: bool = True
    energy: dict[str, float] = field(default_factory=dict)
    allow_unconstrained_latency: bool = False

    def scope(self, name: str) -> ScopeSpec:
        for s in self.scopes:
            if s.name == name:
                return s
        raise KeyError(name)

    def energy_model(self) -> tuple[EnergyModel, dict[TransportClass, int]]:
        return apply_overrides(self.energy, calibrate_from_measurements())

    @property
    def device_broker(self) -> Optional[BrokerSpec]:
        found = [b for b in self.brokers if b.host is Host.DEVICE]
        return found[0] if found else None

    def with_overrides(self, **kwargs) -> ScenarioConfig:
        """Copy with top-level or ``section__field`` overrides, e.g. ``workload__n_queries=100``."""
        top, nested = {}, {}
        for key, value in kwargs.items():
            section, sep, name = key.partition("__")
            if sep:
                nested.setdefault(section, {})[name] = value
            else:
                top[key] = value
        for section, values in nested.items():
            top[section] = replace(getattr(self, section), **values)
        return replace(self, **top)


# -- default scenario -------------------------------------------------------------

SCOPE_SIZES = (750, 1000, 1500, 2000, 5000)
SCOPE_VALIDITY_S = (30, 60, 200, 350, 900)


def default_config() -> ScenarioConfig:
    scopes = []
    for prefix in ("devScope", "networkScope"):
        for i, (size, validity) in enumerate(zip(SCOPE_SIZES, SCOPE_VALIDITY_S), 1):
            scopes.append(ScopeSpec(f"{prefix}_{i}", size, validity * 1000))
    clients = []
    for i in range(1, 6):
        clients.append(ClientSpec(f"MCxC_{i}", Host.DEVICE, "consumer", scope_of_interest=f"devScope_{i}"))
    for i in range(1, 6):
        clients.append(ClientSpec(f"MCxC_{i + 5}", Host.DEVICE, "consumer",
                                  scope_of_interest=f"networkScope_{i}"))
    for i in range(1, 6):
        clients.append(ClientSpec(f"MCxP_{i}", Host.DEVICE, "provider", served_scopes=[f"devScope_{i}"]))
    for i in range(1, 6):
        clients.append(ClientSpec(f"NCxC_{i}", Host.CLOUD, "consumer", scope_of_interest=f"devScope_{i}"))
    for i in range(1, 6):
        clients.append(ClientSpec(f"NCxP_{i}", Host.CLOUD, "provider",
                                  served_scopes=[f"networkScope_{i}"]))
    return ScenarioConfig(
        brokers=[BrokerSpec("MCxB", Host.DEVICE), BrokerSpec("NCxB", Host.CLOUD)],
        edges=[("MCxB", "NCxB")],
        clients=clients,
        scopes=scopes,
    )


# -- validation -----------------------------------------------------------------

def validate_config(cfg: ScenarioConfig) -> list[ConfigError]:
    """All problems with ``cfg``; an empty list means it can be simulated."""
    errors: list[ConfigError] = []

    def err(path, message):
        errors.append(ConfigError(path, message))

    broker_ids = [b.id for b in cfg.brokers]
    try:
        validate_topology(broker_ids, cfg.edges)
    except TopologyError as exc:
        err("edges", str(exc))
    device = [b for b in cfg.brokers if b.host is Host.DEVICE]
    if len(device) > 1:
        err("brokers", "at most one device broker is supported")
    if not [b for b in cfg.brokers if b.host is Host.CLOUD]:
        err("brokers", "a cloud broker is required")
    if cfg.mode is Mode.BROKERED and not device:
        err("brokers", "broker mode needs a device broker")
    if device and not any(device[0].id in e and any(
            b.id in e and b.host is Host.CLOUD for b in cfg.brokers) for e in cfg.edges):
        err("edges", f"device broker {device[0].id} must neighbor a cloud broker")
    if cfg.bulk_mode and cfg.mode is not Mode.BROKERED:
        err("bulk_mode", "bulk mode requires the device broker (mode = broker)")

    scope_names = [s.name for s in cfg.scopes]
    for i, s in enumerate(cfg.scopes):
        if scope_names.count(s.name) > 1:
            err(f"scopes[{i}].name", f"duplicate scope {s.name!r}")
        if s.payload_bytes <= 0:
            err(f"scopes[{i}].payload_bytes", "must be > 0")
        if s.validity_ms <= 0:
            err(f"scopes[{i}].validity_ms", "must be > 0")

    ids = [c.id for c in cfg.clients] + broker_ids
    served: dict[str, list[str]] = {}
    for i, c in enumerate(cfg.clients):
        path = f"clients[{i}]"
        if ids.count(c.id) > 1:
            err(f"{path}.id", f"duplicate component id {c.id!r}")
        if c.role not in ("consumer", "provider"):
            err(f"{path}.role", f"unknown role {c.role!r}")
        elif c.is_provider:
            if not c.served_scopes:
                err(f"{path}.served_scopes", "a provider must serve at least one scope")
            for s in c.served_scopes:
                if s not in scope_names:
                    err(f"{path}.served_scopes", f"unknown scope {s!r}")
                served.setdefault(s, []).append(c.id)
        elif c.scope_of_interest is None:
            err(f"{path}.scope_of_interest", "a consumer needs a scope of interest")
        elif c.scope_of_interest not in scope_names:
            err(f"{path}.scope_of_interest", f"unknown scope {c.scope_of_interest!r}")
        if c.host is Host.DEVICE and not device:
            err(f"{path}.host", "device clients need a device broker to exist")
    for i, c in enumerate(cfg.clients):
        if c.role == "consumer" and c.scope_of_interest in scope_names:
            n = len(served.get(c.scope_of_interest, []))
            if n != 1:
                err(f"clients[{i}].scope_of_interest",
                    f"scope {c.scope_of_interest!r} is served by {n} providers, expected exactly 1")
    if not any(c.role == "consumer" for c in cfg.clients):
        err("clients", "at least one consumer is required")

    w = cfg.workload
    if w.n_queries < 1:
        err("workload.n_queries", "must be >= 1")
    if w.mean_interarrival_ms <= 0:
        err("workload.mean_interarrival_ms", "must be > 0")
    if w.entities_per_scope < 1:
        err("workload.entities_per_scope", "must be >= 1")
    if w.seed < 0:
        err("workload.seed", "must be >= 0")
    if w.start_ms < 0:
        err("workload.start_ms", "must be >= 0")
    d = cfg.provider_delay
    if not 0 < d.min_ms < d.max_ms:
        err("provider_delay", "need 0 < min_ms < max_ms")
    a = cfg.availability
    if not 0.5 <= a.up_fraction <= 1.0:
        err("availability.up_fraction", f"{a.up_fraction} outside [0.5, 1.0]")
    if a.period_ms <= 0:
        err("availability.period_ms", "must be > 0")
    if not cfg.local_transport.is_local:
        err("local_transport", "must be one of ipc, socket, http")
    for name in ("duration_cap_ms", "reg_exchange_interval_ms", "housekeeping_interval_ms",
                 "poll_interval_ms"):
        if getattr(cfg, name) <= 0:
            err(name, "must be > 0")
    try:
        _, latencies = cfg.energy_model()
    except ValueError as exc:
        err("energy", str(exc))
    else:
        for problem in latency_problems(latencies, cfg.allow_unconstrained_latency):
            err("energy", problem)
    return errors


def check_config(cfg: ScenarioConfig) -> ScenarioConfig:
    errors = validate_config(cfg)
    if errors:
        raise errors[0]
    return cfg


# -- TOML loading -----------------------------------------------------------------

def _enum(cls, value, path):
    try:
        if cls is TransportClass:
            return TransportClass.local(value)
        return cls(value)
    except (ValueError, TypeError):
        options = ", ".join(m.value for m in cls)
        raise ConfigError(path, f"{value!r} is not one of {options}") from None


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _section(cls, data: Any, path: str, converters: Optional[dict] = None):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a table")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(_join(path, sorted(unknown)[0]), "unknown field")
    kwargs = {}
    for key, value in data.items():
        conv = (converters or {}).get(key)
        kwargs[key] = conv(value, _join(path, key)) if conv else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _list_of(cls, converters=None):
    def convert(value, path):
        if not isinstance(value, list):
            raise ConfigError(path, "expected an array of tables")
        return [_section(cls, item, f"{path}[{i}]", converters) for i, item in enumerate(value)]
    return convert


def _edges(value, path):
    if not isinstance(value, list) or not all(
            isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e)
            for e in value):
        raise ConfigError(path, "expected a list of [brokerA, brokerB] pairs")
    return [tuple(e) for e in value]


def _energy(value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a table")
    flat = {}

    def walk(prefix, d):
        for k, v in d.items():
            key = f"{prefix}.{k}" if prefix else k
            if isinstance(v, dict):
                walk(key, v)
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                flat[key] = float(v)
            else:
                raise ConfigError(f"{path}.{key}", "expected a number")

    walk("", value)
    try:
        apply_overrides(flat)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    return flat


_HOST = lambda v, p: _enum(Host, v, p)  # noqa: E731

_CONVERTERS = {
    "brokers": _list_of(BrokerSpec, {"host": _HOST}),
    "edges": _edges,
    "clients": _list_of(ClientSpec, {"host": _HOST}),
    "scopes": _list_of(ScopeSpec),
    "workload": lambda v, p: _section(WorkloadSpec, v, p),
    "provider_delay": lambda v, p: _section(DelaySpec, v, p),
    "availability": lambda v, p: _section(AvailabilitySpec, v, p),
    "mode": lambda v, p: _enum(Mode, v, p),
    "local_transport": lambda v, p: _enum(TransportClass, v, p),
    "energy": _energy,
}


def config_from_dict(data: dict) -> ScenarioConfig:
    missing = [k for k in ("brokers", "edges", "clients", "scopes") if k not in data]
    if missing:
        raise ConfigError(missing[0], "required section missing")
    return _section(ScenarioConfig, data, "", _CONVERTERS)


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read scenario file: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    return config_from_dict(data)


def default_scenario_path() -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios" / "default.toml"


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-data view of ``cfg`` (enums as their values) for printing and comparison."""
    def plain(x):
        if isinstance(x, enum.Enum):
            return x.value
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        return x
    return plain(asdict(cfg))
