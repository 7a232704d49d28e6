"""Building the simulated deployment from a scenario."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from contextmesh.broker.core import Broker, BrokerConfig
from contextmesh.broker.trace import Trace
from contextmesh.harness.config import ClientSpec, Host, Mode, ScenarioConfig, check_config
from contextmesh.harness.workload import Query, build_workload
from contextmesh.netsim import (
    ALWAYS_UP, AvailabilitySchedule, EnergyLedger, EnergyModel, Link, TransportClass,
)


@dataclass
class World:
    config: ScenarioConfig
    seed: int
    model: EnergyModel
    latencies: dict[TransportClass, int]
    schedule: AvailabilitySchedule
    brokers: dict[str, Broker]
    clients: dict[str, ClientSpec]
    home: dict[str, str]
    links: dict[tuple[str, str], Link]
    ledger: EnergyLedger
    trace: Trace
    queries: list[Query]
    device_broker: Optional[str] = None
    served_by: dict[str, str] = field(default_factory=dict)  # scope -> provider id

    @property
    def device_components(self) -> set[str]:
        return self.ledger.device_components

    def link(self, src: str, dst: str) -> Link:
        return self.links[(src, dst)]


def _gateway(cfg: ScenarioConfig) -> str:
    """Cloud broker adjacent to the device broker (or the first cloud broker)."""
    dev = cfg.device_broker
    cloud = [b.id for b in cfg.brokers if b.host is Host.CLOUD]
    if dev is not None:
        for a, b in cfg.edges:
            other = b if a == dev.id else a if b == dev.id else None
            if other in cloud:
                return other
    return cloud[0]


def home_broker(cfg: ScenarioConfig, client: ClientSpec) -> str:
    if client.broker is not None and not (client.host is Host.DEVICE and cfg.mode is Mode.NO_BROKER):
        return client.broker
    if client.host is Host.DEVICE and cfg.mode is Mode.BROKERED:
        return cfg.device_broker.id
    return _gateway(cfg)


def build_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, trace: bool = True) -> World:
    check_config(cfg)
    seed = cfg.workload.seed if seed is None else seed
    model, latencies = cfg.energy_model()
    a = cfg.availability
    schedule = AvailabilitySchedule(a.period_ms, a.up_fraction, a.phase_ms)
    tr = Trace(enabled=trace)

    broker_specs = [b for b in cfg.brokers
                    if not (cfg.mode is Mode.NO_BROKER and b.host is Host.DEVICE)]
    kept = {b.id for b in broker_specs}
    edges = [(x, y) for x, y in cfg.edges if x in kept and y in kept]
    neighbors = {b: set() for b in kept}
    for x, y in edges:
        neighbors[x].add(y)
        neighbors[y].add(x)
    host = {b.id: b.host for b in broker_specs}
    device_broker = next((b.id for b in broker_specs if b.host is Host.DEVICE), None)

    brokers = {}
    for b in broker_specs:
        bc = BrokerConfig(reg_exchange_interval_ms=cfg.reg_exchange_interval_ms,
                          bulk_mode=cfg.bulk_mode and b.host is Host.DEVICE,
                          cache_enabled=cfg.cache_enabled)
        brokers[b.id] = Broker(b.id, neighbors[b.id], bc, tr)

    clients = {c.id: c for c in cfg.clients}
    for c in cfg.clients:
        host[c.id] = c.host
    home = {c.id: home_broker(cfg, c) for c in cfg.clients}

    links = {}

    def connect(x: str, y: str) -> None:
        if host[x] is Host.DEVICE and host[y] is Host.DEVICE:
            cls, sched = cfg.local_transport, ALWAYS_UP
        else:
            cls = TransportClass.REMOTE_HTTP
            device_end = Host.DEVICE in (host[x], host[y])
            sched = schedule if device_end else ALWAYS_UP
        for s, d in ((x, y), (y, x)):
            links[(s, d)] = Link(s, d, cls, latencies[cls], sched)

    for x, y in edges:
        connect(x, y)
    for cid, b in home.items():
        connect(cid, b)

    device = {cid for cid, h in host.items() if h is Host.DEVICE}
    ledger = EnergyLedger(device_components=device)
    served_by = {s: c.id for c in cfg.clients if c.is_provider for s in c.served_scopes}
    return World(cfg, seed, model, latencies, schedule, brokers, clients, home, links, ledger, tr,
                 build_workload(cfg, seed), device_broker, served_by)
