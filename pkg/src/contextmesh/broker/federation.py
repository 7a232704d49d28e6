"""Instant-delivery driver for a set of brokers and their clients.

Messages are delivered in FIFO order with no latency and no link failures.
It is meant for protocol tests, where the exact message sequence matters and
energy does not.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from contextmesh.broker.core import Broker, BrokerConfig, Outbound
from contextmesh.broker.topology import validate_topology
from contextmesh.broker.trace import Trace
from contextmesh.contextml.messages import (
    Bundle, ClientAdvertisement, Header, Notify, ProtocolMessage, Publish, Register, Subscribe,
)
from contextmesh.contextml.model import ContextElement
from contextmesh.matching import Subscription


@dataclass
class Delivery:
    time: int
    client_id: str
    message: ProtocolMessage


@dataclass
class Federation:
    brokers: dict[str, Broker]
    trace: Trace
    home: dict[str, str] = field(default_factory=dict)  # client id -> broker id
    inbox: list[Delivery] = field(default_factory=list)
    sent: list[Outbound] = field(default_factory=list)

    @classmethod
    def build(cls, broker_ids: Iterable[str], edges: Iterable[tuple[str, str]] = (),
              config: Optional[BrokerConfig] = None) -> Federation:
        broker_ids, edges = list(broker_ids), list(edges)
        validate_topology(broker_ids, edges)
        trace = Trace()
        neighbors = {b: set() for b in broker_ids}
        for a, b in edges:
            neighbors[a].add(b)
            neighbors[b].add(a)
        brokers = {b: Broker(b, neighbors[b], config or BrokerConfig(), trace) for b in broker_ids}
        return cls(brokers, trace)

    def _header(self, sender: str, now: int) -> Header:
        return Header(f"{sender}#{len(self.sent) + len(self.inbox)}", sender, now)

    def run(self, outbound: Iterable[Outbound], now: int) -> None:
        queue = deque(outbound)
        while queue:
            o = queue.popleft()
            self.sent.append(o)
            if o.dst in self.brokers:
                queue.extend(self.brokers[o.dst].receive(o.message, o.src, now))
            else:
                msgs = o.message.messages if isinstance(o.message, Bundle) else (o.message,)
                self.inbox.extend(Delivery(now, o.dst, m) for m in msgs)

    def register(self, broker_id: str, adv: ClientAdvertisement, now: int = 0) -> None:
        self.home[adv.client_id] = broker_id
        msg = Register(self._header(adv.client_id, now), adv)
        self.run([Outbound(adv.client_id, broker_id, msg)], now)

    def subscribe(self, sub: Subscription, now: int) -> None:
        client = sub.subscriber_id
        msg = Subscribe(self._header(client, now), sub)
        self.run([Outbound(client, self.home[client], msg)], now)

    def publish(self, element: ContextElement, now: int, matched=()) -> None:
        provider = element.provider_id
        msg = Publish(self._header(provider, now), element, tuple(matched))
        self.run([Outbound(provider, self.home[provider], msg)], now)

    def exchange(self, now: int) -> None:
        for b in sorted(self.brokers):
            self.run(self.brokers[b].periodic_reg_exchange(now), now)

    def notifications(self) -> list[tuple[str, ContextElement]]:
        return [(d.client_id, d.message.element) for d in self.inbox
                if isinstance(d.message, Notify)]

    def subscriptions_received(self, provider_id: str) -> list[Subscription]:
        return [d.message.subscription for d in self.inbox
                if d.client_id == provider_id and isinstance(d.message, Subscribe)]
