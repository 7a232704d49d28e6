"""Discrete-event simulation of a built world."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Any, Optional

from contextmesh.broker.core import Outbound
from contextmesh.broker.trace import Trace
from contextmesh.contextml.messages import (
    Bundle, ClientAdvertisement, Header, Notify, ProtocolMessage, Publish, Register, Role,
    Subscribe, SubTableUpdate, expires_at,
)
from contextmesh.contextml.model import Atom, ContextElement, EntityRef, is_fresh
from contextmesh.harness.config import Mode
from contextmesh.harness.metrics import Metrics
from contextmesh.harness.world import World
from contextmesh.matching import Priority, Subscription
from contextmesh.netsim import Delivered, TransportClass, deliver

PERIODIC = frozenset({"reg_exchange", "housekeeping", "edge"})
# Deadline timers can be superseded; a non-empty queue already counts as backlog.
PASSIVE = PERIODIC | {"bulk_deadline"}


@dataclass
class RunResult:
    metrics: Metrics
    trace: Trace
    world: World


def _contains_subscription(msg: ProtocolMessage) -> bool:
    if isinstance(msg, Bundle):
        return any(_contains_subscription(m) for m in msg.messages)
    return isinstance(msg, SubTableUpdate)


class Simulator:
    def __init__(self, world: World):
        self.w = world
        self.cfg = world.config
        self.events: list[tuple[int, int, str, Any]] = []
        self.seq = itertools.count()
        self.active = 0
        self.now = 0
        self.last_work = 0
        self.outbox: dict[str, list[ProtocolMessage]] = {}
        self.client_seq = itertools.count(1)
        self.subs: dict[str, Subscription] = {}
        self.query_of = {q.subscription_id: q for q in world.queries}
        self.satisfied: dict[str, int] = {}
        self.stale = 0
        self.duplicates = 0
        self.dropped = 0
        self.sub_calls = 0
        self.scheduled_call_times: list[int] = []  # charged calls on links that can go down
        self.down_since: Optional[int] = None
        self.bulk_timer: dict[str, Optional[int]] = {b: None for b in world.brokers}
        # Links whose availability varies, grouped by sending broker.
        self.scheduled_dests = {
            b: sorted(d for (s, d), link in world.links.items()
                      if s == b and not link.schedule.always_up)
            for b in world.brokers}
        self.device_clients_remote = sorted(
            c for c, h in world.home.items()
            if c in world.device_components and not world.link(c, h).cls.is_local)

    # -- event queue -----------------------------------------------------------

    def push(self, t: int, kind: str, data: Any = None) -> None:
        heapq.heappush(self.events, (t, next(self.seq), kind, data))
        if kind not in PASSIVE:
            self.active += 1

    def backlog(self) -> bool:
        return any(b.backlog() for b in self.w.brokers.values()) or any(self.outbox.values())

    # -- transport -------------------------------------------------------------

    def _client_header(self, client: str) -> Header:
        return Header(f"{client}#{next(self.client_seq)}", client, self.now)

    def transmit(self, o: Outbound) -> None:
        w = self.w
        link = w.link(o.src, o.dst)
        if not link.schedule.is_up(self.now):
            if o.src in w.brokers:
                w.brokers[o.src].defer(o.dst, o.message, self.now)
                self._arm_bulk_timer(o.src)
            else:
                self.outbox.setdefault(o.src, []).append(o.message)
            return
        result = deliver(o.message, link, self.now, w.ledger, w.model)
        assert isinstance(result, Delivered)
        if not link.schedule.always_up:
            self.scheduled_call_times.append(self.now)
        if o.src == w.device_broker and not link.cls.is_local and _contains_subscription(o.message):
            self.sub_calls += 1
        self.push(result.at, "deliver", o)

    def transmit_all(self, outs) -> None:
        for o in outs:
            self.transmit(o)

    # -- handlers --------------------------------------------------------------

    def on_register(self, client_id: str) -> None:
        spec = self.w.clients[client_id]
        role = Role.PROVIDER if spec.is_provider else Role.CONSUMER
        adv = ClientAdvertisement(client_id, f"sim://{client_id}", role,
                                  tuple(spec.served_scopes) if spec.is_provider else (), self.now)
        self.transmit(Outbound(client_id, self.w.home[client_id],
                               Register(self._client_header(client_id), adv)))

    def on_arrival(self, q) -> None:
        scope = self.cfg.scope(q.scope)
        sub = Subscription(
            q.subscription_id, q.consumer, q.scope, expiry=self.now + scope.validity_ms,
            entity=EntityRef("username", q.entity_id),
            priority=Priority.LOW if self.cfg.bulk_mode else Priority.HIGH, one_time=True)
        self.subs[sub.id] = sub
        self.transmit(Outbound(q.consumer, self.w.home[q.consumer],
                               Subscribe(self._client_header(q.consumer), sub)))

    def on_deliver(self, o: Outbound) -> None:
        w = self.w
        if o.dst in w.brokers:
            broker = w.brokers[o.dst]
            self.transmit_all(broker.receive(o.message, o.src, self.now))
            self._arm_bulk_timer(o.dst)
            return
        msgs = o.message.messages if isinstance(o.message, Bundle) else (o.message,)
        for m in msgs:
            self.client_receive(o.dst, m)

    def client_receive(self, client: str, msg: ProtocolMessage) -> None:
        if isinstance(msg, Notify):
            sub = self.subs.get(msg.subscription_id)
            if sub is None or sub.subscriber_id != client:
                return
            if not is_fresh(msg.element, self.now) or sub.expired(self.now):
                self.stale += 1
            elif sub.id in self.satisfied:
                self.duplicates += 1
            else:
                self.satisfied[sub.id] = self.now
        elif isinstance(msg, Subscribe):
            q = self.query_of.get(msg.subscription.id)
            delay = q.provider_delay_ms if q is not None else self.cfg.provider_delay.min_ms
            self.push(self.now + delay, "publish", (client, msg.subscription))

    def on_publish(self, data) -> None:
        provider, sub = data
        scope = self.cfg.scope(sub.scope)
        entity = sub.entity or EntityRef("username", "anyone")
        el = ContextElement(provider, entity, sub.scope,
                            (Atom("value", f"{sub.scope}/{entity.id}@{self.now}"),),
                            timestamp=self.now, expiry=self.now + scope.validity_ms,
                            payload_bytes=scope.payload_bytes)
        self.transmit(Outbound(provider, self.w.home[provider],
                               Publish(self._client_header(provider), el, (sub.id,))))

    def _arm_bulk_timer(self, broker_id: str) -> None:
        deadline = self.w.brokers[broker_id].bulk.deadline
        if deadline is not None and deadline != self.bulk_timer[broker_id]:
            self.bulk_timer[broker_id] = deadline
            self.push(max(deadline, self.now), "bulk_deadline", broker_id)
        elif deadline is None:
            self.bulk_timer[broker_id] = None

    def on_bulk_deadline(self, broker_id: str) -> bool:
        broker = self.w.brokers[broker_id]
        fired = broker.bulk.deadline is not None and broker.bulk.deadline <= self.now
        if fired:
            self.bulk_timer[broker_id] = None
            self.transmit_all(broker.on_bulk_deadline(self.now))
        self._arm_bulk_timer(broker_id)
        return fired

    def on_edge(self) -> None:
        w = self.w
        up = w.schedule.is_up(self.now)
        for b in sorted(w.brokers):
            for dest in self.scheduled_dests[b]:
                self.transmit_all(w.brokers[b].connectivity_changed(dest, up, self.now))
        if up:
            self._charge_polls(self.now)
            for client in self.device_clients_remote:
                queued = self.outbox.pop(client, [])
                for msg in queued:
                    t = expires_at(msg)
                    if t is not None and t <= self.now:
                        self.dropped += 1
                    else:
                        self.transmit(Outbound(client, w.home[client], msg))
        else:
            self.down_since = self.now

    def _charge_polls(self, until: int) -> None:
        if self.down_since is None:
            return
        polls = math.ceil((until - self.down_since) / self.cfg.poll_interval_ms)
        for client in self.device_clients_remote:
            for _ in range(polls):
                self.w.ledger.charge(client, self.w.model.cpu_poll_mj)
        self.down_since = None

    # -- main loop -------------------------------------------------------------

    def run(self, duration_cap: Optional[int] = None) -> RunResult:
        w, cfg = self.w, self.cfg
        cap = cfg.duration_cap_ms if duration_cap is None else duration_cap
        if w.device_broker is not None:
            w.ledger.charge(w.device_broker, w.model.broker_start_mj)
        for cid in sorted(w.clients):
            self.push(0, "register", cid)
        for q in w.queries:
            self.push(q.time, "arrival", q)
        for b in sorted(w.brokers):
            if w.brokers[b].neighbors:
                self.push(cfg.reg_exchange_interval_ms, "reg_exchange", b)
        self.push(cfg.housekeeping_interval_ms, "housekeeping")
        if not w.schedule.always_up:
            if not w.schedule.is_up(0):
                self.push(0, "edge")
            self.push(w.schedule.next_change(0), "edge")

        handlers = {
            "register": self.on_register, "arrival": self.on_arrival, "deliver": self.on_deliver,
            "publish": self.on_publish,
        }
        while self.events:
            t, _, kind, data = heapq.heappop(self.events)
            if t > cap:
                break
            self.now = t
            if kind == "bulk_deadline":
                if self.on_bulk_deadline(data):
                    self.last_work = t
                continue
            if kind not in PERIODIC:
                self.active -= 1
                self.last_work = t
                handlers[kind](data)
                continue
            if self.active == 0 and not self.backlog():
                continue  # quiescent: let periodic events lapse
            if kind == "reg_exchange":
                self.transmit_all(w.brokers[data].periodic_reg_exchange(t))
                self.push(t + cfg.reg_exchange_interval_ms, "reg_exchange", data)
            elif kind == "housekeeping":
                for b in sorted(w.brokers):
                    w.brokers[b].expire_housekeeping(t)
                self.push(t + cfg.housekeeping_interval_ms, "housekeeping")
            else:
                self.on_edge()
                self.push(w.schedule.next_change(t), "edge")
        end = self.last_work
        if self.down_since is not None:
            self._charge_polls(max(end, self.down_since))
        return RunResult(self._metrics(end), w.trace, w)

    def _metrics(self, end: int) -> Metrics:
        w, cfg = self.w, self.cfg
        hold = 0.0
        for b in w.brokers.values():
            if b.bulk.nonempty_since is not None:
                b.stats.bulk_hold_ms += end - b.bulk.nonempty_since
                b.bulk.nonempty_since = end
            if b.id == w.device_broker:
                hold += b.stats.bulk_hold_ms
        if hold:
            w.ledger.charge(w.device_broker, w.model.bulk_hold_mw * hold / 1000.0)

        serving = w.device_broker or w.home[next(c for c in sorted(w.clients)
                                                 if c in w.device_components)]
        stats = w.brokers[serving].stats
        expired = sum(1 for sid, s in self.subs.items()
                      if sid not in self.satisfied and s.expiry <= end)
        counts = w.ledger.call_counts
        return Metrics(
            mode=cfg.mode.value, bulk=cfg.bulk_mode, local_transport=cfg.local_transport.value,
            n_queries=cfg.workload.n_queries, availability=cfg.availability.up_fraction,
            seed=w.seed,
            device_energy_mj=w.ledger.device_mj, cloud_energy_mj=w.ledger.cloud_mj,
            queries_issued=len(self.subs), satisfied=len(self.satisfied),
            expired_unsatisfied=expired,
            pending_at_end=len(self.subs) - len(self.satisfied) - expired,
            cache_hits=stats.cache_hits, cache_misses=stats.cache_misses,
            msgs_ipc=counts[TransportClass.LOCAL_IPC], msgs_socket=counts[TransportClass.LOCAL_SOCKET],
            msgs_lhttp=counts[TransportClass.LOCAL_HTTP], msgs_rhttp=counts[TransportClass.REMOTE_HTTP],
            bulk_enqueued=stats.bulk_enqueued, bulk_flushes=stats.bulk_flushes,
            deadline_flushes=stats.deadline_flushes, subscription_network_calls=self.sub_calls,
            network_calls_while_down=sum(1 for t in self.scheduled_call_times
                                         if not w.schedule.is_up(t)),
            stale_notifications=self.stale, duplicate_notifications=self.duplicates,
            dropped_expired=self.dropped + sum(b.stats.dropped_expired for b in w.brokers.values()),
            duration_ms=end,
        )


def run(world: World, duration_cap: Optional[int] = None) -> RunResult:
    return Simulator(world).run(duration_cap)
