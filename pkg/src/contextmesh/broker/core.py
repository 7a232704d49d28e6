"""The broker state machine.

A ``Broker`` owns one node of the federation: its registration table, its
subscription table, a TTL cache, the bulk queue and per-destination outboxes
for links that are down. Every operation returns the messages to put on the
wire as ``Outbound`` values; the caller (a test driver or the simulator) is
responsible for delivering them.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from typing import Optional, Union

from contextmesh.broker.trace import Trace
from contextmesh.contextml.messages import (
    Bundle, ClientAdvertisement, Forward, Header, LookupReply, LookupRequest, Notify,
    ProtocolMessage, Publish, Register, Registration, RegTableUpdate, Subscribe, SubTableUpdate,
    expires_at,
)
from contextmesh.contextml.model import Atom, ContextElement, EntityRef, ScopeRegistry, is_fresh
from contextmesh.matching import Callback, Priority, Subscription, matches


class BrokerError(Exception):
    pass


class DuplicateClientId(BrokerError):
    pass


class UnknownClient(BrokerError):
    pass


class ExpiredSubscription(BrokerError):
    pass


class StaleElement(BrokerError):
    pass


class UnresolvableDependency(BrokerError):
    def __init__(self, scope: str):
        self.scope = scope
        super().__init__(f"no provider or cached element for dependency scope {scope!r}")


@dataclass(frozen=True)
class LocalClient:
    client_id: str

    @property
    def address(self) -> str:
        return self.client_id


@dataclass(frozen=True)
class NeighborBroker:
    broker_id: str

    @property
    def address(self) -> str:
        return self.broker_id


Destination = Union[LocalClient, NeighborBroker]


@dataclass(frozen=True)
class SubscriptionEntry:
    subscription: Subscription
    destination: Destination


@dataclass(frozen=True)
class RegEntry:
    advertisement: ClientAdvertisement
    owner: str
    via: Optional[str] = None  # neighbor towards the owner; None for local clients


@dataclass(frozen=True)
class CacheEntry:
    element: ContextElement
    inserted_at: int


@dataclass
class BulkQueue:
    limit: int = 5
    pending: list[tuple[Subscription, str]] = field(default_factory=list)
    deadline: Optional[int] = None
    nonempty_since: Optional[int] = None


@dataclass(frozen=True)
class Outbound:
    src: str
    dst: str
    message: ProtocolMessage


@dataclass(frozen=True)
class ProxyStep:
    """One step of a proxy query: a dependency served from cache, or a provider query."""

    scope: str
    source: str  # "cache" or "provider"
    endpoint: Optional[str] = None
    element: Optional[ContextElement] = None
    inputs: tuple[Atom, ...] = ()
    input_scopes: tuple[str, ...] = ()


@dataclass
class BrokerConfig:
    reg_exchange_interval_ms: int = 30_000
    bulk_mode: bool = False
    cache_enabled: bool = True
    bulk_limit: int = 5

    def __post_init__(self):
        if self.reg_exchange_interval_ms <= 0:
            raise ValueError("regExchangeIntervalMs must be > 0")
        if self.bulk_limit < 1:
            raise ValueError("bulkLimit must be >= 1")


@dataclass
class BrokerStats:
    cache_hits: int = 0
    cache_misses: int = 0
    dropped_expired: int = 0
    held: int = 0
    held_expired: int = 0
    bulk_enqueued: int = 0
    bulk_flushes: int = 0
    deadline_flushes: int = 0
    bulk_hold_ms: int = 0
    notifications: int = 0
    forwards: int = 0


class Broker:
    def __init__(self, broker_id: str, neighbors=(), config: Optional[BrokerConfig] = None,
                 trace: Optional[Trace] = None):
        self.id = broker_id
        self.neighbors: frozenset[str] = frozenset(neighbors)
        if broker_id in self.neighbors:
            raise ValueError("a broker cannot neighbor itself")
        self.config = config or BrokerConfig()
        self.trace = trace if trace is not None else Trace(enabled=False)
        self.local_clients: dict[str, ClientAdvertisement] = {}
        self.reg_table: dict[str, RegEntry] = {}
        self.sub_table: list[SubscriptionEntry] = []
        self.held: OrderedDict[tuple[str, str], SubscriptionEntry] = OrderedDict()
        self.cache: dict[tuple[str, str], CacheEntry] = {}
        self.bulk = BulkQueue(limit=self.config.bulk_limit)
        self.pending_outbound: dict[str, list[ProtocolMessage]] = defaultdict(list)
        self.down: set[str] = set()
        self.stats = BrokerStats()
        self._seq = itertools.count(1)

    # -- helpers ---------------------------------------------------------------

    def _header(self, now: int) -> Header:
        return Header(f"{self.id}#{next(self._seq)}", self.id, now)

    def _log(self, now, kind, msg=None, src=None, dst=None, scope=None, sub_id=None, hit=False):
        self.trace.add(now, self.id, kind, msg.header.message_id if msg is not None else None,
                       src, dst, scope, sub_id, hit)

    def _send(self, dst: str, msg: ProtocolMessage, now: int) -> list[Outbound]:
        if dst in self.down:
            self.pending_outbound[dst].append(msg)
            self._log(now, "queued", msg, self.id, dst)
            return []
        return [Outbound(self.id, dst, msg)]

    def defer(self, dst: str, msg: ProtocolMessage, now: int) -> None:
        """Queue ``msg`` after the transport found the link to ``dst`` down."""
        self.connectivity_changed(dst, False, now)
        self._send(dst, msg, now)

    def backlog(self) -> bool:
        return bool(self.bulk.pending) or any(self.pending_outbound.values())

    def _destination(self, address: str) -> Destination:
        if address in self.neighbors:
            return NeighborBroker(address)
        if address in self.local_clients:
            return LocalClient(address)
        raise UnknownClient(f"{address!r} is neither a local client nor a neighbor of {self.id}")

    def _add_entry(self, entry: SubscriptionEntry) -> None:
        dest = entry.destination
        ok = (dest.broker_id in self.neighbors if isinstance(dest, NeighborBroker)
              else dest.client_id in self.local_clients)
        if not ok:
            raise UnknownClient(f"destination {dest} is not local to {self.id}")
        self.sub_table.append(entry)

    def _remove_entries(self, doomed: list[SubscriptionEntry]) -> None:
        if not doomed:
            return
        gone = {id(e) for e in doomed}
        self.sub_table = [e for e in self.sub_table if id(e) not in gone]
        for e in doomed:
            self.held.pop((e.subscription.id, e.destination.address), None)

    # -- registration ------------------------------------------------------------

    def register_client(self, adv: ClientAdvertisement, now: int) -> list[Outbound]:
        known = self.reg_table.get(adv.client_id)
        if adv.client_id in self.local_clients or (known is not None and known.owner != self.id):
            raise DuplicateClientId(f"client {adv.client_id!r} is already registered")
        self.local_clients[adv.client_id] = adv
        self.reg_table[adv.client_id] = RegEntry(adv, self.id)
        self._log(now, "register", src=adv.client_id)
        out = self._push_registrations([Registration(adv, self.id)], now, exclude=None)
        return out + self._reevaluate_held(now)

    def _push_registrations(self, regs: list[Registration], now: int,
                            exclude: Optional[str]) -> list[Outbound]:
        out = []
        if not regs:
            return out
        for n in sorted(self.neighbors):
            if n == exclude:
                continue
            msg = RegTableUpdate(self._header(now), self.id, tuple(regs))
            self._log(now, "reg_update_out", msg, self.id, n)
            out += self._send(n, msg, now)
        return out

    def periodic_reg_exchange(self, now: int) -> list[Outbound]:
        regs = [Registration(e.advertisement, e.owner)
                for _, e in sorted(self.reg_table.items())]
        return self._push_registrations(regs, now, exclude=None)

    def handle_reg_update(self, msg: RegTableUpdate, from_neighbor: str, now: int) -> list[Outbound]:
        self._log(now, "reg_update_in", msg, from_neighbor, self.id)
        changed = []
        for reg in msg.registrations:
            adv = reg.advertisement
            if reg.owner_broker_id == self.id or adv.client_id in self.local_clients:
                continue
            cur = self.reg_table.get(adv.client_id)
            if cur is None or adv.last_updated > cur.advertisement.last_updated:
                self.reg_table[adv.client_id] = RegEntry(adv, reg.owner_broker_id, from_neighbor)
                changed.append(reg)
        out = self._push_registrations(changed, now, exclude=from_neighbor)
        return out + self._reevaluate_held(now)

    def _providers(self, scope: str, avoid_via: Optional[str] = None) -> list[RegEntry]:
        found = [e for e in self.reg_table.values()
                 if e.advertisement.role.provides and scope in e.advertisement.served_scopes
                 and (e.via is None or e.via != avoid_via)]
        found.sort(key=lambda e: (e.owner != self.id, e.owner, e.advertisement.client_id))
        return found

    def lookup(self, scope: str) -> Optional[str]:
        providers = self._providers(scope)
        return providers[0].advertisement.endpoint if providers else None

    # -- subscriptions -----------------------------------------------------------

    def subscribe(self, sub: Subscription, source: Destination, now: int) -> list[Outbound]:
        if sub.expired(now):
            raise ExpiredSubscription(f"subscription {sub.id} expired at {sub.expiry}")
        entry = SubscriptionEntry(sub, source)
        self._log(now, "sub", src=source.address, scope=sub.scope, sub_id=sub.id)
        self._add_entry(entry)
        self._log(now, "store", src=source.address, scope=sub.scope, sub_id=sub.id)
        if self.config.cache_enabled:
            cached = self._cache_match(sub, now)
            if cached is None:
                self.stats.cache_misses += 1
            else:
                self.stats.cache_hits += 1
                out = self._deliver_to(entry, cached, now, hit=True)
                if sub.one_time:
                    self._remove_entries([entry])
                    return out
                return out + self._route(entry, now)
        return self._route(entry, now)

    def _route(self, entry: SubscriptionEntry, now: int) -> list[Outbound]:
        sub = entry.subscription
        avoid = entry.destination.address if isinstance(entry.destination, NeighborBroker) else None
        providers = self._providers(sub.scope, avoid_via=avoid)
        key = (sub.id, entry.destination.address)
        if not providers:
            if key not in self.held:
                self.held[key] = entry
                self.stats.held += 1
                self._log(now, "hold", src=entry.destination.address, scope=sub.scope, sub_id=sub.id)
            return []
        self.held.pop(key, None)
        target = providers[0]
        if target.via is None:
            msg = Subscribe(self._header(now), sub)
            dst = target.advertisement.client_id
            self._log(now, "forward_sub", msg, self.id, dst, sub.scope, sub.id)
            return self._send(dst, msg, now)
        if self.config.bulk_mode and sub.priority is Priority.LOW:
            return self.bulk_enqueue(sub, target.via, now)
        msg = SubTableUpdate(self._header(now), self.id, sub)
        self._log(now, "sub_table_update", msg, self.id, target.via, sub.scope, sub.id)
        return self._send(target.via, msg, now)

    def _reevaluate_held(self, now: int) -> list[Outbound]:
        out = []
        for key, entry in list(self.held.items()):
            if entry.subscription.expired(now):
                continue
            if self._providers(entry.subscription.scope,
                               avoid_via=entry.destination.address
                               if isinstance(entry.destination, NeighborBroker) else None):
                out += self._route(entry, now)
        return out

    # -- publications ------------------------------------------------------------

    def publish(self, element: ContextElement, provider_id: str, now: int,
                matched_hint=()) -> list[Outbound]:
        if not is_fresh(element, now):
            raise StaleElement(f"element from {provider_id} is not fresh at {now}")
        self._log(now, "pub", src=provider_id, scope=element.scope)
        return self._dispatch(element, now, exclude=None)

    def handle_forward(self, msg: Forward, from_neighbor: str, now: int) -> list[Outbound]:
        self._log(now, "recv_forward", msg, from_neighbor, self.id, msg.element.scope)
        if not is_fresh(msg.element, now):
            self.stats.dropped_expired += 1
            self._log(now, "dropped_expired", msg, from_neighbor, self.id, msg.element.scope)
            return []
        return self._dispatch(msg.element, now, exclude=from_neighbor)

    def _dispatch(self, v: ContextElement, now: int, exclude: Optional[str]) -> list[Outbound]:
        matched = [e for e in self.sub_table
                   if matches(e.subscription, v, now) and e.destination.address != exclude]
        # Destinations in first-match order; one Forward per neighbor carrying all its ids.
        order: list[Union[str, SubscriptionEntry]] = []
        per_neighbor: dict[str, list[str]] = {}
        for e in matched:
            dest = e.destination
            if isinstance(dest, NeighborBroker):
                if dest.broker_id not in per_neighbor:
                    per_neighbor[dest.broker_id] = []
                    order.append(dest.broker_id)
                if e.subscription.id not in per_neighbor[dest.broker_id]:
                    per_neighbor[dest.broker_id].append(e.subscription.id)
            else:
                order.append(e)
        if self.config.cache_enabled and all(
                e.subscription.callback is Callback.BROKER_ROUTED for e in matched):
            self._cache_insert(v, now)
        self._remove_entries([e for e in matched if e.subscription.one_time])

        out: list[Outbound] = []
        for item in order:
            if isinstance(item, SubscriptionEntry):
                out += self._deliver_to(item, v, now)
                continue
            assert item != exclude, "forward back to the sending neighbor"
            msg = Forward(self._header(now), v, tuple(per_neighbor[item]))
            self.stats.forwards += 1
            self._log(now, "forward", msg, self.id, item, v.scope,
                      ",".join(msg.matched_subscription_ids))
            out += self._send(item, msg, now)
        return out

    def _deliver_to(self, entry: SubscriptionEntry, v: ContextElement, now: int,
                    hit: bool = False) -> list[Outbound]:
        sub = entry.subscription
        dest = entry.destination
        if isinstance(dest, NeighborBroker):
            msg = Forward(self._header(now), v, (sub.id,))
            self.stats.forwards += 1
            self._log(now, "forward", msg, self.id, dest.broker_id, v.scope, sub.id, hit)
        else:
            msg = Notify(self._header(now), v, sub.id)
            self.stats.notifications += 1
            self._log(now, "notify", msg, self.id, dest.client_id, v.scope, sub.id, hit)
        return self._send(dest.address, msg, now)

    # -- cache -------------------------------------------------------------------

    def _cache_insert(self, v: ContextElement, now: int) -> None:
        cur = self.cache.get(v.cache_key)
        if cur is None or cur.element.timestamp <= v.timestamp:
            self.cache[v.cache_key] = CacheEntry(v, now)

    def cache_lookup(self, entity: EntityRef, scope: str, now: int) -> Optional[ContextElement]:
        key = (entity.key, scope)
        entry = self.cache.get(key)
        if entry is None:
            return None
        if not is_fresh(entry.element, now):
            if entry.element.expiry <= now:
                del self.cache[key]
            return None
        return entry.element

    def _cache_match(self, sub: Subscription, now: int) -> Optional[ContextElement]:
        if sub.entity is not None:
            v = self.cache_lookup(sub.entity, sub.scope, now)
            return v if v is not None and matches(sub, v, now) else None
        for key in sorted(k for k in self.cache if k[1] == sub.scope):
            v = self.cache_lookup(EntityRef.parse(key[0]), sub.scope, now)
            if v is not None and matches(sub, v, now):
                return v
        return None

    # -- bulk mode ---------------------------------------------------------------

    def bulk_enqueue(self, sub: Subscription, hop: str, now: int) -> list[Outbound]:
        if sub.priority is not Priority.LOW or not self.config.bulk_mode:
            raise BrokerError("only LOW-priority subscriptions are queued, in bulk mode")
        q = self.bulk
        if not q.pending:
            q.nonempty_since = now
        q.pending.append((sub, hop))
        self.stats.bulk_enqueued += 1
        earliest = min(s.expiry for s, _ in q.pending)
        q.deadline = now + (earliest - now) // 2
        self._log(now, "bulk_enqueue", src=self.id, dst=hop, scope=sub.scope, sub_id=sub.id)
        if len(q.pending) >= q.limit:
            return self.bulk_flush(now)
        return []

    def on_bulk_deadline(self, now: int) -> list[Outbound]:
        if self.bulk.pending and self.bulk.deadline is not None and now >= self.bulk.deadline:
            self.stats.deadline_flushes += 1
            return self.bulk_flush(now)
        return []

    def bulk_flush(self, now: int) -> list[Outbound]:
        q = self.bulk
        if not q.pending:
            return []
        live = []
        for sub, hop in q.pending:
            if sub.expired(now):
                self.stats.dropped_expired += 1
                self._log(now, "dropped_expired", src=self.id, dst=hop, scope=sub.scope,
                          sub_id=sub.id)
            else:
                live.append((sub, hop))
        self._close_bulk(now)
        self.stats.bulk_flushes += 1
        by_hop: dict[str, list[ProtocolMessage]] = {}
        for sub, hop in live:
            msg = SubTableUpdate(self._header(now), self.id, sub)
            self._log(now, "sub_table_update", msg, self.id, hop, sub.scope, sub.id)
            by_hop.setdefault(hop, []).append(msg)
        out = []
        for hop, msgs in by_hop.items():
            packed = msgs[0] if len(msgs) == 1 else Bundle(self._header(now), tuple(msgs))
            self._log(now, "bulk_flush", packed, self.id, hop)
            out += self._send(hop, packed, now)
        return out

    def _close_bulk(self, now: int) -> None:
        q = self.bulk
        if q.nonempty_since is not None:
            self.stats.bulk_hold_ms += now - q.nonempty_since
        q.pending = []
        q.deadline = None
        q.nonempty_since = None

    # -- proxy queries -----------------------------------------------------------

    def proxy_resolve(self, sub: Subscription, registry: ScopeRegistry,
                      now: int) -> list[ProxyStep]:
        if sub.scope not in registry:
            raise BrokerError(f"scope {sub.scope!r} is not registered")
        steps = []
        cached_inputs: list[Atom] = []
        for dep in registry.dependency_closure(sub.scope):
            v = self.cache_lookup(sub.entity, dep, now) if sub.entity is not None else None
            if v is not None:
                atoms = tuple(p for p in v.data if isinstance(p, Atom))
                cached_inputs.extend(atoms)
                steps.append(ProxyStep(dep, "cache", element=v, inputs=atoms))
                continue
            endpoint = self.lookup(dep)
            if endpoint is None:
                raise UnresolvableDependency(dep)
            steps.append(ProxyStep(dep, "provider", endpoint=endpoint,
                                   input_scopes=tuple(registry[dep].dependencies)))
        endpoint = self.lookup(sub.scope)
        if endpoint is None:
            raise UnresolvableDependency(sub.scope)
        steps.append(ProxyStep(sub.scope, "provider", endpoint=endpoint,
                               inputs=tuple(cached_inputs),
                               input_scopes=tuple(registry[sub.scope].dependencies)))
        return steps

    # -- connectivity and housekeeping ------------------------------------------

    def connectivity_changed(self, dest: str, is_up: bool, now: int) -> list[Outbound]:
        if not is_up:
            if dest not in self.down:
                self.down.add(dest)
                self._log(now, "link_down", src=self.id, dst=dest)
            return []
        if dest not in self.down:
            return []
        self.down.discard(dest)
        self._log(now, "link_up", src=self.id, dst=dest)
        backlog = self.pending_outbound.pop(dest, [])
        live = []
        for msg in backlog:
            t = expires_at(msg)
            if t is not None and t <= now:
                self.stats.dropped_expired += 1
                self._log(now, "dropped_expired", msg, self.id, dest)
            else:
                live.append(msg)
        if not live:
            return []
        packed = live[0] if len(live) == 1 else Bundle(self._header(now), tuple(live))
        self._log(now, "drained", packed, self.id, dest)
        return [Outbound(self.id, dest, packed)]

    def expire_housekeeping(self, now: int) -> None:
        for key in [k for k, e in self.cache.items() if e.element.expiry <= now]:
            del self.cache[key]
        for key in [k for k, e in self.held.items() if e.subscription.expired(now)]:
            del self.held[key]
            self.stats.held_expired += 1
        self.sub_table = [e for e in self.sub_table if not e.subscription.expired(now)]
        if self.bulk.pending:
            live = [(s, h) for s, h in self.bulk.pending if not s.expired(now)]
            self.stats.dropped_expired += len(self.bulk.pending) - len(live)
            if live:
                self.bulk.pending = live
            else:
                self._close_bulk(now)
        for dest in list(self.pending_outbound):
            queue = self.pending_outbound[dest]
            live = [m for m in queue if (t := expires_at(m)) is None or t > now]
            self.stats.dropped_expired += len(queue) - len(live)
            self.pending_outbound[dest] = live

    # -- message entry point -----------------------------------------------------

    def receive(self, msg: ProtocolMessage, sender: str, now: int) -> list[Outbound]:
        """Handle one message arriving from a local client or a neighbor broker."""
        if isinstance(msg, Bundle):
            out = []
            for inner in msg.messages:
                out += self.receive(inner, sender, now)
            return out
        if isinstance(msg, Register):
            return self.register_client(msg.advertisement, now)
        if isinstance(msg, RegTableUpdate):
            return self.handle_reg_update(msg, sender, now)
        if isinstance(msg, Subscribe):
            if msg.subscription.expired(now):
                self.stats.dropped_expired += 1
                return []
            return self.subscribe(msg.subscription, self._destination(sender), now)
        if isinstance(msg, SubTableUpdate):
            if msg.subscription.expired(now):
                self.stats.dropped_expired += 1
                return []
            return self.subscribe(msg.subscription, self._destination(sender), now)
        if isinstance(msg, Publish):
            if not is_fresh(msg.element, now):
                self.stats.dropped_expired += 1
                return []
            return self.publish(msg.element, sender, now, msg.matched_subscription_ids)
        if isinstance(msg, Forward):
            return self.handle_forward(msg, sender, now)
        if isinstance(msg, LookupRequest):
            reply = LookupReply(self._header(now), msg.scope, self.lookup(msg.scope))
            return self._send(sender, reply, now)
        raise BrokerError(f"broker {self.id} cannot handle {type(msg).__name__}")
