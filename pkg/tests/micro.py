"""Seeded micro-scenarios for checking the federation against a flat oracle."""

from __future__ import annotations

import random
from dataclasses import dataclass

from contextmesh.broker import BrokerConfig, Federation
from contextmesh.contextml import Atom, ClientAdvertisement, ContextElement, EntityRef, Role
from contextmesh.matching import Subscription, matches

from oracles import ATTRS, random_expr

HORIZON = 10**9  # far beyond the scenario: nothing expires


@dataclass
class MicroResult:
    seed: int
    brokers: list[str]
    delivered: set
    expected: set
    notifications: int
    federation: Federation


def run_micro(seed: int) -> MicroResult:
    rng = random.Random(seed)
    n_brokers = rng.randint(1, 3)
    brokers = [f"B{i + 1}" for i in range(n_brokers)]
    edges = [(brokers[i], brokers[i + 1]) for i in range(n_brokers - 1)]
    fed = Federation.build(brokers, edges, BrokerConfig(cache_enabled=False))

    n_clients = rng.randint(2, 6)
    n_providers = rng.randint(1, min(2, n_clients - 1))
    scopes = [f"s{i + 1}" for i in range(n_providers)]
    providers = {s: f"P{i + 1}" for i, s in enumerate(scopes)}
    consumers = [f"C{i + 1}" for i in range(n_clients - n_providers)]
    for s, p in providers.items():
        fed.register(rng.choice(brokers), ClientAdvertisement(p, f"sim://{p}", Role.PROVIDER, (s,)))
    for c in consumers:
        fed.register(rng.choice(brokers), ClientAdvertisement(c, f"sim://{c}", Role.CONSUMER))

    subs: list[tuple[int, Subscription]] = []
    pubs: list[tuple[int, ContextElement]] = []
    entities = [EntityRef("username", u) for u in ("alice", "bob")]
    for t in range(1, rng.randint(2, 20) + 1):
        if not subs or rng.random() < 0.45:
            sub = Subscription(
                f"sub{t}", rng.choice(consumers), rng.choice(scopes), random_expr(rng, 3),
                expiry=HORIZON, entity=rng.choice([None, *entities]))
            subs.append((t, sub))
            fed.subscribe(sub, t)
        else:
            scope = rng.choice(scopes)
            atoms = tuple(Atom(a, rng.choice(["1", "5", "10", "x", "y"]))
                          for a in ATTRS if rng.random() < 0.6)
            el = ContextElement(providers[scope], rng.choice(entities), scope, atoms,
                                timestamp=t, expiry=HORIZON, payload_bytes=100)
            pubs.append((t, el))
            fed.publish(el, t)

    notes = fed.notifications()
    delivered = {(client, el) for client, el in notes}
    expected = {(sub.subscriber_id, el) for tp, el in pubs for ts, sub in subs
                if ts < tp and matches(sub, el, tp)}
    return MicroResult(seed, brokers, delivered, expected, len(notes), fed)
