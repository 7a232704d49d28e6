"""Broker federation topology checks: the overlay must be a tree."""

from __future__ import annotations

from typing import Iterable

import networkx as nx


class TopologyError(ValueError):
    pass


class CycleDetected(TopologyError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("broker topology has a cycle: " + " - ".join(cycle + cycle[:1]))


class Disconnected(TopologyError):
    def __init__(self, components: list[list[str]]):
        self.components = components
        super().__init__("broker topology is disconnected: "
                         + "; ".join("{" + ", ".join(c) + "}" for c in components))


def _graph(broker_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> nx.MultiGraph:
    g = nx.MultiGraph()
    g.add_nodes_from(broker_ids)
    for a, b in edges:
        if a not in g or b not in g:
            raise TopologyError(f"edge ({a}, {b}) names an unknown broker")
        g.add_edge(a, b)
    return g


def validate_topology(broker_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> None:
    """Raise unless the undirected broker graph is a tree."""
    broker_ids = list(broker_ids)
    if not broker_ids:
        raise TopologyError("at least one broker is required")
    if len(set(broker_ids)) != len(broker_ids):
        raise TopologyError("duplicate broker id")
    g = _graph(broker_ids, edges)
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        pass
    else:
        raise CycleDetected([str(u) for u, *_ in cycle])
    components = [sorted(c) for c in nx.connected_components(g)]
    if len(components) > 1:
        raise Disconnected(sorted(components))

