"""Broker federation: the per-broker state machine, topology checks and trace."""

from contextmesh.broker.core import (
    Broker, BrokerConfig, BrokerError, BrokerStats, BulkQueue, CacheEntry, Destination,
    DuplicateClientId, ExpiredSubscription, LocalClient, NeighborBroker, Outbound, ProxyStep,
    RegEntry, StaleElement, SubscriptionEntry, UnknownClient, UnresolvableDependency,
)
from contextmesh.broker.federation import Delivery, Federation
from contextmesh.broker.topology import CycleDetected, Disconnected, TopologyError, validate_topology
from contextmesh.broker.trace import COLUMNS, Trace, TraceRecord

__all__ = [
    "Broker", "BrokerConfig", "BrokerError", "BrokerStats", "BulkQueue", "CacheEntry", "COLUMNS",
    "CycleDetected", "Delivery", "Destination", "Disconnected", "DuplicateClientId",
    "ExpiredSubscription", "Federation", "LocalClient", "NeighborBroker", "Outbound", "ProxyStep",
    "RegEntry", "StaleElement", "SubscriptionEntry", "TopologyError", "Trace", "TraceRecord",
    "UnknownClient", "UnresolvableDependency", "validate_topology",
]
