"""Protocol messages exchanged between clients and brokers.

Every message carries a header (message id, sender, send time). ``Bundle``
groups several messages into one transport call; it is what bulk flushes and
reconnect drains put on the wire.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Union

from contextmesh.contextml.model import ContextElement, InvariantViolation
if TYPE_CHECKING:
    from contextmesh.matching import Subscription

# Declared size of control messages (subscriptions, lookups) for transport accounting.
CONTROL_MESSAGE_BYTES = 300
ADVERTISEMENT_BYTES = 200


class Role(enum.Enum):
    CONSUMER = "consumer"
    PROVIDER = "provider"
    BOTH = "both"

    @property
    def provides(self) -> bool:
        return self in (Role.PROVIDER, Role.BOTH)


@dataclass(frozen=True)
class ClientAdvertisement:
    client_id: str
    endpoint: str
    role: Role
    served_scopes: tuple[str, ...] = ()
    last_updated: int = 0

    def __post_init__(self):
        object.__setattr__(self, "served_scopes", tuple(self.served_scopes))
        if not self.client_id:
            raise InvariantViolation("clientId must be non-empty")
        if self.role.provides != bool(self.served_scopes):
            raise InvariantViolation(
                f"client {self.client_id}: served scopes must be non-empty iff it is a provider")


@dataclass(frozen=True)
class Header:
    message_id: str
    sender_id: str
    sent_at: int


@dataclass(frozen=True)
class Subscribe:
    header: Header
    subscription: Subscription


@dataclass(frozen=True)
class Publish:
    header: Header
    element: ContextElement
    matched_subscription_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Notify:
    header: Header
    element: ContextElement
    subscription_id: str


@dataclass(frozen=True)
class Forward:
    header: Header
    element: ContextElement
    matched_subscription_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class SubTableUpdate:
    header: Header
    origin_broker_id: str
    subscription: Subscription


@dataclass(frozen=True)
class Registration:
    """A registration-table row on the wire: an advertisement and the broker that owns the client."""

    advertisement: ClientAdvertisement
    owner_broker_id: str


@dataclass(frozen=True)
class RegTableUpdate:
    header: Header
    origin_broker_id: str
    registrations: tuple[Registration, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "registrations", tuple(self.registrations))


@dataclass(frozen=True)
class Register:
    header: Header
    advertisement: ClientAdvertisement


@dataclass(frozen=True)
class LookupRequest:
    header: Header
    scope: str


@dataclass(frozen=True)
class LookupReply:
    header: Header
    scope: str
    endpoint: Optional[str] = None


@dataclass(frozen=True)
class Bundle:
    header: Header
    messages: tuple[ProtocolMessage, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise InvariantViolation("bundle must carry at least one message")


ProtocolMessage = Union[Subscribe, Publish, Notify, Forward, SubTableUpdate, RegTableUpdate,
                        Register, LookupRequest, LookupReply, Bundle]


def payload_bytes(msg: ProtocolMessage) -> int:
    """Bytes charged for ``msg``; context payloads use their declared size."""
    if isinstance(msg, (Publish, Notify, Forward)):
        return msg.element.payload_bytes
    if isinstance(msg, RegTableUpdate):
        return CONTROL_MESSAGE_BYTES + ADVERTISEMENT_BYTES * len(msg.registrations)
    if isinstance(msg, Register):
        return CONTROL_MESSAGE_BYTES + ADVERTISEMENT_BYTES
    if isinstance(msg, Bundle):
        return sum(payload_bytes(m) for m in msg.messages)
    return CONTROL_MESSAGE_BYTES


def expires_at(msg: ProtocolMessage) -> Optional[int]:
    """Time after which delivering ``msg`` is pointless, or None if it never goes stale."""
    if isinstance(msg, (Subscribe, SubTableUpdate)):
        return msg.subscription.expiry
    if isinstance(msg, (Publish, Notify, Forward)):
        return msg.element.expiry
    return None
