"""ContextML data model, protocol messages and canonical text codec."""

from contextmesh.contextml.codec import encode_element, encode_message, parse_message
from contextmesh.contextml.messages import (
    Bundle, ClientAdvertisement, Forward, Header, LookupReply, LookupRequest, Notify,
    ProtocolMessage, Publish, Register, Registration, RegTableUpdate, Role, Subscribe, SubTableUpdate,
    expires_at, payload_bytes,
)
from contextmesh.contextml.model import (
    Array, Atom, ContextElement, ContextMLError, EntityRef, InvariantViolation,
    MalformedDocument, ParamValue, SchemaViolation, ScopeDef, ScopeRegistry, Struct, is_fresh,
)

__all__ = [
    "Array", "Atom", "Bundle", "ClientAdvertisement", "ContextElement", "ContextMLError",
    "EntityRef", "Forward", "Header", "InvariantViolation", "LookupReply", "LookupRequest",
    "MalformedDocument", "Notify", "ParamValue", "ProtocolMessage", "Publish", "Register", "Registration",
    "RegTableUpdate", "Role", "SchemaViolation", "ScopeDef", "ScopeRegistry", "Struct",
    "Subscribe", "SubTableUpdate", "encode_element", "encode_message", "expires_at",
    "is_fresh", "parse_message", "payload_bytes",
]
