"""Canonical ContextML text encoding for protocol messages.

The encoder writes its own serialization (fixed attribute and child order,
character references for characters XML would otherwise normalize), so equal
messages always produce byte-identical documents. Parsing goes through
ElementTree and rebuilds the immutable message values, which re-checks every
construction invariant.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from typing import Callable, Optional

from contextmesh.contextml.messages import (
    Bundle, ClientAdvertisement, Forward, Header, LookupReply, LookupRequest, Notify,
    ProtocolMessage, Publish, Register, Registration, RegTableUpdate, Role, Subscribe, SubTableUpdate,
)
from contextmesh.contextml.model import (
    Array, Atom, ContextElement, EntityRef, InvariantViolation, MalformedDocument, ParamValue,
    SchemaViolation, Struct,
)
import contextmesh.matching as matching

_INT = re.compile(r"-?\d+\Z")


def _esc_text(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace("\r", "&#13;"))


def _esc_attr(s: str) -> str:
    return (_esc_text(s).replace('"', "&quot;").replace("\n", "&#10;")
            .replace("\t", "&#9;"))


class _Node:
    __slots__ = ("tag", "attrs", "children", "text")

    def __init__(self, tag: str, attrs: Optional[dict] = None, text: Optional[str] = None):
        self.tag = tag
        self.attrs = attrs or {}
        self.children: list[_Node] = []
        self.text = text

    def add(self, child: _Node) -> _Node:
        self.children.append(child)
        return child

    def render(self, out: list[str]) -> None:
        attrs = "".join(f' {k}="{_esc_attr(str(v))}"' for k, v in self.attrs.items())
        if not self.children and not self.text:
            out.append(f"<{self.tag}{attrs}/>")
            return
        out.append(f"<{self.tag}{attrs}>")
        if self.text:
            out.append(_esc_text(self.text))
        for c in self.children:
            c.render(out)
        out.append(f"</{self.tag}>")


def _header_attrs(h: Header) -> dict:
    return {"msgId": h.message_id, "sender": h.sender_id, "sentAt": h.sent_at}


def _param_node(p: ParamValue) -> _Node:
    if isinstance(p, Atom):
        return _Node("par", {"n": p.name}, p.value)
    node = _Node("parS" if isinstance(p, Struct) else "parA", {"n": p.name})
    for c in (p.members if isinstance(p, Struct) else p.items):
        node.add(_param_node(c))
    return node


def _element_node(el: ContextElement) -> _Node:
    node = _Node("ctxEl", {"size": el.payload_bytes})
    node.add(_Node("contextProvider", {"id": el.provider_id}))
    node.add(_Node("entity", {"type": el.entity.entity_type, "id": el.entity.id}))
    node.add(_Node("scope", text=el.scope))
    node.add(_Node("timestamp", text=str(el.timestamp)))
    node.add(_Node("expires", text=str(el.expiry)))
    data = node.add(_Node("dataPart"))
    for p in el.data:
        data.add(_param_node(p))
    return node


def _subscription_node(sub: matching.Subscription, header: Optional[Header] = None) -> _Node:
    attrs = _header_attrs(header) if header else {}
    attrs.update({"id": sub.id, "subscriber": sub.subscriber_id})
    if sub.one_time:
        attrs["oneTime"] = "true"
    node = _Node("ctxSubscr", attrs)
    if sub.entity is not None:
        node.add(_Node("entity", {"type": sub.entity.entity_type, "id": sub.entity.id}))
    node.add(_Node("scope", text=sub.scope))
    if not isinstance(sub.expr, matching.TrueExpr):
        node.add(_Node("constraint", text=matching.format_constraint(sub.expr)))
    node.add(_Node("expires", text=str(sub.expiry)))
    if sub.priority is not matching.Priority.HIGH:
        node.add(_Node("priority", text=sub.priority.value))
    if sub.callback is not matching.Callback.BROKER_ROUTED:
        node.add(_Node("callback", text=sub.callback.value))
    return node


def _advert_node(adv: ClientAdvertisement, owner: Optional[str] = None) -> _Node:
    attrs = {"id": adv.client_id, "endpoint": adv.endpoint, "role": adv.role.value,
             "lastUpdated": adv.last_updated}
    if owner is not None:
        attrs["owner"] = owner
    node = _Node("advertisement", attrs)
    for s in adv.served_scopes:
        node.add(_Node("scope", text=s))
    return node


def _message_node(msg: ProtocolMessage) -> _Node:
    h = _header_attrs(msg.header)
    if isinstance(msg, Subscribe):
        return _subscription_node(msg.subscription, msg.header)
    if isinstance(msg, (Publish, Forward)):
        node = _Node("ctxPublish" if isinstance(msg, Publish) else "ctxForward", h)
        for sid in msg.matched_subscription_ids:
            node.add(_Node("subscriptionId", text=sid))
        node.add(_element_node(msg.element))
        return node
    if isinstance(msg, Notify):
        node = _Node("ctxNotify", {**h, "subscriptionId": msg.subscription_id})
        node.add(_element_node(msg.element))
        return node
    if isinstance(msg, SubTableUpdate):
        node = _Node("subTableUpdate", {**h, "origin": msg.origin_broker_id})
        node.add(_subscription_node(msg.subscription))
        return node
    if isinstance(msg, RegTableUpdate):
        node = _Node("regTableUpdate", {**h, "origin": msg.origin_broker_id})
        for reg in msg.registrations:
            node.add(_advert_node(reg.advertisement, reg.owner_broker_id))
        return node
    if isinstance(msg, Register):
        node = _Node("register", h)
        node.add(_advert_node(msg.advertisement))
        return node
    if isinstance(msg, LookupRequest):
        return _Node("lookupRequest", {**h, "scope": msg.scope})
    if isinstance(msg, LookupReply):
        attrs = {**h, "scope": msg.scope}
        if msg.endpoint is not None:
            attrs["endpoint"] = msg.endpoint
        return _Node("lookupReply", attrs)
    if isinstance(msg, Bundle):
        node = _Node("bundle", h)
        for m in msg.messages:
            node.add(_message_node(m))
        return node
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def encode_message(msg: ProtocolMessage) -> str:
    out: list[str] = []
    _message_node(msg).render(out)
    return "".join(out)


def encode_element(el: ContextElement) -> str:
    out: list[str] = []
    _element_node(el).render(out)
    return "".join(out)


# -- parsing -------------------------------------------------------------------

class _Reader:
    """Strict accessors over an ElementTree element that report their path."""

    def __init__(self, elem: ET.Element, path: str):
        self.elem = elem
        self.path = path
        self._seen_attrs: set[str] = set()

    def fail(self, message: str):
        raise SchemaViolation(message, self.path)

    def attr(self, name: str, required: bool = True) -> Optional[str]:
        self._seen_attrs.add(name)
        value = self.elem.get(name)
        if value is None and required:
            self.fail(f"missing attribute {name!r}")
        return value

    def int_attr(self, name: str) -> int:
        return self._to_int(self.attr(name), f"@{name}")

    def _to_int(self, text: str, what: str) -> int:
        if text is None or not _INT.match(text):
            self.fail(f"{what} is not an integer: {text!r}")
        return int(text)

    def text(self) -> str:
        if len(self.elem):
            self.fail("unexpected child element")
        return self.elem.text or ""

    def children(self) -> list[_Reader]:
        if (self.elem.text or "").strip():
            self.fail("unexpected text content")
        out = []
        for i, child in enumerate(self.elem):
            if (child.tail or "").strip():
                self.fail("unexpected text content")
            out.append(_Reader(child, f"{self.path}/{child.tag}[{i}]"))
        return out

    def done(self) -> None:
        extra = set(self.elem.attrib) - self._seen_attrs
        if extra:
            self.fail(f"unknown attribute(s) {sorted(extra)}")


class _ChildCursor:
    def __init__(self, reader: _Reader):
        self.reader = reader
        self.items = reader.children()
        self.i = 0

    def optional(self, tag: str) -> Optional[_Reader]:
        if self.i < len(self.items) and self.items[self.i].elem.tag == tag:
            self.i += 1
            return self.items[self.i - 1]
        return None

    def required(self, tag: str) -> _Reader:
        r = self.optional(tag)
        if r is None:
            found = self.items[self.i].elem.tag if self.i < len(self.items) else "nothing"
            self.reader.fail(f"expected <{tag}>, found {found}")
        return r

    def many(self, tag: str) -> list[_Reader]:
        out = []
        while (r := self.optional(tag)) is not None:
            out.append(r)
        return out

    def end(self) -> None:
        if self.i < len(self.items):
            self.items[self.i].fail(f"unexpected element <{self.items[self.i].elem.tag}>")


def _build(reader: _Reader, factory: Callable, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except InvariantViolation as exc:
        raise InvariantViolation(str(exc), reader.path) from None
    except ValueError as exc:
        raise InvariantViolation(str(exc), reader.path) from None


def _read_int_text(r: _Reader) -> int:
    return r._to_int(r.text(), "value")


def _read_param(r: _Reader) -> ParamValue:
    name = r.attr("n")
    r.done()
    tag = r.elem.tag
    if tag == "par":
        return _build(r, Atom, name, r.text())
    if tag in ("parS", "parA"):
        kids = tuple(_read_param(c) for c in r.children())
        return _build(r, Struct if tag == "parS" else Array, name, kids)
    r.fail(f"unknown parameter element <{tag}>")


def _read_entity(r: _Reader) -> EntityRef:
    ent = _build(r, EntityRef, r.attr("type"), r.attr("id"))
    r.done()
    if len(r.elem) or (r.elem.text or "").strip():
        r.fail("entity must be empty")
    return ent


def _read_element(r: _Reader) -> ContextElement:
    size = r.int_attr("size")
    r.done()
    cur = _ChildCursor(r)
    prov = cur.required("contextProvider")
    provider_id = prov.attr("id")
    prov.done()
    entity = _read_entity(cur.required("entity"))
    scope = cur.required("scope").text()
    timestamp = _read_int_text(cur.required("timestamp"))
    expiry = _read_int_text(cur.required("expires"))
    data_reader = cur.required("dataPart")
    data_reader.done()
    data = tuple(_read_param(p) for p in data_reader.children())
    cur.end()
    return _build(r, ContextElement, provider_id, entity, scope, data, timestamp, expiry, size)


def _read_header(r: _Reader) -> Header:
    return Header(r.attr("msgId"), r.attr("sender"), r.int_attr("sentAt"))


def _read_subscription(r: _Reader) -> matching.Subscription:
    sid = r.attr("id")
    subscriber = r.attr("subscriber")
    one_time = r.attr("oneTime", required=False)
    if one_time not in (None, "true"):
        r.fail(f"oneTime must be 'true' when present, got {one_time!r}")
    r.done()
    cur = _ChildCursor(r)
    ent = cur.optional("entity")
    entity = _read_entity(ent) if ent is not None else None
    scope = cur.required("scope").text()
    expr_reader = cur.optional("constraint")
    expr = matching.TrueExpr()
    if expr_reader is not None:
        try:
            expr = matching.parse_constraint(expr_reader.text())
        except matching.ParseError as exc:
            raise InvariantViolation(f"bad constraint: {exc}", expr_reader.path) from None
    expiry = _read_int_text(cur.required("expires"))
    priority = matching.Priority.HIGH
    if (pr := cur.optional("priority")) is not None:
        try:
            priority = matching.Priority(pr.text())
        except ValueError:
            pr.fail(f"unknown priority {pr.text()!r}")
    callback = matching.Callback.BROKER_ROUTED
    if (cb := cur.optional("callback")) is not None:
        try:
            callback = matching.Callback(cb.text())
        except ValueError:
            cb.fail(f"unknown callback {cb.text()!r}")
    cur.end()
    return _build(r, matching.Subscription, sid, subscriber, scope, expr, expiry, entity, priority,
                  callback, one_time == "true")


def _read_advert(r: _Reader, with_owner: bool = False):
    cid, endpoint = r.attr("id"), r.attr("endpoint")
    owner = r.attr("owner") if with_owner else None
    try:
        role = Role(r.attr("role"))
    except ValueError:
        r.fail(f"unknown role {r.elem.get('role')!r}")
    updated = r.int_attr("lastUpdated")
    r.done()
    cur = _ChildCursor(r)
    scopes = tuple(s.text() for s in cur.many("scope"))
    cur.end()
    adv = _build(r, ClientAdvertisement, cid, endpoint, role, scopes, updated)
    return Registration(adv, owner) if with_owner else adv


def _read_message(r: _Reader) -> ProtocolMessage:
    tag = r.elem.tag
    if tag == "ctxSubscr":
        header = _read_header(r)
        return Subscribe(header, _read_subscription(r))
    header = _read_header(r)
    if tag in ("ctxPublish", "ctxForward"):
        r.done()
        cur = _ChildCursor(r)
        ids = tuple(s.text() for s in cur.many("subscriptionId"))
        el = _read_element(cur.required("ctxEl"))
        cur.end()
        return (Publish if tag == "ctxPublish" else Forward)(header, el, ids)
    if tag == "ctxNotify":
        sid = r.attr("subscriptionId")
        r.done()
        cur = _ChildCursor(r)
        el = _read_element(cur.required("ctxEl"))
        cur.end()
        return Notify(header, el, sid)
    if tag == "subTableUpdate":
        origin = r.attr("origin")
        r.done()
        cur = _ChildCursor(r)
        sub = _read_subscription(cur.required("ctxSubscr"))
        cur.end()
        return SubTableUpdate(header, origin, sub)
    if tag == "regTableUpdate":
        origin = r.attr("origin")
        r.done()
        cur = _ChildCursor(r)
        regs = tuple(_read_advert(a, with_owner=True) for a in cur.many("advertisement"))
        cur.end()
        return RegTableUpdate(header, origin, regs)
    if tag == "register":
        r.done()
        cur = _ChildCursor(r)
        adv = _read_advert(cur.required("advertisement"))
        cur.end()
        return Register(header, adv)
    if tag == "lookupRequest":
        scope = r.attr("scope")
        r.done()
        if r.children():
            r.fail("lookupRequest must be empty")
        return LookupRequest(header, scope)
    if tag == "lookupReply":
        scope = r.attr("scope")
        endpoint = r.attr("endpoint", required=False)
        r.done()
        if r.children():
            r.fail("lookupReply must be empty")
        return LookupReply(header, scope, endpoint)
    if tag == "bundle":
        r.done()
        return _build(r, Bundle, header, tuple(_read_message(c) for c in r.children()))
    r.fail(f"unknown message element <{tag}>")


def parse_message(text: str) -> ProtocolMessage:
    """Parse a ContextML document.

    Raises MalformedDocument for XML syntax errors, SchemaViolation for unknown or
    missing structure and InvariantViolation for values that break a type invariant.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise MalformedDocument(f"not well-formed XML: {exc}", f"line {line}, column {col}") from None
    return _read_message(_Reader(root, f"/{root.tag}"))
