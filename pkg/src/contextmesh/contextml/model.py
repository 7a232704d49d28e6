"""Context data types: entities, scopes, parameter values and context elements."""

from __future__ import annotations

import graphlib
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

MAX_PARAM_DEPTH = 16


class ContextMLError(Exception):
    """Base class for codec and data-model errors."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{message} (at {location})"
        super().__init__(message)


class MalformedDocument(ContextMLError):
    pass


class SchemaViolation(ContextMLError):
    pass


class InvariantViolation(ContextMLError, ValueError):
    pass


_NON_XML = re.compile("[^\t\n\r\u0020-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


def _check_xml(value: str, what: str) -> None:
    if _NON_XML.search(value):
        raise InvariantViolation(f"{what} contains characters XML cannot carry")


def _check_token(value: str, what: str) -> None:
    if not isinstance(value, str) or not value:
        raise InvariantViolation(f"{what} must be a non-empty string")
    if ":" in value or any(ch.isspace() for ch in value):
        raise InvariantViolation(f"{what} {value!r} contains whitespace or ':'")


@dataclass(frozen=True, order=True)
class EntityRef:
    entity_type: str
    id: str

    def __post_init__(self):
        _check_token(self.entity_type, "entity type")
        _check_token(self.id, "entity id")

    @property
    def key(self) -> str:
        return f"{self.entity_type}:{self.id}"

    @classmethod
    def parse(cls, key: str) -> EntityRef:
        entity_type, sep, ident = key.partition(":")
        if not sep:
            raise InvariantViolation(f"entity key {key!r} lacks ':' separator")
        return cls(entity_type, ident)

    def __str__(self) -> str:
        return self.key


@dataclass(frozen=True)
class ScopeDef:
    name: str
    input_params: tuple[str, ...] = ()
    entity_types: tuple[str, ...] = ("username",)
    dependencies: tuple[str, ...] = ()
    default_validity_ms: int = 30_000

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("scope name must be non-empty")
        if self.default_validity_ms <= 0:
            raise InvariantViolation(f"scope {self.name}: defaultValidityMs must be > 0")
        object.__setattr__(self, "input_params", tuple(self.input_params))
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        object.__setattr__(self, "dependencies", tuple(self.dependencies))


class ScopeRegistry:
    """Named scope definitions with an acyclic dependency graph."""

    def __init__(self, scopes: Iterable[ScopeDef] = ()):
        self._scopes: dict[str, ScopeDef] = {}
        for scope in scopes:
            if scope.name in self._scopes:
                raise InvariantViolation(f"duplicate scope name {scope.name!r}")
            self._scopes[scope.name] = scope
        for scope in self._scopes.values():
            for dep in scope.dependencies:
                if dep not in self._scopes:
                    raise InvariantViolation(f"scope {scope.name!r} depends on unknown scope {dep!r}")
        try:
            self._order = tuple(graphlib.TopologicalSorter(
                {s.name: s.dependencies for s in self._scopes.values()}).static_order())
        except graphlib.CycleError as exc:
            cycle = " -> ".join(exc.args[1])
            raise InvariantViolation(f"scope dependency cycle: {cycle}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._scopes

    def __getitem__(self, name: str) -> ScopeDef:
        return self._scopes[name]

    def __iter__(self):
        return iter(self._scopes.values())

    def __len__(self) -> int:
        return len(self._scopes)

    def dependency_closure(self, name: str) -> list[str]:
        """Transitive dependencies of ``name`` in dependency-first order, excluding ``name``."""
        needed: set[str] = set()
        stack = list(self._scopes[name].dependencies)
        while stack:
            dep = stack.pop()
            if dep not in needed:
                needed.add(dep)
                stack.extend(self._scopes[dep].dependencies)
        return [s for s in self._order if s in needed]

    def check_element(self, el: ContextElement) -> None:
        if el.scope not in self._scopes:
            raise InvariantViolation(f"unregistered scope {el.scope!r}")
        allowed = self._scopes[el.scope].entity_types
        if el.entity.entity_type not in allowed:
            raise InvariantViolation(
                f"entity type {el.entity.entity_type!r} not valid for scope {el.scope!r}")


@dataclass(frozen=True)
class Atom:
    name: str
    value: str

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("parameter name must be non-empty")
        if not isinstance(self.value, str):
            raise InvariantViolation(f"atom {self.name!r} value must be a string")
        _check_xml(self.name, "parameter name")
        _check_xml(self.value, f"atom {self.name!r} value")


@dataclass(frozen=True)
class Struct:
    name: str
    members: tuple[ParamValue, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("parameter name must be non-empty")
        object.__setattr__(self, "members", tuple(self.members))
        names = [m.name for m in self.members]
        if len(names) != len(set(names)):
            raise InvariantViolation(f"struct {self.name!r} has duplicate member names")
        if param_depth(self) > MAX_PARAM_DEPTH:
            raise InvariantViolation(f"parameter {self.name!r} nested deeper than {MAX_PARAM_DEPTH}")


@dataclass(frozen=True)
class Array:
    name: str
    items: tuple[ParamValue, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("parameter name must be non-empty")
        object.__setattr__(self, "items", tuple(self.items))
        if param_depth(self) > MAX_PARAM_DEPTH:
            raise InvariantViolation(f"parameter {self.name!r} nested deeper than {MAX_PARAM_DEPTH}")


ParamValue = Union[Atom, Struct, Array]


def param_depth(p: ParamValue) -> int:
    if isinstance(p, Atom):
        return 1
    children = p.members if isinstance(p, Struct) else p.items
    return 1 + max((param_depth(c) for c in children), default=0)


@dataclass(frozen=True)
class ContextElement:
    provider_id: str
    entity: EntityRef
    scope: str
    data: tuple[ParamValue, ...] = field(default=())
    timestamp: int = 0
    expiry: int = 1
    payload_bytes: int = 1

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(self.data))
        if not self.provider_id:
            raise InvariantViolation("providerId must be non-empty")
        if not self.scope:
            raise InvariantViolation("scope must be non-empty")
        if self.expiry <= self.timestamp:
            raise InvariantViolation(
                f"expiry {self.expiry} must be later than timestamp {self.timestamp}")
        if self.payload_bytes <= 0:
            raise InvariantViolation("payloadBytes must be positive")

    @property
    def cache_key(self) -> tuple[str, str]:
        return (self.entity.key, self.scope)

    def atoms(self) -> dict[str, str]:
        """Top-level atom values by name."""
        return {p.name: p.value for p in self.data if isinstance(p, Atom)}


def is_fresh(el: ContextElement, now: int) -> bool:
    """Validity window is half-open: [timestamp, expiry)."""
    return el.timestamp <= now < el.expiry
