"""Subscription constraints: a small predicate language and its evaluator.

A constraint is a Boolean tree over predicates ``(attribute, operator, constants)``.
Predicates read the top-level atoms of a context element; an absent attribute
makes every predicate false, so presence tests need ``EXISTS``.

Surface grammar::

    expr      := term (OR term)*
    term      := factor (AND factor)*
    factor    := NOT factor | '(' expr ')' | TRUE | predicate
    predicate := ident op literal | ident IN '{' literal (',' literal)* '}' | EXISTS ident
    op        := = | != | < | <= | > | >=
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Iterable, Optional, Sequence, Union

from contextmesh.contextml.model import Atom, ContextElement, EntityRef, ParamValue

MAX_EXPR_DEPTH = 32


class Op(enum.Enum):
    EQ = "="
    NEQ = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    IN = "IN"
    EXISTS = "EXISTS"


class Priority(enum.Enum):
    HIGH = "high"
    LOW = "low"


class Callback(enum.Enum):
    BROKER_ROUTED = "broker"
    DIRECT = "direct"


@dataclass(frozen=True)
class Predicate:
    attr: str
    op: Op
    constants: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constants", tuple(self.constants))
        if not self.attr:
            raise ValueError("predicate attribute must be non-empty")
        n = len(self.constants)
        if self.op is Op.EXISTS and n:
            raise ValueError("EXISTS takes no constants")
        if self.op is Op.IN and n < 1:
            raise ValueError("IN needs at least one constant")
        if self.op not in (Op.EXISTS, Op.IN) and n != 1:
            raise ValueError(f"{self.op.name} needs exactly one constant")


@dataclass(frozen=True)
class TrueExpr:
    pass


@dataclass(frozen=True)
class Leaf:
    predicate: Predicate


@dataclass(frozen=True)
class Not:
    child: ConstraintExpr


@dataclass(frozen=True)
class And:
    children: tuple[ConstraintExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("And needs at least two children")


@dataclass(frozen=True)
class Or:
    children: tuple[ConstraintExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if len(self.children) < 2:
            raise ValueError("Or needs at least two children")


ConstraintExpr = Union[TrueExpr, Leaf, Not, And, Or]
TRUE = TrueExpr()


def expr_depth(expr: ConstraintExpr) -> int:
    if isinstance(expr, (TrueExpr, Leaf)):
        return 1
    if isinstance(expr, Not):
        return 1 + expr_depth(expr.child)
    return 1 + max(expr_depth(c) for c in expr.children)


def leaves(expr: ConstraintExpr) -> list[Predicate]:
    if isinstance(expr, Leaf):
        return [expr.predicate]
    if isinstance(expr, Not):
        return leaves(expr.child)
    if isinstance(expr, (And, Or)):
        return [p for c in expr.children for p in leaves(c)]
    return []


@dataclass(frozen=True)
class Subscription:
    id: str
    subscriber_id: str
    scope: str
    expr: ConstraintExpr = TRUE
    expiry: int = 0
    entity: Optional[EntityRef] = None
    priority: Priority = Priority.HIGH
    callback: Callback = Callback.BROKER_ROUTED
    one_time: bool = False

    def __post_init__(self):
        if not self.id or not self.subscriber_id:
            raise ValueError("subscription id and subscriber must be non-empty")
        if not self.scope:
            raise ValueError("subscription scope must be non-empty")
        if expr_depth(self.expr) > MAX_EXPR_DEPTH:
            raise ValueError(f"constraint deeper than {MAX_EXPR_DEPTH}")

    def expired(self, now: int) -> bool:
        return self.expiry <= now


# -- parsing -----------------------------------------------------------------

class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at position {position}")


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<punct>[(){},])
  | (?P<string>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<number>[+-]?\d+(?:\.\d+)?(?![A-Za-z_]))
  | (?P<word>[A-Za-z_][A-Za-z0-9_.\-]*)
""", re.VERBOSE)

_KEYWORDS = {"AND", "OR", "NOT", "IN", "EXISTS", "TRUE"}
_BARE_LITERAL = re.compile(r"(?:[+-]?\d+(?:\.\d+)?|[A-Za-z_][A-Za-z0-9_.\-]*)\Z")
_BARE_ATTR = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        value = m.group()
        if kind == "word" and value.upper() in _KEYWORDS:
            kind, value = "kw", value.upper()
        elif kind == "string":
            value = re.sub(r"\\(.)", r"\1", value[1:-1])
        if kind != "ws":
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self, kind: str, value: str | None = None):
        tok = self.tokens[self.i]
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of input"
            raise ParseError(f"expected {want}, got {got!r}", tok[2])
        self.i += 1
        return tok

    def at(self, kind: str, value: str | None = None) -> bool:
        tok = self.tokens[self.i]
        return tok[0] == kind and (value is None or tok[1] == value)

    def expr(self) -> ConstraintExpr:
        terms = [self.term()]
        while self.at("kw", "OR"):
            self.i += 1
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Or(tuple(terms))

    def term(self) -> ConstraintExpr:
        factors = [self.factor()]
        while self.at("kw", "AND"):
            self.i += 1
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else And(tuple(factors))

    def factor(self) -> ConstraintExpr:
        if self.at("kw", "NOT"):
            self.i += 1
            return Not(self.factor())
        if self.at("punct", "("):
            self.i += 1
            inner = self.expr()
            self.take("punct", ")")
            return inner
        if self.at("kw", "TRUE"):
            self.i += 1
            return TRUE
        if self.at("kw", "EXISTS"):
            self.i += 1
            return Leaf(Predicate(self.attribute(), Op.EXISTS))
        attr = self.attribute()
        if self.at("kw", "IN"):
            self.i += 1
            self.take("punct", "{")
            consts = [self.literal()]
            while self.at("punct", ","):
                self.i += 1
                consts.append(self.literal())
            self.take("punct", "}")
            return Leaf(Predicate(attr, Op.IN, tuple(consts)))
        op = Op(self.take("op")[1])
        return Leaf(Predicate(attr, op, (self.literal(),)))

    def attribute(self) -> str:
        kind, value, pos = self.peek()
        if kind in ("word", "string") and value:
            self.i += 1
            return value
        raise ParseError(f"expected attribute name, got {value or 'end of input'!r}", pos)

    def literal(self) -> str:
        kind, value, pos = self.peek()
        if kind in ("string", "number", "word"):
            self.i += 1
            return value
        raise ParseError(f"expected literal, got {value or 'end of input'!r}", pos)


def parse_constraint(text: str) -> ConstraintExpr:
    """Parse constraint text; blank text is the always-true constraint."""
    if not text.strip():
        return TRUE
    parser = _Parser(text)
    expr = parser.expr()
    if not parser.at("end"):
        tok = parser.peek()
        raise ParseError(f"unexpected {tok[1]!r}", tok[2])
    if expr_depth(expr) > MAX_EXPR_DEPTH:
        raise ParseError(f"expression deeper than {MAX_EXPR_DEPTH}", 0)
    return expr


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _format_literal(value: str) -> str:
    if _BARE_LITERAL.match(value) and value.upper() not in _KEYWORDS:
        return value
    return _quote(value)


def _format_attr(name: str) -> str:
    return name if _BARE_ATTR.match(name) and name.upper() not in _KEYWORDS else _quote(name)


def format_constraint(expr: ConstraintExpr) -> str:
    """Canonical text for ``expr``; ``parse_constraint`` inverts it exactly."""
    if isinstance(expr, TrueExpr):
        return "TRUE"
    if isinstance(expr, Leaf):
        p = expr.predicate
        if p.op is Op.EXISTS:
            return f"EXISTS {_format_attr(p.attr)}"
        attr = _format_attr(p.attr)
        if p.op is Op.IN:
            return f"{attr} IN {{{', '.join(_format_literal(c) for c in p.constants)}}}"
        return f"{attr} {p.op.value} {_format_literal(p.constants[0])}"

    def wrap(child):
        text = format_constraint(child)
        return f"({text})" if isinstance(child, (And, Or)) else text

    if isinstance(expr, Not):
        return f"NOT {wrap(expr.child)}"
    joiner = " AND " if isinstance(expr, And) else " OR "
    return joiner.join(wrap(c) for c in expr.children)


# -- evaluation --------------------------------------------------------------

def _as_number(text: str) -> Decimal | None:
    if not _NUMBER.match(text):
        return None
    try:
        return Decimal(text)
    except InvalidOperation:
        return None


_NUMBER = re.compile(r"[+-]?\d+(\.\d+)?\Z")


def _compare(a: str, b: str) -> int:
    na, nb = _as_number(a), _as_number(b)
    if na is not None and nb is not None:
        return (na > nb) - (na < nb)
    return (a > b) - (a < b)


def eval_predicate(p: Predicate, data: Sequence[ParamValue]) -> bool:
    value = None
    for param in data:
        if isinstance(param, Atom) and param.name == p.attr:
            value = param.value
            break
    if value is None:
        return False
    if p.op is Op.EXISTS:
        return True
    if p.op is Op.IN:
        return value in p.constants
    c = p.constants[0]
    if p.op is Op.EQ:
        return value == c
    if p.op is Op.NEQ:
        return value != c
    cmp = _compare(value, c)
    return {Op.LT: cmp < 0, Op.LE: cmp <= 0, Op.GT: cmp > 0, Op.GE: cmp >= 0}[p.op]


def eval_expr(expr: ConstraintExpr, v: ContextElement | Sequence[ParamValue]) -> bool:
    data = v.data if isinstance(v, ContextElement) else v
    if isinstance(expr, TrueExpr):
        return True
    if isinstance(expr, Leaf):
        return eval_predicate(expr.predicate, data)
    if isinstance(expr, Not):
        return not eval_expr(expr.child, data)
    if isinstance(expr, And):
        return all(eval_expr(c, data) for c in expr.children)
    return any(eval_expr(c, data) for c in expr.children)


def matches(sub: Subscription, v: ContextElement, now: int) -> bool:
    if sub.expired(now) or sub.scope != v.scope:
        return False
    if sub.entity is not None and sub.entity != v.entity:
        return False
    return eval_expr(sub.expr, v)


def matching_set_oracle(sub: Subscription, candidates: Iterable[ContextElement],
                        now: int) -> list[ContextElement]:
    """Linear-scan reference for N(sigma); used to check broker routing."""
    return [v for v in candidates if matches(sub, v, now)]
