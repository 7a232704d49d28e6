"""Reference implementations used only by tests.

They are written separately from the library code and share none of its
helpers, so agreement between the two is meaningful.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from fractions import Fraction

from contextmesh.matching import TRUE, And, Leaf, Not, Op, Or, Predicate, TrueExpr

NUM = re.compile(r"^[+-]?[0-9]+(\.[0-9]+)?$")


def predicate_oracle(p: Predicate, atoms: dict[str, str]) -> bool:
    if p.attr not in atoms:
        return False
    v = atoms[p.attr]
    if p.op is Op.EXISTS:
        return True
    if p.op is Op.IN:
        return any(v == c for c in p.constants)
    c = p.constants[0]
    if p.op is Op.EQ:
        return v == c
    if p.op is Op.NEQ:
        return not v == c
    if NUM.match(v) and NUM.match(c):
        a, b = Fraction(v), Fraction(c)
    else:
        a, b = v, c
    return {Op.LT: a < b, Op.LE: a <= b, Op.GT: a > b, Op.GE: a >= b}[p.op]


def truth_mask(expr, leaf_mask) -> int:
    """Truth table of ``expr`` as a bitmask, given the bitmask of each leaf predicate."""
    full = (1 << 64) - 1
    if isinstance(expr, TrueExpr):
        return full
    if isinstance(expr, Leaf):
        return leaf_mask(expr.predicate)
    if isinstance(expr, Not):
        return full & ~truth_mask(expr.child, leaf_mask)
    masks = [truth_mask(c, leaf_mask) for c in expr.children]
    out = masks[0]
    for m in masks[1:]:
        out = out & m if isinstance(expr, And) else out | m
    return out


def expr_oracle(expr, atoms: dict[str, str]) -> bool:
    return bool(truth_mask(expr, lambda p: 1 if predicate_oracle(p, atoms) else 0) & 1)


ATTRS = ("a1", "a2", "a3", "a4")


def exists_leaves(attrs=ATTRS):
    return [TRUE] + [Leaf(Predicate(a, Op.EXISTS)) for a in attrs]


def all_exprs(max_depth: int, attrs=ATTRS) -> list:
    """Every expression over EXISTS leaves (plus TRUE) up to ``max_depth``; binary And/Or."""
    by_depth = {1: exists_leaves(attrs)}
    for d in range(2, max_depth + 1):
        lower = [e for k in range(1, d) for e in by_depth[k]]
        top = by_depth[d - 1]
        new = [Not(e) for e in top]
        for x, y in itertools.product(lower, lower):
            if x in top or y in top:
                new.append(And((x, y)))
                new.append(Or((x, y)))
        by_depth[d] = new
    return [e for d in sorted(by_depth) for e in by_depth[d]]


def presence_mask(attr: str, attrs=ATTRS) -> int:
    """Bit ``i`` set iff ``attr`` is present in assignment ``i`` (assignment = subset of attrs)."""
    j = attrs.index(attr)
    return sum(1 << i for i in range(2 ** len(attrs)) if i >> j & 1)


def assignment(i: int, attrs=ATTRS) -> dict[str, str]:
    return {a: "1" for j, a in enumerate(attrs) if i >> j & 1}


def poisson_mean_ci(mean: float, n: int, z: float = 4.0) -> float:
    """Half-width of a z-sigma interval for the mean of n exponential samples."""
    return z * mean / math.sqrt(n)


def random_expr(rng: random.Random, depth: int):
    """Random expression over ATTRS with all operators, depth at most ``depth``."""
    if depth == 1 or rng.random() < 0.3:
        if rng.random() < 0.1:
            return TRUE
        attr = rng.choice(ATTRS)
        op = rng.choice(list(Op))
        values = ["1", "5", "10", "x", "y"]
        if op is Op.EXISTS:
            consts = ()
        elif op is Op.IN:
            consts = tuple(rng.sample(values, rng.randint(1, 3)))
        else:
            consts = (rng.choice(values),)
        return Leaf(Predicate(attr, op, consts))
    kind = rng.choice(["not", "and", "or"])
    if kind == "not":
        return Not(random_expr(rng, depth - 1))
    kids = tuple(random_expr(rng, depth - 1) for _ in range(rng.randint(2, 3)))
    return And(kids) if kind == "and" else Or(kids)


# Measured rows typed in again here so the oracle does not read library constants.
CALLS = [500, 1000, 2000, 3000]
ROWS = {
    "IPC": ([0.092, 0.147, 0.554, 0.603], [0.034, 0.116, 0.311, 0.482]),
    "HTTP": ([4.08, 8.03, 15.65, 27.33], [4.52, 8.79, 17.15, 22.7]),
    "Sockets": ([1.32, 2.87, 4.82, 7.456], [0.998, 1.76, 3.52, 6.145]),
}


def oracle_mean_mj(mech, role=None):
    server, client = ROWS[mech]
    cols = {"server": server, "client": client, None: [s + c for s, c in zip(server, client)]}[role]
    return sum(1000 * j / n for j, n in zip(cols, CALLS)) / 4
