from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contextmesh.contextml import Atom, ContextElement, EntityRef
from contextmesh.matching import (
    TRUE, And, Leaf, Not, Op, Or, ParseError, Predicate, Subscription, eval_expr, eval_predicate,
    expr_depth, format_constraint, matches, matching_set_oracle, parse_constraint,
)

from oracles import (
    ATTRS, all_exprs, assignment, expr_oracle, predicate_oracle, presence_mask, random_expr,
    truth_mask,
)
from strategies import exprs, predicates

ALICE = EntityRef("username", "alice")


def element(scope="devScope_1", atoms=(), entity=ALICE, ts=0, expiry=30000):
    return ContextElement("MCxP_1", entity, scope, tuple(Atom(k, v) for k, v in atoms), ts, expiry)


class TestParse:
    def test_simple_comparison(self):
        assert parse_constraint("age > 25") == Leaf(Predicate("age", Op.GT, ("25",)))

    def test_structure(self):
        e = parse_constraint("a = 1 OR (b < 2 AND c IN {x,y})")
        assert isinstance(e, Or)
        assert len([n for n in _walk(e) if isinstance(n, Leaf)]) == 3
        assert e.children[1] == And((Leaf(Predicate("b", Op.LT, ("2",))),
                                     Leaf(Predicate("c", Op.IN, ("x", "y")))))

    def test_contradiction(self):
        e = parse_constraint("EXISTS x AND NOT EXISTS x")
        for data in ([], [Atom("x", "1")], [Atom("y", "1")]):
            assert not eval_expr(e, data)

    def test_precedence(self):
        assert parse_constraint("a = 1 OR b = 2 AND c = 3") == Or((
            Leaf(Predicate("a", Op.EQ, ("1",))),
            And((Leaf(Predicate("b", Op.EQ, ("2",))), Leaf(Predicate("c", Op.EQ, ("3",)))))))

    def test_blank_is_true(self):
        assert parse_constraint("  ") is TRUE
        assert parse_constraint("TRUE") is TRUE

    @pytest.mark.parametrize("text", ["age >", "AND", "(a = 1", "a IN {}", "a = 1 b", "a ~ 3", "EXISTS"])
    def test_errors(self, text):
        with pytest.raises(ParseError):
            parse_constraint(text)

    def test_depth_limit(self):
        text = "NOT " * 40 + "EXISTS a"
        with pytest.raises(ParseError):
            parse_constraint(text)

    @settings(max_examples=300, deadline=None)
    @given(exprs())
    def test_format_round_trip(self, e):
        assert parse_constraint(format_constraint(e)) == e


def _walk(e):
    yield e
    for c in getattr(e, "children", ()):
        yield from _walk(c)
    if isinstance(e, Not):
        yield from _walk(e.child)


class TestPredicate:
    def test_numeric_gt(self):
        p = Predicate("age", Op.GT, ("25",))
        assert eval_predicate(p, [Atom("age", "30")])
        assert not eval_predicate(p, [Atom("name", "bob")])

    def test_string_eq(self):
        p = Predicate("weatherCondition", Op.EQ, ("sunny",))
        assert eval_predicate(p, [Atom("weatherCondition", "sunny")])

    def test_numeric_vs_lexicographic(self):
        assert eval_predicate(Predicate("n", Op.LT, ("10",)), [Atom("n", "9")])
        assert not eval_predicate(Predicate("n", Op.LT, ("10",)), [Atom("n", "9x")])

    def test_arity(self):
        with pytest.raises(ValueError):
            Predicate("a", Op.EXISTS, ("1",))
        with pytest.raises(ValueError):
            Predicate("a", Op.IN, ())
        with pytest.raises(ValueError):
            Predicate("a", Op.EQ, ("1", "2"))

    @settings(max_examples=500)
    @given(predicates(ATTRS), st.dictionaries(st.sampled_from(ATTRS),
                                              st.integers(-5, 5).map(str) | st.sampled_from("abc")))
    def test_against_oracle(self, p, atoms):
        data = [Atom(k, v) for k, v in atoms.items()]
        assert eval_predicate(p, data) == predicate_oracle(p, atoms)


class TestExpr:
    def test_true(self):
        assert eval_expr(TRUE, [])

    def test_not_absent(self):
        assert eval_expr(Not(Leaf(Predicate("temperature", Op.EXISTS))), [Atom("x", "1")])

    def test_exhaustive_truth_tables(self):
        masks = {a: presence_mask(a) for a in ATTRS}
        for e in all_exprs(3):
            assert expr_depth(e) <= 3
            table = truth_mask(e, lambda p: masks[p.attr])
            for i in range(16):
                data = [Atom(k, v) for k, v in assignment(i).items()]
                assert eval_expr(e, data) == bool(table >> i & 1), format_constraint(e)

    def test_random_pairs(self):
        rng = random.Random(1234)
        for _ in range(1000):
            e = random_expr(rng, 3)
            atoms = {a: rng.choice(["1", "5", "10", "x", "y"]) for a in ATTRS if rng.random() < 0.7}
            assert eval_expr(e, [Atom(k, v) for k, v in atoms.items()]) == expr_oracle(e, atoms)


class TestMatches:
    def test_unconstrained(self):
        assert matches(Subscription("s", "c", "devScope_1", expiry=100), element(), 0)

    def test_scope_mismatch(self):
        assert not matches(Subscription("s", "c", "devScope_1", expiry=100), element("devScope_2"), 0)

    def test_expired(self):
        sub = Subscription("s", "c", "devScope_1", expiry=100)
        assert not matches(sub, element(), 100)

    def test_entity_filter(self):
        sub = Subscription("s", "c", "devScope_1", expiry=100, entity=EntityRef("username", "bob"))
        assert not matches(sub, element(), 0)

    def test_oracle_universal_and_empty(self):
        cands = [element(entity=EntityRef("username", f"u{i}")) for i in range(3)]
        assert matching_set_oracle(Subscription("s", "c", "devScope_1", expiry=9), cands, 0) == cands
        contra = parse_constraint("EXISTS x AND NOT EXISTS x")
        assert matching_set_oracle(Subscription("s", "c", "devScope_1", contra, 9), cands, 0) == []
