"""Parser, grounder and answer-set semantics, checked against the
subset-enumeration reduct oracle."""

import random

import pytest

from nfl import asp
from nfl.asp import Aggregate, Atom, Program, Rule, Var
from nfl.errors import (
    CyclicProgramError,
    GroundingLimitError,
    ParseError,
    ReservedPredicateError,
    UncoveredKeyError,
    UnsafeVariableError,
)

from oracles import oracle_answer_sets, oracle_optimal_answer_sets, random_program


def AS(text):
    return asp.answer_sets(asp.ground(asp.parse_program(text)))


class TestParser:
    def test_normal_rule(self):
        p = asp.parse_program("p :- q, not r.")
        (r,) = p.rules
        assert r.head == Atom("p")
        assert r.body_pos == frozenset({Atom("q")})
        assert r.body_neg == frozenset({Atom("r")})

    def test_latent_choice_rule(self):
        p = asp.parse_program("1 { nn(1,0); nn(1,1) } 1.")
        (c,) = p.choices
        assert c.head.lower == 1 and c.head.upper == 1
        assert c.head.elements == (Atom("nn", (1, 0)), Atom("nn", (1, 1)))

    def test_comma_separated_choice_elements(self):
        p = asp.parse_program("1 { nn(1,0), nn(1,1) } 1.")
        assert len(p.choices[0].head.elements) == 2

    def test_self_recursion_rejected(self):
        with pytest.raises(CyclicProgramError, match="p"):
            asp.parse_program("p :- p.")

    def test_indirect_recursion_names_cycle(self):
        with pytest.raises(CyclicProgramError, match="p -> q -> p"):
            asp.parse_program("p :- q. q :- not p.")

    def test_syntax_error_carries_position(self):
        with pytest.raises(ParseError, match="2:"):
            asp.parse_program("p.\nq :- .")

    def test_reserved_nn_arity(self):
        with pytest.raises(ReservedPredicateError):
            asp.parse_program("nn(1,2,3).")

    def test_weak_constraint(self):
        p = asp.parse_program(":~ a, not b. [3@2, a, 7]")
        (w,) = p.weaks
        assert w.weight == 3 and w.priority == 2
        assert w.terms == ("a", 7)

    def test_weak_constraint_default_level(self):
        p = asp.parse_program(":~ a. [1]")
        assert p.weaks[0].priority == 0

    def test_range_sugar_in_facts(self):
        p = asp.parse_program("num(0..3).")
        assert len(p.rules) == 4

    def test_range_sugar_in_choice(self):
        p = asp.parse_program("1 { use(0..2) } 1.")
        assert len(p.choices[0].head.elements) == 3

    def test_range_rejected_in_rule_with_body(self):
        with pytest.raises(ParseError, match="range"):
            asp.parse_program("p(0..2) :- q.")

    def test_comments_and_roundtrip(self):
        text = "p :- q, not r.  % a comment\nq.\n"
        p = asp.parse_program(text)
        again = asp.parse_program(p.to_text())
        assert set(p.rules) == set(again.rules)

    def test_function_terms_in_weak_tuple(self):
        p = asp.parse_program(":~ a. [1@1, in_h(3)]")
        t = p.weaks[0].terms[0]
        assert t.name == "in_h" and t.args == (3,)


class TestGrounding:
    def test_two_constant_substitution(self):
        g = asp.ground(asp.parse_program("p(X) :- q(X). q(1). q(2)."))
        heads = sorted(repr(r.head) for r in g.rules if r.head and r.head.predicate == "p")
        assert heads == ["p(1)", "p(2)"]

    def test_empty_program_identity(self):
        assert asp.ground(Program()) == Program()

    def test_cartesian_count(self):
        g = asp.ground(asp.parse_program(
            "p(X,Y) :- q(X), r(Y). q(1). q(2). q(3). r(1). r(2)."))
        n = sum(1 for r in g.rules if r.head and r.head.predicate == "p" and r.body_pos)
        assert n == 6

    def test_unsafe_variable(self):
        with pytest.raises(UnsafeVariableError, match="X"):
            asp.ground(asp.parse_program("p(X) :- not q(X). q(1)."))

    def test_grounding_cap(self):
        text = "p(X,Y) :- q(X), q(Y). " + " ".join(f"q({i})." for i in range(40))
        with pytest.raises(GroundingLimitError):
            asp.ground(asp.parse_program(text), max_rules=100)

    def test_negative_body_grounds_through_positive(self):
        g = asp.ground(asp.parse_program("p(X) :- q(X), not r(X). q(1). r(1)."))
        assert asp.answer_sets(g) == [frozenset({Atom("q", (1,)), Atom("r", (1,))})]

    def test_weak_constraint_grounding(self):
        g = asp.ground(asp.parse_program("q(1). q(2). :~ q(X). [X@1, X]"))
        assert len(g.weaks) == 2


class TestAnswerSets:
    def test_binary_exclusive_choice(self):
        assert AS("1 { a; b } 1.") == [frozenset({Atom("a")}), frozenset({Atom("b")})]

    def test_constraint_prunes_branch(self):
        assert AS("1 { a; b } 1. :- a.") == [frozenset({Atom("b")})]

    def test_latent_program_product(self):
        text = ("1 { nn(1,0); nn(1,1); nn(1,2) } 1. "
                "1 { nn(2,0); nn(2,1); nn(2,2) } 1.")
        p = asp.parse_program(text)
        sets = asp.answer_sets(p)
        assert len(sets) == 9
        assert sets == oracle_answer_sets(p)

    def test_stratified_negation(self):
        assert AS("p :- not q.") == [frozenset({Atom("p")})]

    def test_choice_with_body(self):
        sets = AS("q. 1 { a; b } 1 :- q.")
        assert len(sets) == 2
        sets2 = AS("1 { a; b } 1 :- q.")
        assert sets2 == [frozenset()]

    def test_empty_set_valid_result(self):
        assert AS(":- a.") == [frozenset()]
        assert AS("a. :- a.") == []

    def test_choice_element_also_derived(self):
        # the derived element counts toward the bounds
        sets = AS("c. a :- c. 1 { a; b } 1.")
        assert sets == [frozenset({Atom("a"), Atom("c")})]

    def test_zero_bound_choice(self):
        sets = AS("0 { a } 0.")
        assert sets == [frozenset()]

    def test_determinism(self):
        text = "1 { a; b; c } 2. p :- a, not b. :- c, not a."
        one = [sorted(map(repr, s)) for s in AS(text)]
        two = [sorted(map(repr, s)) for s in AS(text)]
        assert one == two


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(60))
    def test_random_programs_match_oracle(self, seed):
        rng = random.Random(seed)
        p = random_program(rng, max_atoms=8)
        got = asp.answer_sets(p)
        want = oracle_answer_sets(p)
        assert got == want

    @pytest.mark.parametrize("seed", range(20))
    def test_every_answer_set_satisfies_bounds_and_constraints(self, seed):
        rng = random.Random(1000 + seed)
        p = random_program(rng, max_atoms=8)
        for s in asp.answer_sets(p):
            for c in p.choices:
                if c.body_pos <= s and not (c.body_neg & s):
                    assert c.head.satisfied_by(s)
            for r in p.rules:
                if r.head is None:
                    assert not (r.body_pos <= s and not (r.body_neg & s))

    @pytest.mark.parametrize("seed", range(20))
    def test_count_bounded_by_choice_branches(self, seed):
        rng = random.Random(2000 + seed)
        p = random_program(rng, max_atoms=8)
        bound = 1
        for c in p.choices:
            h = c.head
            k = len(h.elements)
            branches = sum(_comb(k, i) for i in range(h.lower, h.bound_upper() + 1))
            bound *= max(branches, 1) + 1  # +1 for the body-false branch
        assert len(asp.answer_sets(p)) <= max(bound, 1)


def _comb(n, k):
    import math
    return math.comb(n, k) if 0 <= k <= n else 0


class TestOptimalAnswerSets:
    def test_weighted_choice(self):
        p = asp.parse_program("1 { a; b } 1. :~ a. [2@1, a] :~ b. [1@1, b]")
        cost, sets = asp.optimal_answer_sets(p)
        assert cost == {1: 1}
        assert sets == [frozenset({Atom("b")})]

    def test_no_weaks_degenerate(self):
        p = asp.parse_program("1 { a; b } 1.")
        cost, sets = asp.optimal_answer_sets(p)
        assert cost == {}
        assert sets == asp.answer_sets(p)

    def test_tie_returns_both(self):
        p = asp.parse_program("1 { a; b } 1. :~ a. [1@1, a] :~ b. [1@1, b]")
        cost, sets = asp.optimal_answer_sets(p)
        assert cost == {1: 1} and len(sets) == 2

    def test_priority_levels_lexicographic(self):
        # level 2 dominates: pick b despite the higher level-1 cost
        p = asp.parse_program(
            "1 { a; b } 1. :~ a. [1@2, a] :~ b. [9@1, b]")
        cost, sets = asp.optimal_answer_sets(p)
        assert sets == [frozenset({Atom("b")})]
        assert cost == {2: 0, 1: 9}

    def test_distinct_term_tuples_sum(self):
        p = asp.parse_program("a. :~ a. [1@1, x] :~ a. [1@1, y] :~ a. [1@1, x]")
        cost, _ = asp.optimal_answer_sets(p)
        assert cost == {1: 2}

    @pytest.mark.parametrize("seed", range(15))
    def test_cost_minimal_against_enumeration(self, seed):
        rng = random.Random(3000 + seed)
        p = random_program(rng, max_atoms=7)
        weaks = []
        names = sorted({a.predicate for a in p.all_atoms()})
        for nm in names[:3]:
            weaks.append(asp.WeakConstraint(frozenset({Atom(nm)}), frozenset(),
                                            rng.randint(1, 4), 1, (nm,)))
        p = Program(p.rules, p.choices, tuple(weaks))
        if not asp.answer_sets(p):
            return
        cost, sets = asp.optimal_answer_sets(p)
        key, want = oracle_optimal_answer_sets(p)
        assert sets == want
        levels = sorted({w.priority for w in p.weaks}, reverse=True)
        assert tuple(cost.get(lv, 0) for lv in levels) == key


class TestMinAggregate:
    def test_min_of_set(self):
        assert asp.min_aggregate_eval(frozenset(), {"e1": {5, 3, 9}}) == {"e1": 3}

    def test_singleton(self):
        assert asp.min_aggregate_eval(frozenset(), {"e1": {7}}) == {"e1": 7}

    def test_empty_input(self):
        assert asp.min_aggregate_eval(frozenset(), {}) == {}

    def test_empty_candidates_fail(self):
        with pytest.raises(UncoveredKeyError, match="e9"):
            asp.min_aggregate_eval(frozenset(), {"e9": set()})


class TestHelpers:
    def test_herbrand_base(self):
        p = asp.parse_program("p(1). q(a) :- p(1).")
        hb = asp.herbrand_base(p)
        # two predicates, two constants
        assert len(hb) == 4
        hb2 = asp.herbrand_base(p, frozenset({"b"}))
        assert len(hb2) == 6

    def test_substitute(self):
        r = Rule(Atom("p", (Var("X"),)), frozenset({Atom("q", (Var("X"),))}))
        g = r.substitute({Var("X"): 3})
        assert repr(g) == "p(3) :- q(3)."

    def test_program_concat(self):
        a = asp.parse_program("p.")
        b = asp.parse_program("q :- p.")
        assert len(a + b) == 2
