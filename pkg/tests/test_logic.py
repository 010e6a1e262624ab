"""Terms, unification, parsing, and the arithmetic generator."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabpll.logic import (
    ArityError,
    Clause,
    Literal,
    ParseError,
    Problem,
    Term,
    apply_subst,
    apply_subst_lit,
    clause_to_str,
    eval_ground,
    generate_ra_problem,
    is_var,
    mkvar,
    num,
    occurs,
    parse_problem,
    problem_to_str,
    ra_axiom_clauses,
    rename_apart,
    term_to_str,
    unifiable_literals,
    unify,
    unify_literals,
    walk,
)

# ---------------------------------------------------------------------------
# term strategies

_names = st.sampled_from(["f", "g", "h", "a", "b", "c0"])


def _terms(max_depth=3):
    base = st.one_of(
        st.integers(min_value=0, max_value=4).map(mkvar),
        _names.map(Term),
    )
    return st.recursive(
        base,
        lambda kids: st.tuples(
            st.sampled_from(["f", "g"]), st.lists(kids, min_size=1, max_size=2)
        ).map(lambda p: Term(p[0], tuple(p[1]))),
        max_leaves=8,
    )


def _literals():
    return st.tuples(
        st.booleans(),
        st.sampled_from(["p", "q"]),
        st.lists(_terms(), min_size=1, max_size=2),
    ).map(lambda t: Literal(t[0], t[1], tuple(t[2])))


# ---------------------------------------------------------------------------
# terms and substitutions


def test_term_equality_and_hash():
    t1 = Term("f", (mkvar(0), Term("a")))
    t2 = Term("f", (mkvar(0), Term("a")))
    assert t1 == t2 and hash(t1) == hash(t2)
    assert t1 != Term("f", (mkvar(1), Term("a")))
    assert mkvar(3) == mkvar(3) and mkvar(3) != mkvar(4)


def test_vars_cached():
    t = Term("f", (mkvar(0), Term("g", (mkvar(2),))))
    assert t.vars == frozenset({0, 2})
    assert Term("a").vars == frozenset()


def test_apply_subst_identity_preserved():
    t = Term("f", (Term("a"),))
    assert apply_subst(t, {0: Term("b")}) is t
    v = Term("f", (mkvar(0),))
    assert apply_subst(v, {1: Term("b")}) is v  # untouched variable


def test_apply_subst_chases_chains():
    s = {0: mkvar(1), 1: Term("a")}
    assert apply_subst(mkvar(0), s) == Term("a")


def test_occurs():
    s = {1: Term("f", (mkvar(0),))}
    assert occurs(0, mkvar(1), s)
    assert not occurs(2, mkvar(1), s)


# ---------------------------------------------------------------------------
# unification


def test_unify_basic():
    s = unify(mkvar(0), Term("a"))
    assert s == {0: Term("a")}
    assert unify(Term("a"), Term("b")) is None


def test_unify_occurs_check():
    assert unify(mkvar(0), Term("f", (mkvar(0),))) is None


def test_unify_does_not_mutate_input():
    s0 = {5: Term("a")}
    s1 = unify(mkvar(0), Term("b"), s0)
    assert s0 == {5: Term("a")}
    assert s1 == {5: Term("a"), 0: Term("b")}


@given(_terms(), _terms())
@settings(max_examples=200, deadline=None)
def test_unify_produces_unifier(a, b):
    s = unify(a, b)
    if s is not None:
        assert apply_subst(a, s) == apply_subst(b, s)


@given(_terms(), _terms())
@settings(max_examples=200, deadline=None)
def test_unify_symmetric(a, b):
    assert (unify(a, b) is None) == (unify(b, a) is None)


@given(_literals(), _literals(), st.integers(min_value=0, max_value=10))
@settings(max_examples=300, deadline=None)
def test_unifiable_agrees_with_unify(a, b, shift):
    """The check-only overlay unifier matches rename-then-unify."""
    b_shifted = rename_apart(Clause(0, (b,)), shift).literals[0]
    expect = unify_literals(a, b_shifted, {}) is not None
    assert unifiable_literals(a, b, {}, shift_b=shift) == expect


def test_unifiable_respects_existing_subst():
    a = Literal(True, "p", (mkvar(0),))
    b = Literal(True, "p", (Term("b"),))
    assert unifiable_literals(a, b, {})
    assert not unifiable_literals(a, b, {0: Term("a")})


# ---------------------------------------------------------------------------
# parsing and printing


def test_parse_roundtrip():
    text = "#start: 0\np(X) | ~q(f(X,a)).\nq(b).\n"
    p = parse_problem(text)
    assert problem_to_str(parse_problem(problem_to_str(p))) == problem_to_str(p)
    assert p.start_clause_ids == (0,)
    assert p.clauses[0].literals[1] == Literal(
        False, "q", (Term("f", (mkvar(0), Term("a"))),))


def test_parse_comments_and_metadata():
    p = parse_problem("#note: hello\n% comment\np(a). % tail\n")
    assert p.metadata["note"] == "hello"
    assert len(p.clauses) == 1


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_problem("p(a)")  # missing period
    with pytest.raises(ParseError):
        parse_problem("p(a)) .\n")
    with pytest.raises(ParseError):
        parse_problem("X | p(a).\n")  # variable literal


def test_arity_check():
    with pytest.raises(ArityError):
        parse_problem("p(a).\np(a,b).\n")
    with pytest.raises(ArityError):
        parse_problem("p(f(a)).\nq(f(a,b)).\n")


def test_duplicate_start_id_missing():
    with pytest.raises(ValueError):
        Problem("x", (Clause(0, (Literal(True, "p", ()),)),), (1,))


@given(st.integers(min_value=0, max_value=500))
@settings(max_examples=50, deadline=None)
def test_generated_problem_roundtrips(seed):
    p = generate_ra_problem(seed, n_operators=1, operand_bound=5)
    q = parse_problem(problem_to_str(p), name=p.name)
    assert problem_to_str(q) == problem_to_str(p)


# ---------------------------------------------------------------------------
# arithmetic


def test_num_and_eval():
    assert eval_ground(num(7)) == 7
    assert eval_ground(Term("plus", (num(2), num(3)))) == 5
    assert eval_ground(Term("times", (num(2), num(3)))) == 6
    with pytest.raises(ValueError):
        eval_ground(mkvar(0))


def test_ra_axioms_parse():
    axioms = ra_axiom_clauses()
    assert len(axioms) == 12
    assert clause_to_str(axioms[0]) == "eq(X0,X0)."


@given(st.integers(min_value=0, max_value=10000))
@settings(max_examples=100, deadline=None)
def test_generator_equation_true(seed):
    """The negated conjecture is a true ground equation."""
    p = generate_ra_problem(seed, n_operators=2, operand_bound=8)
    conj = p.clauses[p.start_clause_ids[0]]
    (lit,) = conj.literals
    assert not lit.pol and lit.pred == "eq"
    lhs, rhs = lit.args
    assert eval_ground(lhs) == eval_ground(rhs)


def test_generator_deterministic():
    a = generate_ra_problem(42)
    b = generate_ra_problem(42)
    assert problem_to_str(a) == problem_to_str(b)
    assert a.name == "ra_42"
