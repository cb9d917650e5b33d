"""Symbols, constraint sets, substitution and the three-way decomposition."""

import pytest
from hypothesis import given, strategies as st

from dpcheck.constraints import (
    BUDGET, INPUT, SAMPLE, SHIFT, CBin, Cmp, Lit, Registry, Sym, add, apply_subst,
    canonical, ground_eval, omega_decompose, project_side, side_of, symbols,
    trunc_div,
)
from dpcheck.errors import GroundEvalError, UnmappedSymbol

REG = Registry()
POOL = ([REG.fresh(1, INPUT) for _ in range(3)] + [REG.fresh(2, INPUT) for _ in range(3)]
        + [REG.fresh(1, SAMPLE), REG.fresh(2, SAMPLE), REG.fresh(0, SHIFT), REG.fresh(0, BUDGET)])

terms = st.recursive(
    st.one_of(st.integers(-5, 5).map(Lit), st.sampled_from(POOL).map(Sym)),
    lambda sub: st.builds(CBin, st.sampled_from("+-*"), sub, sub), max_leaves=4)
cmps = st.builds(Cmp, st.sampled_from(["=", "<", "<=", ">", ">=", "!="]), terms, terms)
csets = st.lists(cmps, max_size=8).map(lambda cs: add((), *cs))


def test_registry_fresh_ids_unique():
    reg = Registry()
    syms = [reg.fresh(i % 3, INPUT) for i in range(200)]
    syms += [reg.named(("q", "x", i % 5, 1), 1, INPUT) for i in range(20)]
    assert reg.audit()
    assert len({s.id for s in syms}) == 200 + 5
    assert reg.named(("q", "x", 0, 1), 1, INPUT) is reg.lookup(("q", "x", 0, 1))


@given(csets)
def test_omega_is_partition(cs):
    om = omega_decompose(cs)
    parts = [set(om.omega1), set(om.omega2), set(om.relational)]
    assert parts[0].isdisjoint(parts[1]) and parts[0].isdisjoint(parts[2])
    assert parts[1].isdisjoint(parts[2])
    assert parts[0] | parts[1] | parts[2] == set(cs)
    assert len(om.omega1) + len(om.omega2) + len(om.relational) == len(cs)
    assert all(k.origin == SHIFT for k in om.kvec)


@given(csets, st.dictionaries(st.sampled_from(POOL), st.integers(-5, 5), min_size=len(POOL)))
def test_subst_commutes_with_projection(cs, sigma):
    for i in (1, 2):
        left = apply_subst(sigma, project_side(i, cs))
        # Substitution erases sides, so compare against the projected originals.
        right = tuple(c for c, d in zip(apply_subst(sigma, cs), cs) if side_of(d) == i)
        assert left == right


def test_subst_reports_missing_symbol():
    x = POOL[0]
    with pytest.raises(UnmappedSymbol):
        apply_subst({}, (Cmp("=", Sym(x), Lit(1)),))


@given(csets)
def test_canonical_order_independent(cs):
    assert canonical(cs) == canonical(tuple(reversed(cs)))


@given(st.integers(-50, 50), st.integers(-7, 7).filter(lambda b: b != 0))
def test_trunc_div_rounds_toward_zero(a, b):
    q = trunc_div(a, b)
    assert abs(q) == abs(a) // abs(b)
    assert q * b + (a - q * b) == a and abs(a - q * b) < abs(b)


def test_ground_eval_errors():
    with pytest.raises(GroundEvalError):
        ground_eval(CBin("/", Lit(1), Lit(0)))
    x = POOL[0]
    assert ground_eval(Cmp("<", Sym(x), Lit(3)), {x: 2}) is True


def test_side_of():
    i1, i2, k = POOL[0], POOL[3], POOL[8]
    assert side_of(Cmp("=", Sym(i1), Lit(0))) == 1
    assert side_of(Cmp("=", Sym(i2), Lit(0))) == 2
    assert side_of(Cmp("=", Sym(i1), Sym(i2))) == 0
    assert side_of(Cmp("=", Sym(i1), Sym(k))) == 0
    assert symbols(Cmp("=", Sym(i1), Sym(k))) == {i1, k}
