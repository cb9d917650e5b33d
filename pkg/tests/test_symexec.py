"""Symbolic execution: coverage, budget ledger, decomposition and worlds."""

from fractions import Fraction

import pytest
from hypothesis import HealthCheck, given, settings

from dpcheck.constraints import ground_eval, omega_decompose, symbols
from dpcheck.errors import EvalError
from dpcheck.parser import parse_program
from dpcheck.symexec import ProofOptions, explore

from helpers import (
    load, model_of, programs, relational_coverage_failures, unary_coverage_failures,
)

SLOW = settings(max_examples=60, deadline=None,
                suppress_health_check=[HealthCheck.too_slow])


@SLOW
@given(programs())
def test_unary_coverage(text):
    assert unary_coverage_failures(parse_program(text)) == []


@SLOW
@given(programs())
def test_relational_coverage_free_samples(text):
    assert relational_coverage_failures(parse_program(text), "strategyA") == []


@SLOW
@given(programs())
def test_relational_coverage_coupled_samples(text):
    assert relational_coverage_failures(parse_program(text), "prove") == []


@SLOW
@given(programs())
def test_free_exploration_has_no_shifts(text):
    ex = explore(parse_program(text), "strategyA", {}, Fraction(1))
    for w in ex.worlds:
        for tr in w.traces:
            om = omega_decompose(tr.cstrs)
            assert om.kvec == ()
            assert set(om.omega1) | set(om.omega2) | set(om.relational) == set(tr.cstrs)


@pytest.mark.parametrize("name,bindings", [
    ("alg1_buggy", {}), ("alg1_safe", {}), ("alg2_buggy", {"n": 3}),
    ("alg2_safe_top", {"n": 3}), ("alg2_safe_noised", {"n": 2}), ("alg3_buggy", {"n": 2}),
])
def test_corpus_free_exploration_has_no_shifts(name, bindings):
    ex = explore(load(name), "strategyA", bindings, None)
    traces = [tr for w in ex.worlds for tr in w.traces]
    assert traces
    for tr in traces:
        om = omega_decompose(tr.cstrs)
        assert om.kvec == ()
        assert len(om.omega1) + len(om.omega2) + len(om.relational) == len(tr.cstrs)


@pytest.mark.parametrize("eps", [Fraction(1), None])
@pytest.mark.parametrize("name,bindings", [("alg1_buggy", {}), ("alg2_buggy", {"n": 2}),
                                          ("alg2_safe_noised", {"n": 2})])
def test_budget_ledger_sums_coupling_costs(name, bindings, eps):
    ex = explore(load(name), "prove", bindings, eps)
    for w in ex.worlds:
        for tr in w.traces:
            m = model_of(tr.cstrs)
            if m is None:
                continue
            total = sum(abs(m[c.k] + ground_eval(c.mean1, m) - ground_eval(c.mean2, m)) * c.coef
                        for c in tr.couplings if c.kind == "lapgen")
            assert m[tr.budget] == total


def test_site_policy_both_doubles_worlds():
    prog = load("alg1_buggy")
    one = explore(prog, "prove", {}, None)
    both = explore(prog, "prove", {}, None,
                   options=ProofOptions(site_policy={(11, 3): ["lapgen", "avoc"]}))
    assert len(one.worlds) == 1 and len(both.worlds) == 2
    kinds = [{c.kind for tr in w.traces for c in tr.couplings} for w in both.worlds]
    assert kinds == [{"lapgen"}, {"avoc"}]


def test_symbols_are_never_reused():
    ex = explore(load("alg2_buggy"), "prove", {"n": 3}, None)
    assert ex.registry.audit()
    for w in ex.worlds:
        for tr in w.traces:
            assert all(s.id > 0 for c in tr.cstrs for s in symbols(c))


def test_symbolic_array_length_rejected():
    with pytest.raises(EvalError):
        explore(load("alg2_buggy"), "prove", {}, None)
