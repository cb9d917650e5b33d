"""Solver encoding, model decoding and the exists-forall search."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dpcheck import engine, smt
from dpcheck.constraints import (
    INPUT, SHIFT, CBin, Cmp, Lit, Registry, Sym, add, c_and, ground_eval,
)
from dpcheck.errors import SolverMissing
from dpcheck.symexec import explore

from helpers import load

REG = Registry()
XS = [REG.fresh(1, INPUT) for _ in range(4)]

terms = st.recursive(
    st.one_of(st.integers(-6, 6).map(Lit), st.sampled_from(XS).map(Sym)),
    lambda sub: st.builds(CBin, st.sampled_from("+-*"), sub, sub), max_leaves=4)
cmps = st.builds(Cmp, st.sampled_from(["=", "<", "<=", ">", ">=", "!="]), terms, terms)
csets = st.lists(cmps, min_size=1, max_size=6).map(lambda cs: add((), *cs))


@settings(max_examples=60, deadline=None)
@given(csets)
def test_models_satisfy_their_query(cs):
    v = smt.check_sat(cs, want_model=True)
    assert v.status in ("sat", "unsat", "unknown")
    if v.status == "sat":
        assert all(ground_eval(c, v.model) for c in cs)


@given(csets)
def test_declarations_round_trip(cs):
    q = smt.SolverQuery(cs)
    declared = smt.parse_declarations(q.script())
    assert declared == {smt.smt_name(s) for s in q.declarations()}
    assert {s for c in cs for s in q.declarations()} <= set(XS)


def test_decode_values():
    items = smt.parse_sexprs("((x1 (- 3)) (x2 (/ 1 2)) (x3 7) (x4 (- (/ 5 2))))")[0]
    values = [smt.sexpr_value(v) for _, v in items]
    assert values == [-3, Fraction(1, 2), 7, Fraction(-5, 2)]


def test_validity():
    x = XS[0]
    assert smt.check_validity((Cmp(">", Sym(x), Lit(0)),), Cmp(">=", Sym(x), Lit(1))).status == "valid"
    v = smt.check_validity((Cmp(">=", Sym(x), Lit(0)),), Cmp(">", Sym(x), Lit(0)))
    assert v.status == "invalid" and v.counter_model[x] == 0


def test_missing_solver_is_reported():
    with pytest.raises(SolverMissing):
        smt.find_solver("/nonexistent/z3")
    with pytest.raises(SolverMissing):
        smt.find_solver("no-such-solver-binary")


def test_template_search_finds_shift():
    reg = Registry()
    a1, a2 = reg.fresh(1, INPUT), reg.fresh(2, INPUT)
    x1, k = reg.fresh(1, INPUT), reg.fresh(0, SHIFT)
    # x2 = x1 + k must equal x1 + a2 - a1 for every a1, a2, x1.
    x2 = CBin("+", Sym(x1), Sym(k))
    ob = smt.Obligation((), Cmp("=", x2, CBin("+", Sym(x1), CBin("-", Sym(a2), Sym(a1)))))
    diff = CBin("-", Sym(a2), Sym(a1))
    cl = smt.ShiftClass("s", ["0", "1", "a2-a1"], {k: [Lit(0), Lit(1), diff]})
    res = smt.solve_exists_forall([cl], [ob], {}, 10)
    assert res.status == "witness" and res.choice == {"s": "a2-a1"}


def test_template_search_reports_failure():
    reg = Registry()
    a, k = reg.fresh(1, INPUT), reg.fresh(0, SHIFT)
    ob = smt.Obligation((), Cmp("=", Sym(k), CBin("*", Lit(3), Sym(a))))
    cl = smt.ShiftClass("s", ["0", "1"], {k: [Lit(0), Lit(1)]})
    res = smt.solve_exists_forall([cl], [ob], {}, 10)
    assert res.status != "witness"


@pytest.mark.parametrize("name,bindings", [("alg1_safe", {}), ("alg2_buggy", {"n": 2})])
def test_tiers_agree(name, bindings):
    prog = load(name)
    cfg = engine.EngineConfig(bindings=bindings)
    ex = explore(prog, "prove", bindings, None)
    bound = engine._budget_bound(prog, cfg)
    post_of = lambda tr: engine.instantiate(prog.ensures, tr.mem1, tr.mem2, tr.cstrs, ex.ctx)
    traces = ex.worlds[0].traces
    obs = engine._obligations(ex, traces, post_of, bound)
    classes = engine.shift_classes(ex, traces)
    res = smt.solve_exists_forall(classes, obs, ex.registry.definitions, 20, tier2=False)
    assert res.status == "witness" and res.tier == 1
    shifts = {k: cl for cl in classes for k in cl.members}
    all_syms = set().union(*[smt.symbols(c_and(*ob.hyp, ob.goal)) for ob in obs])
    dependent = {s for s in all_syms if s.id in ex.registry.definitions and s not in shifts}
    free = sorted(all_syms - dependent - set(shifts), key=lambda s: s.id)
    t2 = smt._tier2(classes, obs, shifts, free, dependent, smt._Local(), 20)
    assert t2.status != "refuted"
