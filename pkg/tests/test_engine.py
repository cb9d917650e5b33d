"""Proof and refutation drivers, reports and soundness against the oracle."""

import dataclasses
import itertools
from fractions import Fraction

import pytest

from dpcheck import engine
from dpcheck.errors import ConfigError
from dpcheck.oracle import denote_output_dist, eps_divergence
from dpcheck.parser import parse_program

from helpers import load, source


def cfg(**kw):
    return engine.EngineConfig(**kw)


def test_safe_laplace_proved():
    rep = engine.prove(load("alg1_safe"), cfg())
    assert rep.status == "proved" and rep.exit_code == 0
    assert rep.witness == [{"site": "11:3#0", "shift": "qd1-qd2"}]


def test_buggy_laplace_needs_twice_the_budget():
    prog = load("alg1_buggy")
    assert engine.prove(prog, cfg()).status == "inconclusive"
    assert engine.prove(prog, cfg(budget=Fraction(2))).status == "proved"


def test_refutation_carries_confirmed_oracle_run():
    rep = engine.refute_C(load("alg1_buggy"), cfg())
    assert rep.status == "refuted" and rep.exit_code == 10
    o = rep.refutation["oracle"]
    assert o["confirmed"] and o["divergence"] > o["margin"]


def test_suspected_claims_no_confirmation(monkeypatch):
    real = engine.confirm_counterexample

    def unconfirmed(*args, **kw):
        return dataclasses.replace(real(*args, **kw), confirmed=False)
    monkeypatch.setattr(engine, "confirm_counterexample", unconfirmed)
    rep = engine.refute_C(load("alg1_buggy"), cfg())
    assert rep.status == "suspected" and rep.exit_code == 11
    assert not rep.refutation["oracle"]["confirmed"]


def test_fixed_witness_checked_not_searched():
    prog = load("alg2_buggy")
    ok = engine.prove(prog, cfg(bindings={"n": 2}, witness={"12:3#0": "0"}))
    assert ok.status == "proved"
    bad = engine.prove(prog, cfg(bindings={"n": 2}, witness={"12:3#0": "1"}))
    assert bad.status == "inconclusive"
    with pytest.raises(ConfigError):
        engine.prove(prog, cfg(bindings={"n": 2}, witness={"nowhere": "0"}))


def test_pointwise_empty_domain_is_vacuous():
    rep = engine.prove_pointwise(load("alg2_safe_top"), cfg(bindings={"n": 2}), domain=[])
    assert rep.status == "proved" and rep.vacuous


def test_trace_identifiability():
    assert engine.trace_identifiable(load("alg3_buggy"))
    assert engine.trace_identifiable(load("alg2_buggy"))
    prog = parse_program(source("alg1_buggy").replace(
        "o := v + rho", "if rho > 0 then\n    o := v\n  else\n    o := v + 1\n  end"))
    assert not engine.trace_identifiable(prog)
    rep = engine.refute_A(prog, cfg())
    assert rep.status == "inconclusive" and "assume-trace-identifiable" in rep.reasons[0]


def test_strategy_a_needs_two_queries():
    rep = engine.refute_A(load("alg3_buggy"), cfg(bindings={"n": 1}))
    assert rep.status == "inconclusive"
    assert rep.reasons == ["no orthogonal trace found"]


def test_report_json_shape():
    data = engine.prove(load("alg1_safe"), cfg()).to_json()
    assert data["schema"] == "dpcheck.report/1"
    assert data["verdict"]["status"] == "proved"
    assert {"settings", "traces", "witness", "timing"} <= set(data)


CORPUS_SMALL = [("alg1_buggy", {}), ("alg1_safe", {}), ("alg2_buggy", {"n": 2}),
                ("alg2_safe_top", {"n": 2}), ("alg2_safe_noised", {"n": 2}),
                ("alg3_buggy", {"n": 2})]


@pytest.mark.parametrize("name,bindings", CORPUS_SMALL)
def test_prove_refute_exclusive(name, bindings):
    prog = load(name)
    proved = engine.prove(prog, cfg(bindings=bindings)).status == "proved"
    refuted = engine.refute_all(prog, cfg(bindings=bindings)).status == "refuted"
    assert not (proved and refuted)


def adjacent_grid(prog, bindings):
    """Adjacent concrete input pairs over a small range."""
    n = bindings.get("n")
    r = prog.queries[0].sensitivity
    vals = range(-1, 2)
    tables = [list(t) for t in itertools.product(vals, repeat=n)] if n else list(vals)
    for q1, q2 in itertools.product(tables, repeat=2):
        pairs = zip(q1, q2) if n else [(q1, q2)]
        if all(abs(a - b) <= r for a, b in pairs):
            extra = {"t": 0, "n": n} if n else {}
            yield {**extra, "q": q1}, {**extra, "q": q2}


@pytest.mark.parametrize("name,bindings", [("alg1_safe", {}), ("alg2_buggy", {"n": 1}),
                                          ("alg2_safe_top", {"n": 1})])
def test_proved_programs_pass_oracle_grid(name, bindings):
    prog = load(name)
    assert engine.prove(prog, cfg(bindings=bindings)).status == "proved"
    worst = 0.0
    for in1, in2 in adjacent_grid(prog, bindings):
        mu1 = denote_output_dist(prog, in1, Fraction(1))
        mu2 = denote_output_dist(prog, in2, Fraction(1))
        worst = max(worst, eps_divergence(mu1, mu2, 1.0))
    assert worst <= 1e-6
