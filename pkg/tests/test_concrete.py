"""Concrete unary and relational semantics."""

from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dpcheck.concrete import (
    Ctx, RConfig, UConfig, initial_memory, output_value, rel_step_rc, run_program,
    run_relational, step_c,
)
from dpcheck.constraints import Gt0, Le0, LapDecl, Registry
from dpcheck.errors import ScaleError, StuckSampling
from dpcheck.parser import parse_program
from dpcheck.syntax import BOT, TOP

from helpers import load, programs


def fixed_sampler(pos, mean, inv_scale):
    # Deterministic in the site and mean, so unary and relational runs agree.
    return mean + pos[0] % 3 - 1


def inputs(a, b, q):
    return {"a": a, "b": b, "q": q}


@settings(max_examples=60, deadline=None)
@given(programs(), st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2))
def test_projection_coherence(text, a, b, q1, q2):
    prog = parse_program(text)
    reg = Registry()
    ctx1, ctx2 = Ctx(reg, 1, fixed_sampler), Ctx(reg, 2, fixed_sampler)
    m1 = initial_memory(prog, inputs(a, b, q1), Fraction(1), "d1")
    m2 = initial_memory(prog, inputs(a, b, q2), Fraction(1), "d2")
    work = [RConfig(m1, m2, prog.body)]
    while work:
        r = work.pop()
        for r2 in rel_step_rc(r, ctx1, ctx2):
            for i, ctx in ((1, ctx1), (2, ctx2)):
                before, after = r.side(i), r2.side(i)
                assert after == before or after in step_c(before, ctx)
            work.append(r2)


@settings(max_examples=60, deadline=None)
@given(programs(), st.integers(-2, 2), st.integers(-2, 2))
def test_relational_run_matches_unary_runs(text, q1, q2):
    prog = parse_program(text)
    rel = run_relational(prog, inputs(0, 1, q1), inputs(0, 1, q2), Fraction(1),
                         samplers=(fixed_sampler, fixed_sampler))
    u1 = run_program(prog, inputs(0, 1, q1), Fraction(1), sampler=fixed_sampler)
    u2 = run_program(prog, inputs(0, 1, q2), Fraction(1), sampler=fixed_sampler)
    assert len(rel) == len(u1) == len(u2) == 1
    assert output_value(rel[0].mem1, "o") == output_value(u1[0].mem, "o")
    assert output_value(rel[0].mem2, "o") == output_value(u2[0].mem, "o")
    assert rel[0].history1 == u1[0].history and rel[0].history2 == u2[0].history


@settings(max_examples=60, deadline=None)
@given(programs())
def test_prob_trace_only_grows(text):
    prog = parse_program(text)
    ctx = Ctx(Registry(), 1)
    work = [UConfig(initial_memory(prog, inputs(0, 0, 1), Fraction(1)), prog.body)]
    while work:
        cfg = work.pop()
        try:
            succ = step_c(cfg, ctx)
        except StuckSampling:
            continue  # a random mean: this path has no successor
        for nxt in succ:
            assert nxt.ptrace[:len(cfg.ptrace)] == cfg.ptrace
            assert nxt.history[:len(cfg.history)] == cfg.history
            work.append(nxt)


def test_random_guard_splits_exhaustively():
    prog = load("alg3_buggy")
    finals = run_program(prog, {"t": 0, "n": 1, "q": [0]}, Fraction(1))
    assert len(finals) == 2
    last = [f.ptrace[-1] for f in finals]
    assert {type(c) for c in last} == {Gt0, Le0}
    assert last[0].expr == last[1].expr
    assert {output_value(f.mem, "o") for f in finals} == {(TOP,), (BOT,)}
    assert isinstance(finals[0].ptrace[0], LapDecl)


def test_concrete_sampler_gives_single_run():
    prog = load("alg1_safe")
    finals = run_program(prog, {"q": 3}, Fraction(1), sampler=lambda pos, mean, s: mean + 4)
    assert len(finals) == 1 and output_value(finals[0].mem, "o") == 7


def test_nonpositive_scale_rejected():
    prog = load("alg1_buggy")
    with pytest.raises(ScaleError):
        run_program(prog, {"q": 0}, Fraction(0))
