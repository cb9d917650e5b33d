"""Shared fixtures for the test suite: corpus loading and random programs."""

from fractions import Fraction
from importlib import resources

from hypothesis import strategies as st

from dpcheck import engine, smt
from dpcheck.concrete import run_program
from dpcheck.parser import parse_program
from dpcheck.symexec import explore, explore_unary
from dpcheck.wellformed import check_wellformed

CORPUS = ["alg1_buggy", "alg1_safe", "alg2_buggy", "alg2_safe_noised",
          "alg2_safe_top", "alg3_buggy"]

# Concrete inputs for every corpus program; the SVT variants run five queries.
CORPUS_INPUTS = {
    "alg1_buggy": {"q": 1},
    "alg1_safe": {"q": 1},
    "alg2_buggy": {"t": 0, "n": 5, "q": [0, 1, 2, 1, 0]},
    "alg2_safe_top": {"t": 0, "n": 5, "q": [0, 1, 2, 1, 0]},
    "alg2_safe_noised": {"t": 0, "n": 5, "q": [0, 1, 2, 1, 0]},
    "alg3_buggy": {"t": 0, "n": 5, "q": [0, 1, 2, 1, 0]},
}

# Acceptance result lines, printed at the end of the run by conftest.
ACCEPTANCE = []


def record(label: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def source(name: str) -> str:
    return (resources.files("dpcheck") / "programs" / f"{name}.pfor").read_text()


def load(name: str):
    prog = parse_program(source(name))
    assert check_wellformed(prog) == []
    return prog


HEADER = """program rand
params d : db, a : int, b : int
query q sensitivity 1
requires a<1> = a<2>
ensures o<1> = o<2>
budget 1 eps
output o
begin
"""

CMPS = ["==", "!=", "<", "<=", ">", ">="]


@st.composite
def _expr(draw, readable):
    def atom():
        return draw(st.one_of(st.integers(0, 3).map(str),
                              st.sampled_from(sorted(readable)),
                              st.just("q(d)")))
    if draw(st.booleans()):
        return atom()
    return f"{atom()} {draw(st.sampled_from(['+', '-']))} {atom()}"


@st.composite
def _block(draw, readable, budget, depth, indent):
    """A list of statement lines; ``budget`` holds remaining [branchings, samplings]."""
    pad = "  " * indent
    lines = []
    for _ in range(draw(st.integers(1, 3))):
        kind = draw(st.sampled_from(["assign", "sample", "if"]))
        if kind == "sample" and budget[1] > 0:
            budget[1] -= 1
            target = draw(st.sampled_from(sorted(readable - {"a", "b"}) or ["o"]))
            scale = draw(st.sampled_from(["eps", "eps / 2"]))
            lines.append(f"{pad}{target} := lap({draw(_expr(readable))}, {scale})")
        elif kind == "if" and budget[0] > 0 and depth < 2:
            budget[0] -= 1
            guard = f"{draw(_expr(readable))} {draw(st.sampled_from(CMPS))} {draw(_expr(readable))}"
            then = draw(_block(readable, budget, depth + 1, indent + 1))
            orelse = draw(_block(readable, budget, depth + 1, indent + 1))
            lines.append(f"{pad}if {guard} then\n" + ";\n".join(then)
                         + f"\n{pad}else\n" + ";\n".join(orelse) + f"\n{pad}end")
        else:
            target = draw(st.sampled_from(sorted(readable - {"a", "b"}) or ["o"]))
            lines.append(f"{pad}{target} := {draw(_expr(readable))}")
    return lines


@st.composite
def programs(draw):
    """Random source text with at most 3 branchings and 2 samplings."""
    pre = ["  o := 0", "  v := a"]
    body = draw(_block({"a", "b", "o", "v"}, [3, 2], 0, 1))
    return HEADER + ";\n".join(pre + body) + "\nend\n"


def replay(prog, inputs, samples, eps=Fraction(1)):
    """Run concretely, drawing sample values from ``samples`` in order."""
    queue = list(samples)

    def sampler(pos, mean, inv_scale):
        return queue.pop(0)
    finals = run_program(prog, inputs, eps, sampler=sampler)
    return finals, queue


def model_of(cstrs):
    v = smt.check_sat(cstrs, want_model=True)
    return v.model if v.status == "sat" else None


def inputs_from(prog, setup, model, side):
    return engine.concrete_inputs(prog, setup, model, side)


def unary_coverage_failures(prog) -> list:
    """Final unary traces whose model does not replay along the same branches."""
    finals, _, setup = explore_unary(prog, {}, Fraction(1), "free")
    bad = []
    for f in finals:
        m = model_of(f.cstrs)
        if m is None:
            continue
        runs, left = replay(prog, inputs_from(prog, setup, m, 1), [m.get(x, 0) for x in f.samples])
        if [r.history for r in runs] != [f.history] or left:
            bad.append(f.history)
    return bad


def relational_coverage_failures(prog, mode) -> list:
    ex = explore(prog, mode, {}, Fraction(1))
    bad = []
    for w in ex.worlds:
        for tr in w.traces:
            m = model_of(tr.cstrs)
            if m is None:
                continue
            for side, samples, hist in ((1, tr.samples1, tr.history1),
                                        (2, tr.samples2, tr.history2)):
                runs, left = replay(prog, inputs_from(prog, ex.setup, m, side),
                                    [m.get(x, 0) for x in samples])
                if [r.history for r in runs] != [hist] or left:
                    bad.append((side, hist))
    return bad
