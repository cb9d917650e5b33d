"""Parser, pretty printer, projection and well-formedness."""

import pytest
from hypothesis import given, settings, strategies as st

from dpcheck.errors import ParseError
from dpcheck.parser import parse_cmd, parse_expr, parse_program
from dpcheck.syntax import (
    Assign, BinOp, IntLit, LapSample, Pair, PairCmd, Seq, Skip, Var, contains_pair,
    pretty_cmd, pretty_expr, pretty_program, project, walk,
)
from dpcheck.wellformed import check_wellformed

from helpers import CORPUS, load, programs, source


@pytest.mark.parametrize("name", CORPUS)
def test_corpus_round_trip(name):
    prog = load(name)
    text = pretty_program(prog)
    again = parse_program(text)
    assert again == prog
    assert pretty_program(again) == text


@settings(max_examples=100, deadline=None)
@given(programs())
def test_random_round_trip(text):
    prog = parse_program(text)
    assert parse_program(pretty_program(prog)) == prog


def test_expression_precedence():
    e = parse_expr("1 - (2 - 3) * 4")
    assert e == BinOp("-", IntLit(1), BinOp("*", BinOp("-", IntLit(2), IntLit(3)), IntLit(4)))
    assert pretty_expr(e) == "1 - (2 - 3) * 4"


def test_pair_parsing_and_projection():
    c = parse_cmd("x := << 1 | 2 >>; << y := lap(x, eps) | skip >>")
    assert contains_pair(c)
    left, right = project(1, c), project(2, c)
    assert not contains_pair(left) and not contains_pair(right)
    assert pretty_cmd(left) == "x := 1;\ny := lap(x, eps)"
    assert pretty_cmd(right) == "x := 2;\nskip"


def test_nested_pair_rejected():
    with pytest.raises(ParseError):
        parse_cmd("x := << << 1 | 2 >> | 3 >>")
    with pytest.raises(ParseError):
        parse_cmd("<< << skip | skip >> | skip >>")


pair_exprs = st.builds(Pair, st.integers(0, 9).map(IntLit), st.integers(0, 9).map(IntLit))
leaf_exprs = st.one_of(st.integers(0, 9).map(IntLit), st.sampled_from("xyz").map(Var), pair_exprs)
exprs = st.recursive(leaf_exprs, lambda sub: st.builds(BinOp, st.sampled_from("+-*"), sub, sub),
                     max_leaves=6)


@given(exprs, st.sampled_from([1, 2]))
def test_projection_removes_pairs(e, side):
    arms = PairCmd(LapSample("b", Var("x"), Var("eps")), Skip())
    p = project(side, Seq(Assign("a", e), arms))
    assert not any(isinstance(n, (Pair, PairCmd)) for n in walk(p))


def test_projection_rejects_bad_side():
    with pytest.raises(ValueError):
        project(3, Skip())


def test_wellformed_diagnostics():
    bad = parse_program("""program bad
params d : db
query q sensitivity 1
requires true
ensures o<1> = o<2>
budget 1 eps
output o
begin
  if q(d) > 0 then
    o := 1
  else
    skip
  end
end
""")
    codes = {d.code for d in check_wellformed(bad)}
    assert "output-unassigned" in codes
    with pytest.raises(ParseError):
        parse_program(source("alg1_safe").replace("v := q(d)", "v := r(d)"))


def test_parse_error_position():
    with pytest.raises(ParseError) as info:
        parse_program("program p\nparams d : db\nbegin\n  x := \nend\n")
    assert info.value.line >= 4
