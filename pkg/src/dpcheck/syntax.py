"""Abstract syntax for PFOR programs and their relational (paired) extension.

All nodes are immutable dataclasses.  Source positions are carried in a
``pos`` field that does not take part in equality, so a parsed tree and a
hand-built tree compare equal when their structure matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass, replace
from fractions import Fraction
from typing import Optional, Union

# Sentinel values for the "no answer" and "above threshold" outputs.  They sit
# far outside the range any example program can produce.
BOT = -(2 ** 31)
TOP = -(2 ** 31) + 1

ARITH_OPS = ("+", "-", "*", "/")


def _pos():
    return field(default=None, compare=False, repr=False)


# ---------------------------------------------------------------- expressions


@dataclass(frozen=True)
class IntLit:
    value: int
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Var:
    name: str
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class ArrIdx:
    array: str
    index: "Expr"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Len:
    array: str
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Pair:
    left: "Expr"
    right: "Expr"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Query:
    """Call of an abstract query: ``q(d)`` (index None) or ``q[i](d)``."""

    name: str
    index: Optional["Expr"]
    db: "Expr"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class SymVal:
    """An already evaluated value embedded in an expression.

    Never produced by the parser; the symbolic executors use it when they
    rewrite loops with symbolic bounds.
    """

    value: object
    pos: Optional[tuple] = _pos()


Expr = Union[IntLit, Var, ArrIdx, Len, BinOp, Pair, Query, SymVal]

# ------------------------------------------------------------------- commands


@dataclass(frozen=True)
class Skip:
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Seq:
    first: "Cmd"
    second: "Cmd"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class ArrAssign:
    array: str
    index: Expr
    rhs: Expr
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class LapSample:
    """``x := lap(mean, inv_scale)``; the second argument is 1/scale."""

    target: str
    mean: Expr
    inv_scale: Expr
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class If:
    guard: Expr
    then: "Cmd"
    orelse: "Cmd"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class For:
    var: str
    lo: Expr
    hi: Expr
    body: "Cmd"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class PairCmd:
    left: "Cmd"
    right: "Cmd"
    pos: Optional[tuple] = _pos()


Cmd = Union[Skip, Seq, Assign, ArrAssign, LapSample, If, For, PairCmd]

# -------------------------------------------------------- relational formulas


@dataclass(frozen=True)
class SideVar:
    """``x<i>``: program variable x read in the memory of run i."""

    name: str
    side: int
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class SideIdx:
    name: str
    side: int
    index: "Term"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class SideLen:
    name: str
    side: int
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class SideQuery:
    name: str
    index: Optional["Term"]
    db: str
    side: int
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class LogVar:
    name: str
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class AbsTerm:
    arg: "Term"
    pos: Optional[tuple] = _pos()


Term = Union[IntLit, BinOp, SideVar, SideIdx, SideLen, SideQuery, LogVar, AbsTerm, Var]


@dataclass(frozen=True)
class ATrue:
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class ACmp:
    op: str
    lhs: Term
    rhs: Term
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class AAnd:
    items: tuple
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class ANot:
    item: "Assertion"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class AForall:
    var: str
    lo: Term
    hi: Term
    body: "Assertion"
    pos: Optional[tuple] = _pos()


Assertion = Union[ATrue, ACmp, AAnd, ANot, AForall]

# -------------------------------------------------------------------- program


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "int", "db" or "array"
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class QueryDecl:
    name: str
    lo: Optional[Expr]
    hi: Optional[Expr]
    sensitivity: int
    pos: Optional[tuple] = _pos()

    @property
    def indexed(self) -> bool:
        return self.lo is not None


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    length: Expr
    init: Expr
    pos: Optional[tuple] = _pos()


@dataclass(frozen=True)
class Program:
    name: str
    params: tuple
    queries: tuple
    arrays: tuple
    requires: Assertion
    ensures: Assertion
    budget: Fraction
    body: Cmd
    output: str
    logvars: tuple = ()
    pos: Optional[tuple] = _pos()

    def query(self, name: str) -> Optional[QueryDecl]:
        for q in self.queries:
            if q.name == name:
                return q
        return None

    def param(self, name: str) -> Optional[Param]:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def array_decl(self, name: str) -> Optional[ArrayDecl]:
        for a in self.arrays:
            if a.name == name:
                return a
        return None


# ----------------------------------------------------------------- utilities


def seq(*cmds: Cmd) -> Cmd:
    """Right-nested sequence of the given commands (Skip when empty)."""
    cmds = [c for c in cmds]
    if not cmds:
        return Skip()
    out = cmds[-1]
    for c in reversed(cmds[:-1]):
        out = Seq(c, out)
    return out


def children(node):
    for f in fields(node):
        if f.name == "pos":
            continue
        v = getattr(node, f.name)
        if is_dataclass(v):
            yield v
        elif isinstance(v, tuple):
            for item in v:
                if is_dataclass(item):
                    yield item


def walk(node):
    """Pre-order iteration over a syntax tree."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(list(children(n))))


def contains_pair(node) -> bool:
    return any(isinstance(n, (Pair, PairCmd)) for n in walk(node))


def project(side: int, node):
    """Projection of a relational expression or command onto one run."""
    if side not in (1, 2):
        raise ValueError("side must be 1 or 2")
    if isinstance(node, (Pair, PairCmd)):
        return node.left if side == 1 else node.right
    if isinstance(node, SymVal):
        return node
    if not is_dataclass(node):
        return node
    changes = {}
    for f in fields(node):
        if f.name == "pos":
            continue
        v = getattr(node, f.name)
        if is_dataclass(v):
            nv = project(side, v)
            if nv is not v:
                changes[f.name] = nv
    return replace(node, **changes) if changes else node


# ------------------------------------------------------------ pretty printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _lit(n: int) -> str:
    if n == BOT:
        return "bot"
    if n == TOP:
        return "top"
    return str(n) if n >= 0 else f"(-{-n})"


def pretty_expr(e, prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return _lit(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, ArrIdx):
        return f"{e.array}[{pretty_expr(e.index)}]"
    if isinstance(e, Len):
        return f"len({e.array})"
    if isinstance(e, Query):
        idx = "" if e.index is None else f"[{pretty_expr(e.index)}]"
        return f"{e.name}{idx}({pretty_expr(e.db)})"
    if isinstance(e, Pair):
        return f"⟨{pretty_expr(e.left)} | {pretty_expr(e.right)}⟩"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{pretty_expr(e.lhs, p)} {e.op} {pretty_expr(e.rhs, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, SymVal):
        return f"«{e.value}»"
    raise TypeError(f"not an expression: {e!r}")


def pretty_guard(g) -> str:
    """Guards are printed with comparison sugar where the shape allows it."""
    if isinstance(g, BinOp) and g.op == "+" and g.rhs == IntLit(1):
        inner = g.lhs
        if isinstance(inner, BinOp) and inner.op == "-":
            return f"{pretty_expr(inner.lhs, 1)} >= {pretty_expr(inner.rhs, 2)}"
    if isinstance(g, BinOp) and g.op == "-":
        return f"{pretty_expr(g.lhs, 1)} > {pretty_expr(g.rhs, 2)}"
    return pretty_expr(g)


def _flatten_seq(c):
    out = []
    while isinstance(c, Seq):
        out.append(c.first)
        c = c.second
    out.append(c)
    return out


def pretty_cmd(c, indent: int = 0) -> str:
    pad = "  " * indent
    parts = _flatten_seq(c)
    return ";\n".join(_pretty_atom(p, indent, pad) for p in parts)


def _pretty_atom(c, indent, pad) -> str:
    if isinstance(c, Seq):
        # A sequence nested on the left needs explicit grouping.
        return f"{pad}{{\n{pretty_cmd(c, indent + 1)}\n{pad}}}"
    if isinstance(c, Skip):
        return f"{pad}skip"
    if isinstance(c, Assign):
        return f"{pad}{c.target} := {pretty_expr(c.expr)}"
    if isinstance(c, ArrAssign):
        return f"{pad}{c.array}[{pretty_expr(c.index)}] := {pretty_expr(c.rhs)}"
    if isinstance(c, LapSample):
        return f"{pad}{c.target} := lap({pretty_expr(c.mean)}, {pretty_expr(c.inv_scale)})"
    if isinstance(c, If):
        s = f"{pad}if {pretty_guard(c.guard)} then\n{pretty_cmd(c.then, indent + 1)}\n"
        if not isinstance(c.orelse, Skip):
            s += f"{pad}else\n{pretty_cmd(c.orelse, indent + 1)}\n"
        return s + f"{pad}end"
    if isinstance(c, For):
        return (f"{pad}for {c.var} in {pretty_expr(c.lo)}:{pretty_expr(c.hi)} do\n"
                f"{pretty_cmd(c.body, indent + 1)}\n{pad}end")
    if isinstance(c, PairCmd):
        return (f"{pad}⟨\n{pretty_cmd(c.left, indent + 1)}\n{pad}|\n"
                f"{pretty_cmd(c.right, indent + 1)}\n{pad}⟩")
    raise TypeError(f"not a command: {c!r}")


def pretty_term(t, prec: int = 0) -> str:
    if isinstance(t, SideVar):
        return f"{t.name}<{t.side}>"
    if isinstance(t, SideIdx):
        return f"{t.name}<{t.side}>[{pretty_term(t.index)}]"
    if isinstance(t, SideLen):
        return f"len({t.name}<{t.side}>)"
    if isinstance(t, SideQuery):
        idx = "" if t.index is None else f"[{pretty_term(t.index)}]"
        return f"{t.name}{idx}({t.db}<{t.side}>)"
    if isinstance(t, LogVar):
        return t.name
    if isinstance(t, Var):
        return t.name
    if isinstance(t, AbsTerm):
        return f"|{pretty_term(t.arg)}|"
    if isinstance(t, IntLit):
        return _lit(t.value)
    if isinstance(t, BinOp):
        p = _PREC[t.op]
        s = f"{pretty_term(t.lhs, p)} {t.op} {pretty_term(t.rhs, p + 1)}"
        return f"({s})" if p < prec else s
    raise TypeError(f"not a term: {t!r}")


def pretty_assertion(a, top: bool = True) -> str:
    if isinstance(a, ATrue):
        return "true"
    if isinstance(a, ACmp):
        return f"{pretty_term(a.lhs)} {a.op} {pretty_term(a.rhs)}"
    if isinstance(a, AAnd):
        if not a.items:
            return "true"
        s = " && ".join(pretty_assertion(x, False) for x in a.items)
        return s if top else f"({s})"
    if isinstance(a, ANot):
        inner = a.item
        if (isinstance(inner, AAnd) and len(inner.items) == 2
                and isinstance(inner.items[1], ANot)):
            s = (f"{pretty_assertion(inner.items[0], False)} => "
                 f"{pretty_assertion(inner.items[1].item, False)}")
            return s if top else f"({s})"
        return f"!({pretty_assertion(inner)})"
    if isinstance(a, AForall):
        return (f"(forall {a.var} in {pretty_term(a.lo)}:{pretty_term(a.hi)}. "
                f"{pretty_assertion(a.body, False)})")
    raise TypeError(f"not an assertion: {a!r}")


def format_budget(b: Fraction) -> str:
    return f"{b.numerator} eps" if b.denominator == 1 else f"{b.numerator}/{b.denominator} eps"


def pretty_program(p: Program) -> str:
    lines = [f"program {p.name}"]
    if p.params:
        lines.append("params " + ", ".join(f"{x.name} : {x.kind}" for x in p.params))
    for q in p.queries:
        rng = "" if q.lo is None else f"[{pretty_expr(q.lo)}:{pretty_expr(q.hi)}]"
        lines.append(f"query {q.name}{rng} sensitivity {q.sensitivity}")
    for a in p.arrays:
        lines.append(f"array {a.name}[{pretty_expr(a.length)}] := {pretty_expr(a.init)}")
    for v in p.logvars:
        lines.append(f"logvar {v}")
    lines.append(f"requires {pretty_assertion(p.requires)}")
    lines.append(f"ensures {pretty_assertion(p.ensures)}")
    lines.append(f"budget {format_budget(p.budget)}")
    lines.append(f"output {p.output}")
    lines.append("begin")
    lines.append(pretty_cmd(p.body, 1))
    lines.append("end")
    return "\n".join(lines) + "\n"
