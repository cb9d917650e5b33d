"""Parser for the ``.pfor`` surface syntax.

The surface language has comparison and boolean connectives in ``if``
guards.  The core language only knows "guard > 0", so guards are desugared
while parsing:

    a > b   ->  a - b            a >= b  ->  a - b + 1
    a < b   ->  b - a            a <= b  ->  b - a + 1
    a == b  ->  a >= b && a <= b
    g && h  ->  if g then (if h then c1 else c2) else c2
    g || h  ->  if g then c1 else (if h then c1 else c2)
    !g      ->  swap the branches
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import ParseError
from .syntax import (
    AAnd, ACmp, AForall, ANot, ATrue, AbsTerm, ArrAssign, ArrIdx, ArrayDecl,
    Assign, BOT, BinOp, For, If, IntLit, LapSample, Len, LogVar, Pair, PairCmd,
    Param, Program, Query, QueryDecl, Seq, SideIdx, SideLen, SideQuery, SideVar,
    Skip, TOP, Var, walk,
)

KEYWORDS = {
    "program", "params", "param", "query", "sensitivity", "array", "logvar",
    "requires", "ensures", "budget", "output", "begin", "end", "skip", "lap",
    "if", "then", "else", "for", "in", "do", "len", "bot", "top", "eps",
    "true", "forall",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>\d+)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<sym>:=|=>|==|!=|>=|<=|&&|\|\||<<|>>|[-+*/()\[\]{};:,.<>=!|⟨⟩])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # "num", "id", "kw", "sym", "eof"
    text: str
    line: int
    col: int

    @property
    def pos(self):
        return (self.line, self.col)


def tokenize(source: str) -> list:
    tokens = []
    line, line_start, i = 1, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if not m:
            raise ParseError(f"unexpected character {source[i]!r}", line, i - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = i - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "id":
            tokens.append(Token("kw" if text in KEYWORDS else "id", text, line, col))
        else:
            if text == "<<":
                text = "⟨"
            elif text == ">>":
                text = "⟩"
            tokens.append(Token(kind, text, line, col))
        i = m.end()
    tokens.append(Token("eof", "", line, i - line_start + 1))
    return tokens


# Guard trees, desugared into nested If commands.
@dataclass(frozen=True)
class _GExpr:
    expr: object


@dataclass(frozen=True)
class _GCmp:
    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class _GAnd:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class _GOr:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class _GNot:
    arg: object


_CMP_OPS = (">", ">=", "<", "<=", "==", "=", "!=")


def desugar_if(g, then, orelse, pos=None):
    if isinstance(g, _GExpr):
        return If(g.expr, then, orelse, pos=pos)
    if isinstance(g, _GCmp):
        a, b = g.lhs, g.rhs
        if g.op == ">":
            return If(BinOp("-", a, b), then, orelse, pos=pos)
        if g.op == ">=":
            return If(BinOp("+", BinOp("-", a, b), IntLit(1)), then, orelse, pos=pos)
        if g.op == "<":
            return If(BinOp("-", b, a), then, orelse, pos=pos)
        if g.op == "<=":
            return If(BinOp("+", BinOp("-", b, a), IntLit(1)), then, orelse, pos=pos)
        if g.op in ("==", "="):
            return desugar_if(_GAnd(_GCmp(">=", a, b), _GCmp("<=", a, b)), then, orelse, pos)
        if g.op == "!=":
            return desugar_if(_GCmp("==", a, b), orelse, then, pos)
    if isinstance(g, _GAnd):
        return desugar_if(g.lhs, desugar_if(g.rhs, then, orelse, pos), orelse, pos)
    if isinstance(g, _GOr):
        return desugar_if(g.lhs, then, desugar_if(g.rhs, then, orelse, pos), pos)
    if isinstance(g, _GNot):
        return desugar_if(g.arg, orelse, then, pos)
    raise TypeError(g)


class Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.queries = {}
        self.logvars = set()
        self.bound = []  # forall-bound names, innermost last

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text) -> bool:
        t = self.tok
        return t.kind in ("sym", "kw") and t.text == text

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "id":
            self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def number(self) -> int:
        if self.tok.kind != "num":
            self.error(f"expected number, found {self.tok.text!r}")
        t = self.tok
        self.i += 1
        return int(t.text)

    def error(self, msg, tok=None):
        t = tok or self.tok
        raise ParseError(msg, t.line, t.col)

    # -- program
    def program(self) -> Program:
        start = self.expect("program")
        name = self.ident().text
        params, queries, arrays, logvars = [], [], [], []
        requires = ensures = None
        budget = None
        output = None
        while not self.at("begin"):
            t = self.tok
            if self.accept("params") or self.accept("param"):
                while True:
                    pt = self.ident()
                    self.expect(":")
                    kt = self.tok
                    if kt.kind == "id" and kt.text in ("int", "db"):
                        kind = kt.text
                    elif kt.kind == "kw" and kt.text == "array":
                        kind = "array"
                    else:
                        self.error("parameter kind must be int, db or array")
                    self.i += 1
                    params.append(Param(pt.text, kind, pos=pt.pos))
                    if not self.accept(","):
                        break
            elif self.accept("query"):
                qt = self.ident()
                lo = hi = None
                if self.accept("["):
                    lo = self.expr()
                    self.expect(":")
                    hi = self.expr()
                    self.expect("]")
                self.expect("sensitivity")
                r = self.number()
                decl = QueryDecl(qt.text, lo, hi, r, pos=qt.pos)
                if qt.text in self.queries:
                    self.error(f"query {qt.text} declared twice", qt)
                self.queries[qt.text] = decl
                queries.append(decl)
            elif self.accept("array"):
                at = self.ident()
                self.expect("[")
                length = self.expr()
                self.expect("]")
                self.expect(":=")
                init = self.expr()
                arrays.append(ArrayDecl(at.text, length, init, pos=at.pos))
            elif self.accept("logvar"):
                v = self.ident().text
                logvars.append(v)
                self.logvars.add(v)
            elif self.accept("requires"):
                requires = self.assertion()
            elif self.accept("ensures"):
                ensures = self.assertion()
            elif self.accept("budget"):
                num = self.number()
                den = 1
                if self.accept("/"):
                    den = self.number()
                    if den == 0:
                        self.error("zero denominator in budget")
                self.expect("eps")
                budget = Fraction(num, den)
            elif self.accept("output"):
                output = self.ident().text
            else:
                self.error(f"unexpected {t.text or 'end of input'!r} in program header")
        self.expect("begin")
        body = self.cmds()
        self.expect("end")
        if self.tok.kind != "eof":
            self.error("trailing input after program end")
        if output is None:
            self.error("program has no 'output' declaration", start)
        return Program(
            name=name,
            params=tuple(params),
            queries=tuple(queries),
            arrays=tuple(arrays),
            requires=requires or ATrue(),
            ensures=ensures or ATrue(),
            budget=budget if budget is not None else Fraction(1),
            body=body,
            output=output,
            logvars=tuple(logvars),
            pos=start.pos,
        )

    # -- commands
    def cmds(self):
        items = [self.cmd()]
        while self.accept(";"):
            if self.at("end") or self.at("else") or self.at("|") or self.at("⟩") or self.at("}"):
                break
            items.append(self.cmd())
        out = items[-1]
        for c in reversed(items[:-1]):
            out = Seq(c, out, pos=c.pos)
        return out

    def cmd(self):
        t = self.tok
        if self.accept("skip"):
            return Skip(pos=t.pos)
        if self.accept("{"):
            c = self.cmds()
            self.expect("}")
            return c
        if self.accept("⟨"):
            left = self.cmds()
            self.expect("|")
            right = self.cmds()
            self.expect("⟩")
            for side in (left, right):
                for n in walk(side):
                    if isinstance(n, (PairCmd, Pair)):
                        self.error("nested pair construct", t)
            return PairCmd(left, right, pos=t.pos)
        if self.accept("if"):
            g = self.guard()
            self.expect("then")
            then = self.cmds()
            orelse = Skip(pos=self.tok.pos)
            if self.accept("else"):
                orelse = self.cmds()
            self.expect("end")
            return desugar_if(g, then, orelse, t.pos)
        if self.accept("for"):
            v = self.ident().text
            self.expect("in")
            lo = self.expr()
            self.expect(":")
            hi = self.expr()
            self.expect("do")
            body = self.cmds()
            self.expect("end")
            return For(v, lo, hi, body, pos=t.pos)
        if t.kind == "id":
            self.i += 1
            if t.text in self.queries:
                self.error(f"cannot assign to query {t.text}", t)
            if self.accept("["):
                idx = self.expr()
                self.expect("]")
                self.expect(":=")
                return ArrAssign(t.text, idx, self.expr(), pos=t.pos)
            self.expect(":=")
            if self.accept("lap"):
                self.expect("(")
                mean = self.expr()
                self.expect(",")
                scale = self.expr()
                self.expect(")")
                return LapSample(t.text, mean, scale, pos=t.pos)
            return Assign(t.text, self.expr(), pos=t.pos)
        if t.kind == "kw" and t.text == "eps":
            self.error("eps is read-only", t)
        self.error(f"expected a command, found {t.text or 'end of input'!r}")

    # -- guards
    def guard(self):
        g = self.guard_and()
        while self.accept("||"):
            g = _GOr(g, self.guard_and())
        return g

    def guard_and(self):
        g = self.guard_not()
        while self.accept("&&"):
            g = _GAnd(g, self.guard_not())
        return g

    def guard_not(self):
        if self.accept("!"):
            return _GNot(self.guard_not())
        if self.at("("):
            save = self.i
            self.i += 1
            try:
                g = self.guard()
                self.expect(")")
                if not (self.tok.kind == "sym" and (self.tok.text in _CMP_OPS
                                                    or self.tok.text in "+-*/")):
                    return g
            except ParseError:
                pass
            self.i = save
        lhs = self.expr()
        if self.tok.kind == "sym" and self.tok.text in _CMP_OPS:
            op = self.tok.text
            self.i += 1
            return _GCmp(op, lhs, self.expr())
        return _GExpr(lhs)

    # -- expressions
    def expr(self):
        e = self.term()
        while self.tok.kind == "sym" and self.tok.text in ("+", "-"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.term(), pos=t.pos)
        return e

    def term(self):
        e = self.factor()
        while self.tok.kind == "sym" and self.tok.text in ("*", "/"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.factor(), pos=t.pos)
        return e

    def factor(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return IntLit(int(t.text), pos=t.pos)
        if self.accept("-"):
            if self.tok.kind == "num":
                n = self.number()
                return IntLit(-n, pos=t.pos)
            return BinOp("-", IntLit(0), self.factor(), pos=t.pos)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("bot"):
            return IntLit(BOT, pos=t.pos)
        if self.accept("top"):
            return IntLit(TOP, pos=t.pos)
        if self.accept("eps"):
            return Var("eps", pos=t.pos)
        if self.accept("len"):
            self.expect("(")
            a = self.ident().text
            self.expect(")")
            return Len(a, pos=t.pos)
        if self.accept("⟨"):
            left = self.expr()
            self.expect("|")
            right = self.expr()
            self.expect("⟩")
            if any(isinstance(n, Pair) for n in walk(left)) or any(
                    isinstance(n, Pair) for n in walk(right)):
                self.error("nested pair construct", t)
            return Pair(left, right, pos=t.pos)
        if t.kind == "id":
            self.i += 1
            if self.at("["):
                self.i += 1
                idx = self.expr()
                self.expect("]")
                if self.at("("):
                    return self._query_call(t, idx)
                return ArrIdx(t.text, idx, pos=t.pos)
            if self.at("("):
                return self._query_call(t, None)
            return Var(t.text, pos=t.pos)
        self.error(f"expected an expression, found {t.text or 'end of input'!r}")

    def _query_call(self, t, idx):
        decl = self.queries.get(t.text)
        if decl is None:
            self.error(f"undeclared query {t.text}", t)
        if decl.indexed and idx is None:
            self.error(f"query {t.text} is indexed; use {t.text}[i](d)", t)
        if not decl.indexed and idx is not None:
            self.error(f"query {t.text} takes no index", t)
        self.expect("(")
        db = self.expr()
        self.expect(")")
        return Query(t.text, idx, db, pos=t.pos)

    # -- relational assertions
    def assertion(self):
        a = self.a_or()
        if self.accept("=>"):
            b = self.assertion()
            return ANot(AAnd((a, ANot(b))))
        return a

    def a_or(self):
        a = self.a_and()
        while self.accept("||"):
            b = self.a_and()
            a = ANot(AAnd((ANot(a), ANot(b))))
        return a

    def a_and(self):
        items = [self.a_not()]
        while self.accept("&&"):
            items.append(self.a_not())
        return items[0] if len(items) == 1 else AAnd(tuple(items))

    def a_not(self):
        t = self.tok
        if self.accept("!"):
            return ANot(self.a_not(), pos=t.pos)
        if self.accept("true"):
            return ATrue(pos=t.pos)
        if self.accept("forall"):
            v = self.ident().text
            self.expect("in")
            lo = self.a_term()
            self.expect(":")
            hi = self.a_term()
            self.expect(".")
            self.bound.append(v)
            try:
                body = self.assertion()
            finally:
                self.bound.pop()
            return AForall(v, lo, hi, body, pos=t.pos)
        if self.at("("):
            save = self.i
            self.i += 1
            try:
                a = self.assertion()
                self.expect(")")
                if not (self.tok.kind == "sym" and (self.tok.text in _CMP_OPS
                                                    or self.tok.text in "+-*/")):
                    return a
            except ParseError:
                pass
            self.i = save
        lhs = self.a_term()
        if not (self.tok.kind == "sym" and self.tok.text in _CMP_OPS):
            self.error("expected a comparison")
        op = self.tok.text
        self.i += 1
        if op == "==":
            op = "="
        return ACmp(op, lhs, self.a_term(), pos=t.pos)

    def a_term(self):
        e = self.a_mul()
        while self.tok.kind == "sym" and self.tok.text in ("+", "-"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.a_mul(), pos=t.pos)
        return e

    def a_mul(self):
        e = self.a_atom()
        while self.tok.kind == "sym" and self.tok.text in ("*", "/"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.a_atom(), pos=t.pos)
        return e

    def _side(self) -> int:
        self.expect("<")
        t = self.tok
        s = self.number()
        if s not in (1, 2):
            self.error("side must be 1 or 2", t)
        self.expect(">")
        return s

    def a_atom(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return IntLit(int(t.text), pos=t.pos)
        if self.accept("-"):
            if self.tok.kind == "num":
                return IntLit(-self.number(), pos=t.pos)
            return BinOp("-", IntLit(0), self.a_atom(), pos=t.pos)
        if self.accept("("):
            e = self.a_term()
            self.expect(")")
            return e
        if self.accept("|"):
            e = self.a_term()
            self.expect("|")
            return AbsTerm(e, pos=t.pos)
        if self.accept("bot"):
            return IntLit(BOT, pos=t.pos)
        if self.accept("top"):
            return IntLit(TOP, pos=t.pos)
        if self.accept("eps"):
            return Var("eps", pos=t.pos)
        if self.accept("len"):
            self.expect("(")
            a = self.ident().text
            side = self._side()
            self.expect(")")
            return SideLen(a, side, pos=t.pos)
        if t.kind == "id":
            self.i += 1
            if t.text in self.queries:
                idx = None
                if self.accept("["):
                    idx = self.a_term()
                    self.expect("]")
                self.expect("(")
                db = self.ident().text
                side = self._side()
                self.expect(")")
                decl = self.queries[t.text]
                if decl.indexed != (idx is not None):
                    self.error(f"query {t.text} index mismatch", t)
                return SideQuery(t.text, idx, db, side, pos=t.pos)
            if t.text in self.bound or t.text in self.logvars:
                return LogVar(t.text, pos=t.pos)
            if self.at("<"):
                side = self._side()
                if self.accept("["):
                    idx = self.a_term()
                    self.expect("]")
                    return SideIdx(t.text, side, idx, pos=t.pos)
                return SideVar(t.text, side, pos=t.pos)
            self.error(f"undeclared logical variable {t.text}", t)
        self.error(f"expected a term, found {t.text or 'end of input'!r}")


def _assigned_names(cmd) -> set:
    out = set()
    for n in walk(cmd):
        if isinstance(n, (Assign, LapSample)):
            out.add(n.target)
        elif isinstance(n, For):
            out.add(n.var)
    return out


def _resolve(prog: Program) -> None:
    """Reject identifiers that are neither parameters nor ever assigned."""
    scalars = {p.name for p in prog.params if p.kind != "array"}
    scalars |= _assigned_names(prog.body) | {"eps"}
    arrays = {p.name for p in prog.params if p.kind == "array"}
    arrays |= {a.name for a in prog.arrays}
    nodes = [prog.body] + [a.length for a in prog.arrays] + [a.init for a in prog.arrays]
    nodes += [q.lo for q in prog.queries if q.lo is not None]
    nodes += [q.hi for q in prog.queries if q.hi is not None]
    for root in nodes:
        for n in walk(root):
            if isinstance(n, Var) and n.name not in scalars:
                line, col = n.pos or (0, 0)
                raise ParseError(f"undeclared identifier {n.name}", line, col)
            if isinstance(n, (ArrIdx, ArrAssign, Len)) and n.array not in arrays:
                line, col = n.pos or (0, 0)
                raise ParseError(f"undeclared array {n.array}", line, col)
    for a in (prog.requires, prog.ensures):
        for n in walk(a):
            if isinstance(n, (SideVar, SideIdx, SideLen)) and n.name not in scalars | arrays:
                line, col = n.pos or (0, 0)
                raise ParseError(f"undeclared identifier {n.name}", line, col)
    if prog.output not in scalars | arrays:
        line, col = prog.pos or (0, 0)
        raise ParseError(f"undeclared output {prog.output}", line, col)


def parse_program(source: str) -> Program:
    """Parse ``.pfor`` source text into a Program.

    Raises ParseError (with line and column) on syntax errors, nested pairs,
    and references to undeclared identifiers or queries.
    """
    p = Parser(source)
    prog = p.program()
    _resolve(prog)
    return prog


def parse_cmd(source: str, queries=()) -> object:
    """Parse a bare command sequence (used by tests and the REPL-free tools)."""
    p = Parser(source)
    for q in queries:
        p.queries[q.name] = q
    c = p.cmds()
    if p.tok.kind != "eof":
        p.error("trailing input")
    return c


def parse_expr(source: str, queries=()) -> object:
    p = Parser(source)
    for q in queries:
        p.queries[q.name] = q
    e = p.expr()
    if p.tok.kind != "eof":
        p.error("trailing input")
    return e
