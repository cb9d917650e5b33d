"""Concrete evaluation with random values kept symbolic.

Samples never take a value here: a sampling binds a fresh random symbol and
records its distribution in the trace, and a branch on a random value forks
with the two conditioning events.  Probabilities are computed by the oracle.
An optional sampler turns sampling into plain value lookup, which is used to
replay a trace with known sample values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .constraints import (
    CBin, Eq, GroundEvalError, Gt0, LapDecl, Le0, Lit, ProbSym, Registry, arith, leaf,
)
from .errors import EvalError, ScaleError, StuckSampling
from .syntax import (
    ArrAssign, ArrIdx, Assign, BinOp, For, If, IntLit, LapSample, Len, Pair, PairCmd,
    Query, Seq, Skip, SymVal, Var, project,
)

MAX_STEPS = 1_000_000


class DbHandle:
    """An opaque database: only the query answers it carries are observable."""

    def __init__(self, tables: dict, label: str = "d"):
        self.tables = dict(tables)  # name -> int, or name -> {index: int}
        self.label = label

    def answer(self, name: str, index):
        if name not in self.tables:
            raise EvalError(f"no answers for query {name}")
        t = self.tables[name]
        if index is None:
            if isinstance(t, dict):
                raise EvalError(f"query {name} needs an index")
            return t
        if not isinstance(t, dict):
            raise EvalError(f"query {name} takes no index")
        if index not in t:
            raise EvalError(f"query {name}[{index}] outside its table")
        return t[index]

    def __repr__(self):
        return f"DbHandle({self.label})"


@dataclass(frozen=True)
class ProbMemory:
    vars: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)  # name -> tuple of values

    def get(self, x):
        if x not in self.vars:
            raise EvalError(f"unbound variable {x}")
        return self.vars[x]

    def array(self, a):
        if a not in self.arrays:
            raise EvalError(f"unbound array {a}")
        return self.arrays[a]

    def set(self, x, v) -> "ProbMemory":
        d = dict(self.vars)
        d[x] = v
        return ProbMemory(d, self.arrays)

    def set_elem(self, a, i, v) -> "ProbMemory":
        arr = self.array(a)
        if not isinstance(i, int) or not 0 <= i < len(arr):
            raise EvalError(f"index {i} out of bounds for {a}[{len(arr)}]")
        d = dict(self.arrays)
        d[a] = arr[:i] + (v,) + arr[i + 1:]
        return ProbMemory(self.vars, d)


@dataclass(frozen=True)
class UConfig:
    mem: ProbMemory
    cmd: object
    ptrace: tuple = ()
    history: tuple = ()

    @property
    def final(self) -> bool:
        return isinstance(self.cmd, Skip)


@dataclass(frozen=True)
class RConfig:
    mem1: ProbMemory
    mem2: ProbMemory
    cmd: object
    ptrace1: tuple = ()
    ptrace2: tuple = ()
    history1: tuple = ()
    history2: tuple = ()

    @property
    def final(self) -> bool:
        return isinstance(self.cmd, Skip)

    def side(self, i: int) -> UConfig:
        if i == 1:
            return UConfig(self.mem1, project(1, self.cmd), self.ptrace1, self.history1)
        return UConfig(self.mem2, project(2, self.cmd), self.ptrace2, self.history2)


@dataclass
class Ctx:
    registry: Registry
    side: int = 1
    sampler: Optional[Callable] = None  # (pos, mean, inv_scale) -> int


def _is_num(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


def _norm(v):
    if isinstance(v, Fraction) and v.denominator == 1:
        return int(v)
    return v


def eval_expr_c(m: ProbMemory, e, p: tuple, ctx: Ctx):
    """Big-step evaluation; returns (value, trace)."""
    if isinstance(e, IntLit):
        return e.value, p
    if isinstance(e, Var):
        return m.get(e.name), p
    if isinstance(e, SymVal):
        return e.value, p
    if isinstance(e, Len):
        return len(m.array(e.array)), p
    if isinstance(e, ArrIdx):
        i, p = eval_expr_c(m, e.index, p, ctx)
        arr = m.array(e.array)
        if not isinstance(i, int):
            raise EvalError(f"non-integer index into {e.array}")
        if not 0 <= i < len(arr):
            raise EvalError(f"index {i} out of bounds for {e.array}[{len(arr)}]")
        return arr[i], p
    if isinstance(e, Query):
        idx = None
        if e.index is not None:
            idx, p = eval_expr_c(m, e.index, p, ctx)
            if not isinstance(idx, int):
                raise EvalError("non-integer query index")
        db, p = eval_expr_c(m, e.db, p, ctx)
        if not isinstance(db, DbHandle):
            raise EvalError("query argument is not a database")
        return db.answer(e.name, idx), p
    if isinstance(e, BinOp):
        a, p = eval_expr_c(m, e.lhs, p, ctx)
        b, p = eval_expr_c(m, e.rhs, p, ctx)
        if isinstance(a, ProbSym) or isinstance(b, ProbSym):
            if not ((_is_num(a) or isinstance(a, ProbSym)) and (_is_num(b) or isinstance(b, ProbSym))):
                raise EvalError("unsupported operand for random arithmetic")
            y = ctx.registry.fresh_prob(ctx.side)
            return y, p + (Eq(y, CBin(e.op, leaf(a), leaf(b))),)
        if not (_is_num(a) and _is_num(b)):
            raise EvalError(f"unsupported operands for {e.op}")
        try:
            return arith(e.op, a, b), p
        except GroundEvalError as exc:
            raise EvalError(str(exc)) from None
    if isinstance(e, Pair):
        raise EvalError("pair expression in a unary context")
    raise EvalError(f"cannot evaluate {e!r}")


def _unroll(c: For, lo: int, hi: int):
    if lo > hi:
        return Skip()
    return Seq(Assign(c.var, IntLit(lo)), Seq(c.body, For(c.var, IntLit(lo + 1), IntLit(hi), c.body, c.pos)))


def _guard_outcomes(v, p, history, pos):
    """List of (taken_then, trace, history) for a guard value."""
    if isinstance(v, ProbSym):
        return [(True, p + (Gt0(leaf(v)),), history + ((pos, True),)),
                (False, p + (Le0(leaf(v)),), history + ((pos, False),))]
    if not _is_num(v):
        raise EvalError("guard is not a number")
    t = v > 0
    return [(t, p, history + ((pos, t),))]


def step_c(cfg: UConfig, ctx: Ctx) -> list:
    """All one-step successors of a non-final configuration."""
    m, c, p, h = cfg.mem, cfg.cmd, cfg.ptrace, cfg.history
    if isinstance(c, Skip):
        return []
    if isinstance(c, Seq):
        if isinstance(c.first, Skip):
            return [UConfig(m, c.second, p, h)]
        return [UConfig(s.mem, Seq(s.cmd, c.second, c.pos), s.ptrace, s.history)
                for s in step_c(UConfig(m, c.first, p, h), ctx)]
    if isinstance(c, Assign):
        v, p = eval_expr_c(m, c.expr, p, ctx)
        return [UConfig(m.set(c.target, v), Skip(), p, h)]
    if isinstance(c, ArrAssign):
        i, p = eval_expr_c(m, c.index, p, ctx)
        v, p = eval_expr_c(m, c.rhs, p, ctx)
        return [UConfig(m.set_elem(c.array, i, v), Skip(), p, h)]
    if isinstance(c, LapSample):
        mean, p = eval_expr_c(m, c.mean, p, ctx)
        scale, p = eval_expr_c(m, c.inv_scale, p, ctx)
        if isinstance(mean, ProbSym) or isinstance(scale, ProbSym):
            raise StuckSampling("sampling with a random parameter")
        mean = _norm(mean)
        if not isinstance(mean, int):
            raise EvalError("sampling mean must be an integer")
        if not _is_num(scale) or scale <= 0:
            raise ScaleError(f"sampling scale must be positive, got {scale}")
        if ctx.sampler is not None:
            return [UConfig(m.set(c.target, ctx.sampler(c.pos, mean, scale)), Skip(), p, h)]
        y = ctx.registry.fresh_prob(ctx.side)
        return [UConfig(m.set(c.target, y), Skip(), p + (LapDecl(y, Lit(mean), Lit(scale)),), h)]
    if isinstance(c, If):
        v, p = eval_expr_c(m, c.guard, p, ctx)
        return [UConfig(m, c.then if t else c.orelse, p2, h2)
                for t, p2, h2 in _guard_outcomes(v, p, h, c.pos)]
    if isinstance(c, For):
        lo, p = eval_expr_c(m, c.lo, p, ctx)
        hi, p = eval_expr_c(m, c.hi, p, ctx)
        if not (isinstance(lo, int) and isinstance(hi, int)):
            raise EvalError("loop bounds must be concrete integers")
        return [UConfig(m, _unroll(c, lo, hi), p, h)]
    if isinstance(c, PairCmd):
        raise EvalError("pair command in a unary context")
    raise EvalError(f"cannot step {c!r}")


def collect_c(configs: list, ctx: Ctx) -> list:
    """One collecting step: the first non-final configuration is replaced by its successors."""
    for i, cfg in enumerate(configs):
        if not cfg.final:
            return configs[:i] + step_c(cfg, ctx) + configs[i + 1:]
    return list(configs)


def run_c(configs: list, ctx: Ctx, max_steps: int = MAX_STEPS) -> list:
    """Drive configurations to final ones, keeping creation order."""
    done, work = [], list(configs)
    steps = 0
    while work:
        cfg = work.pop(0)
        if cfg.final:
            done.append(cfg)
            continue
        steps += 1
        if steps > max_steps:
            raise EvalError("step limit exceeded")
        work[0:0] = step_c(cfg, ctx)
    return done


# --------------------------------------------------------------- relational


def _rel_unary(cfg: RConfig, ctx1: Ctx, ctx2: Ctx):
    s1 = step_c(cfg.side(1), ctx1)
    s2 = step_c(cfg.side(2), ctx2)
    return [RConfig(a.mem, b.mem, Skip(), a.ptrace, b.ptrace, a.history, b.history)
            for a in s1 for b in s2]


def rel_step_rc(cfg: RConfig, ctx1: Ctx, ctx2: Ctx) -> list:
    c = cfg.cmd
    if isinstance(c, Skip):
        return []
    if isinstance(c, PairCmd):
        if isinstance(c.left, Skip) and isinstance(c.right, Skip):
            return [RConfig(cfg.mem1, cfg.mem2, Skip(), cfg.ptrace1, cfg.ptrace2,
                            cfg.history1, cfg.history2)]
        if not isinstance(c.left, Skip):
            return [RConfig(s.mem, cfg.mem2, PairCmd(s.cmd, c.right), s.ptrace, cfg.ptrace2,
                            s.history, cfg.history2)
                    for s in step_c(UConfig(cfg.mem1, c.left, cfg.ptrace1, cfg.history1), ctx1)]
        return [RConfig(cfg.mem1, s.mem, PairCmd(c.left, s.cmd), cfg.ptrace1, s.ptrace,
                        cfg.history1, s.history)
                for s in step_c(UConfig(cfg.mem2, c.right, cfg.ptrace2, cfg.history2), ctx2)]
    if isinstance(c, Seq):
        if isinstance(c.first, Skip):
            return [RConfig(cfg.mem1, cfg.mem2, c.second, cfg.ptrace1, cfg.ptrace2,
                            cfg.history1, cfg.history2)]
        sub = RConfig(cfg.mem1, cfg.mem2, c.first, cfg.ptrace1, cfg.ptrace2,
                      cfg.history1, cfg.history2)
        return [RConfig(s.mem1, s.mem2, Seq(s.cmd, c.second, c.pos), s.ptrace1, s.ptrace2,
                        s.history1, s.history2) for s in rel_step_rc(sub, ctx1, ctx2)]
    if isinstance(c, If):
        v1, p1 = eval_expr_c(cfg.mem1, project(1, c.guard), cfg.ptrace1, ctx1)
        v2, p2 = eval_expr_c(cfg.mem2, project(2, c.guard), cfg.ptrace2, ctx2)
        out = []
        for t1, q1, h1 in _guard_outcomes(v1, p1, cfg.history1, c.pos):
            for t2, q2, h2 in _guard_outcomes(v2, p2, cfg.history2, c.pos):
                b1 = c.then if t1 else c.orelse
                b2 = c.then if t2 else c.orelse
                cmd = b1 if t1 == t2 else PairCmd(project(1, b1), project(2, b2))
                out.append(RConfig(cfg.mem1, cfg.mem2, cmd, q1, q2, h1, h2))
        return out
    if isinstance(c, For):
        lo1, p1 = eval_expr_c(cfg.mem1, project(1, c.lo), cfg.ptrace1, ctx1)
        hi1, p1 = eval_expr_c(cfg.mem1, project(1, c.hi), p1, ctx1)
        lo2, p2 = eval_expr_c(cfg.mem2, project(2, c.lo), cfg.ptrace2, ctx2)
        hi2, p2 = eval_expr_c(cfg.mem2, project(2, c.hi), p2, ctx2)
        for b in (lo1, hi1, lo2, hi2):
            if not isinstance(b, int):
                raise EvalError("loop bounds must be concrete integers")
        if (lo1, hi1) == (lo2, hi2):
            cmd = _unroll(c, lo1, hi1)
        else:
            cmd = PairCmd(_unroll(project(1, c), lo1, hi1), _unroll(project(2, c), lo2, hi2))
        return [RConfig(cfg.mem1, cfg.mem2, cmd, p1, p2, cfg.history1, cfg.history2)]
    if isinstance(c, (Assign, ArrAssign, LapSample)):
        return _rel_unary(cfg, ctx1, ctx2)
    raise EvalError(f"cannot step {c!r}")


def run_rc(configs: list, ctx1: Ctx, ctx2: Ctx, max_steps: int = MAX_STEPS) -> list:
    done, work = [], list(configs)
    steps = 0
    while work:
        cfg = work.pop(0)
        if cfg.final:
            done.append(cfg)
            continue
        steps += 1
        if steps > max_steps:
            raise EvalError("step limit exceeded")
        work[0:0] = rel_step_rc(cfg, ctx1, ctx2)
    return done


# ------------------------------------------------------------ program entry


def initial_memory(prog, inputs: dict, eps, side_label: str = "d") -> ProbMemory:
    """Memory for a program run on concrete inputs.

    ``inputs`` maps int params to integers, array params to lists, and query
    names to answers (an int for a scalar query, a list aligned with the
    declared index range for a query family).  Database params are bound to
    a handle carrying those answers.
    """
    # eps stays a Fraction so that eps / 2 is exact.
    env = {"eps": Fraction(eps) if eps is not None else None}
    arrays = {}
    for prm in prog.params:
        if prm.kind == "int":
            if prm.name not in inputs:
                raise EvalError(f"missing input {prm.name}")
            env[prm.name] = int(inputs[prm.name])
        elif prm.kind == "array":
            if prm.name not in inputs:
                raise EvalError(f"missing input {prm.name}")
            arrays[prm.name] = tuple(int(x) for x in inputs[prm.name])
    mem = ProbMemory(env, arrays)
    tables = {}
    for q in prog.queries:
        if q.name not in inputs:
            continue
        val = inputs[q.name]
        if q.lo is None:
            tables[q.name] = int(val)
        else:
            lo, _ = eval_expr_c(mem, q.lo, (), Ctx(Registry()))
            tables[q.name] = {lo + i: int(x) for i, x in enumerate(val)}
    db = DbHandle(tables, side_label)
    for prm in prog.params:
        if prm.kind == "db":
            env[prm.name] = db
    for a in prog.arrays:
        n, _ = eval_expr_c(mem, a.length, (), Ctx(Registry()))
        init, _ = eval_expr_c(mem, a.init, (), Ctx(Registry()))
        if not isinstance(n, int) or n < 0:
            raise EvalError(f"array {a.name} needs a concrete non-negative length")
        arrays[a.name] = (init,) * n
    return ProbMemory(env, arrays)


def run_program(prog, inputs: dict, eps, registry: Optional[Registry] = None,
                sampler=None) -> list:
    reg = registry or Registry()
    m = initial_memory(prog, inputs, eps)
    return run_c([UConfig(m, prog.body)], Ctx(reg, 1, sampler))


def run_relational(prog, inputs1: dict, inputs2: dict, eps, registry=None,
                   samplers=(None, None)) -> list:
    reg = registry or Registry()
    m1 = initial_memory(prog, inputs1, eps, "d1")
    m2 = initial_memory(prog, inputs2, eps, "d2")
    return run_rc([RConfig(m1, m2, prog.body)],
                  Ctx(reg, 1, samplers[0]), Ctx(reg, 2, samplers[1]))


def output_value(mem: ProbMemory, name: str):
    if name in mem.arrays:
        return mem.arrays[name]
    return mem.get(name)
