"""Symbolic execution: unary, relational, and the coupling proof semantics.

Unary runs keep samples as random symbols (their conditions go to the
probabilistic trace) or, in ``free`` mode, as unconstrained integers.  The
relational proof semantics pairs two runs; at every synchronizing sampling
it either couples the two samples with a symbolic shift K (paying for it in
a symbolic privacy budget) or leaves them unrelated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional

from . import smt
from .concrete import ProbMemory, _unroll
from .constraints import (
    BOUND, BUDGET, DERIVED, FALSE, INPUT, SAMPLE, SHIFT, TRUE, Abs, BoundVar, CBin, Cmp,
    Eq, Gt0, LapDecl, Le0, Lit, OmegaTriple, ProbSym, Registry, Select, Store, Sym,
    SymInt, add, arith, c_and, c_implies, c_not, leaf, omega_decompose,
)
from .errors import EvalError, GroundEvalError, ScaleError, StuckSampling, UnrollLimit
from .syntax import (
    AAnd, ACmp, AForall, ANot, ATrue, AbsTerm, ArrAssign, ArrIdx, Assign, BinOp, For, If,
    IntLit, LapSample, Len, LogVar, Pair, PairCmd, Query, Seq, SideIdx, SideLen,
    SideQuery, SideVar, Skip, SymVal, Var, project,
)

SymMemory = ProbMemory  # vars and arrays; array elements are kept explicitly

DEFAULT_UNROLL = 16


@dataclass(frozen=True)
class EpsMul:
    """A rational multiple of the privacy parameter eps (symbolic-units mode)."""

    coef: Fraction


@dataclass(frozen=True)
class SymDb:
    """The database of run ``side``; only its query answers are observable."""

    side: int


def _is_num(v) -> bool:
    return isinstance(v, (int, Fraction)) and not isinstance(v, bool)


@dataclass
class ExecCtx:
    registry: Registry
    prog: object = None
    side: int = 1
    relational: bool = False
    samples: str = "prob"        # prob: random symbols; free: unconstrained integers
    eps_sym: Optional[SymInt] = None
    unroll_limit: int = DEFAULT_UNROLL
    symbolic_loops: str = "reject"  # reject or truncate
    stats: dict = field(default_factory=lambda: {"truncated": 0, "unknown": 0, "sat_checks": 0})
    sat_cache: dict = field(default_factory=dict)

    def for_side(self, side: int) -> "ExecCtx":
        return replace(self, side=side)


def ce(v, ctx: ExecCtx):
    """Constraint term of a symbolic value."""
    if isinstance(v, EpsMul):
        if ctx.eps_sym is None:
            raise EvalError("eps multiple without an eps symbol")
        return CBin("*", Lit(v.coef), Sym(ctx.eps_sym))
    if isinstance(v, (SymDb,)) or isinstance(v, tuple):
        raise EvalError("not a scalar value")
    return leaf(v)


# --------------------------------------------------------------- expressions


def query_symbol(ctx: ExecCtx, name: str, idx, side: int) -> SymInt:
    label = f"{name}{'' if idx is None else idx}d{side}"
    return ctx.registry.named(("q", name, idx, side), side, INPUT, "Int", label)


def _sensitivity(ctx: ExecCtx, name: str, idx, s: tuple) -> tuple:
    decl = ctx.prog.query(name) if ctx.prog is not None else None
    if decl is None:
        return s
    q1 = query_symbol(ctx, name, idx, 1)
    q2 = query_symbol(ctx, name, idx, 2)
    return add(s, Cmp("<=", Abs(CBin("-", Sym(q1), Sym(q2))), Lit(decl.sensitivity)))


def _fresh_derived(ctx: ExecCtx, expr, s: tuple, sort="Int"):
    x = ctx.registry.fresh(ctx.side, DERIVED, sort)
    return x, add(s, ctx.registry.define(x, expr))


def _arith_eps(op, a, b):
    if isinstance(a, EpsMul) and isinstance(b, EpsMul) and op in "+-":
        return EpsMul(a.coef + b.coef if op == "+" else a.coef - b.coef)
    if isinstance(a, EpsMul) and _is_num(b):
        if op == "*":
            return EpsMul(a.coef * b)
        if op == "/":
            if b == 0:
                raise EvalError("division by zero")
            return EpsMul(Fraction(a.coef) / b)
    if _is_num(a) and isinstance(b, EpsMul) and op == "*":
        return EpsMul(a * b.coef)
    raise EvalError("eps may only be scaled by constants")


def sp_eval_expr(m: SymMemory, e, p: tuple, s: tuple, ctx: ExecCtx):
    """Evaluate a unary expression; returns (value, p, s)."""
    if isinstance(e, IntLit):
        return e.value, p, s
    if isinstance(e, Var):
        return m.get(e.name), p, s
    if isinstance(e, SymVal):
        return e.value, p, s
    if isinstance(e, Len):
        return len(m.array(e.array)), p, s
    if isinstance(e, ArrIdx):
        i, p, s = sp_eval_expr(m, e.index, p, s, ctx)
        arr = m.array(e.array)
        if isinstance(i, int):
            if not 0 <= i < len(arr):
                raise EvalError(f"index {i} out of bounds for {e.array}[{len(arr)}]")
            return arr[i], p, s
        if isinstance(i, SymInt):
            a, s = _array_symbol(arr, s, ctx)
            s = add(s, Cmp(">=", Sym(i), Lit(0)), Cmp("<", Sym(i), Lit(len(arr))))
            return _select(ctx, a, i, p, s)
        raise EvalError(f"unsupported index into {e.array}")
    if isinstance(e, Query):
        idx = None
        if e.index is not None:
            idx, p, s = sp_eval_expr(m, e.index, p, s, ctx)
            if not isinstance(idx, int):
                raise EvalError("query index must be concrete")
        db, p, s = sp_eval_expr(m, e.db, p, s, ctx)
        if not isinstance(db, SymDb):
            raise EvalError("query argument is not a database")
        _check_query_range(m, e.name, idx, ctx)
        sym = query_symbol(ctx, e.name, idx, db.side)
        if ctx.relational:
            s = _sensitivity(ctx, e.name, idx, s)
        return sym, p, s
    if isinstance(e, BinOp):
        a, p, s = sp_eval_expr(m, e.lhs, p, s, ctx)
        b, p, s = sp_eval_expr(m, e.rhs, p, s, ctx)
        return _binop(e.op, a, b, p, s, ctx)
    if isinstance(e, Pair):
        raise EvalError("pair expression in a unary context")
    raise EvalError(f"cannot evaluate {e!r}")


def _select(ctx, a, i, p, s):
    x, s = _fresh_derived(ctx, Select(Sym(a), Sym(i)), s)
    return x, p, s


def _array_symbol(arr: tuple, s: tuple, ctx: ExecCtx):
    """Content symbol A with A[j] = arr[j] for every position j."""
    a = ctx.registry.fresh(ctx.side, DERIVED, "Array")
    for j, v in enumerate(arr):
        if isinstance(v, ProbSym) or not (isinstance(v, (int, SymInt))):
            raise EvalError("symbolic index into an array holding non-integer values")
        s = add(s, Cmp("=", Select(Sym(a), Lit(j)), leaf(v)))
    return a, s


def _check_query_range(m, name, idx, ctx):
    decl = ctx.prog.query(name) if ctx.prog is not None else None
    if decl is None or idx is None or decl.lo is None:
        return
    try:
        lo, _, _ = sp_eval_expr(m, decl.lo, (), (), replace(ctx, relational=False))
        hi, _, _ = sp_eval_expr(m, decl.hi, (), (), replace(ctx, relational=False))
    except EvalError:
        return
    if isinstance(lo, int) and isinstance(hi, int) and not lo <= idx <= hi:
        raise EvalError(f"query {name}[{idx}] outside {lo}:{hi}")


def _binop(op, a, b, p, s, ctx):
    if _is_num(a) and _is_num(b):
        try:
            return arith(op, a, b), p, s
        except GroundEvalError as exc:
            raise EvalError(str(exc)) from None
    if isinstance(a, EpsMul) or isinstance(b, EpsMul):
        return _arith_eps(op, a, b), p, s
    if isinstance(a, ProbSym) or isinstance(b, ProbSym):
        for v in (a, b):
            if not (isinstance(v, (int, SymInt, ProbSym)) or _is_num(v)):
                raise EvalError("unsupported operand for random arithmetic")
        y = ctx.registry.fresh_prob(ctx.side)
        return y, p + (Eq(y, CBin(op, leaf(a), leaf(b))),), s
    if isinstance(a, (int, SymInt)) and isinstance(b, (int, SymInt)):
        if op == "/":
            if isinstance(b, int) and b == 0:
                raise EvalError("division by zero")
            if isinstance(b, SymInt):
                s = add(s, Cmp("!=", Sym(b), Lit(0)))
        x, s = _fresh_derived(ctx, CBin(op, leaf(a), leaf(b)), s)
        return x, p, s
    raise EvalError(f"unsupported operands for {op}")


def branch(v, p, s, history, pos, ctx):
    """Guard outcomes: list of (then?, p, s, history)."""
    if _is_num(v):
        t = v > 0
        return [(t, p, s, history + ((pos, t),))]
    if isinstance(v, EpsMul):
        t = v.coef > 0
        return [(t, p, s, history + ((pos, t),))]
    if isinstance(v, SymInt):
        return [(True, p, add(s, Cmp(">", Sym(v), Lit(0))), history + ((pos, True),)),
                (False, p, add(s, Cmp("<=", Sym(v), Lit(0))), history + ((pos, False),))]
    if isinstance(v, ProbSym):
        return [(True, p + (Gt0(leaf(v)),), s, history + ((pos, True),)),
                (False, p + (Le0(leaf(v)),), s, history + ((pos, False),))]
    raise EvalError("guard is not a number")


# ------------------------------------------------------------ unary commands


@dataclass(frozen=True)
class SPConfig:
    mem: SymMemory
    cmd: object
    ptrace: tuple = ()
    cstrs: tuple = ()
    history: tuple = ()
    unrolled: int = 0
    samples: tuple = ()  # sample symbols in order (free mode)

    @property
    def final(self) -> bool:
        return isinstance(self.cmd, Skip)


def _scale_check(v, s, ctx, add_positivity: bool):
    if _is_num(v):
        if v <= 0:
            raise ScaleError(f"sampling scale must be positive, got {v}")
        return s
    if isinstance(v, EpsMul):
        if v.coef <= 0:
            raise ScaleError("sampling scale must be a positive multiple of eps")
        if add_positivity:
            s = add(s, Cmp(">", ce(v, ctx), Lit(0)))
        return s
    if isinstance(v, SymInt):
        return add(s, Cmp(">", Sym(v), Lit(0)))
    raise ScaleError("unsupported sampling scale")


def _sym_loop(c: For, lo, hi, cfg, s, ctx, rebuild):
    """Fork a loop with symbolic bounds into run-once and exit cases."""
    if cfg.unrolled >= ctx.unroll_limit:
        if ctx.symbolic_loops == "reject":
            raise UnrollLimit(f"loop bound is symbolic and the unroll limit {ctx.unroll_limit} was reached")
        ctx.stats["truncated"] += 1
        return []
    nxt = For(c.var, BinOp("+", SymVal(lo), IntLit(1)), SymVal(hi), c.body, c.pos)
    body = Seq(Assign(c.var, SymVal(lo)), Seq(c.body, nxt))
    return [rebuild(body, add(s, Cmp("<=", leaf(lo), leaf(hi))), cfg.unrolled + 1),
            rebuild(Skip(), add(s, Cmp(">", leaf(lo), leaf(hi))), cfg.unrolled + 1)]


def sp_step(cfg: SPConfig, ctx: ExecCtx) -> list:
    """One-step successors (satisfiability is checked by the collector)."""
    m, c, p, s, h = cfg.mem, cfg.cmd, cfg.ptrace, cfg.cstrs, cfg.history
    if isinstance(c, Skip):
        return []
    if isinstance(c, Seq):
        if isinstance(c.first, Skip):
            return [replace(cfg, cmd=c.second)]
        return [replace(x, cmd=Seq(x.cmd, c.second, c.pos))
                for x in sp_step(replace(cfg, cmd=c.first), ctx)]
    if isinstance(c, Assign):
        v, p, s = sp_eval_expr(m, c.expr, p, s, ctx)
        return [replace(cfg, mem=m.set(c.target, v), cmd=Skip(), ptrace=p, cstrs=s)]
    if isinstance(c, ArrAssign):
        i, p, s = sp_eval_expr(m, c.index, p, s, ctx)
        v, p, s = sp_eval_expr(m, c.rhs, p, s, ctx)
        if isinstance(i, SymInt):
            arr = m.array(c.array)
            a, s = _array_symbol(arr, s, ctx)
            if not isinstance(v, (int, SymInt)):
                raise EvalError("symbolic index store of a non-integer value")
            s = add(s, Cmp(">=", Sym(i), Lit(0)), Cmp("<", Sym(i), Lit(len(arr))))
            a2, s = _fresh_derived(ctx, Store(Sym(a), Sym(i), leaf(v)), s, "Array")
            elems = []
            for j in range(len(arr)):
                x, s = _fresh_derived(ctx, Select(Sym(a2), Lit(j)), s)
                elems.append(x)
            arrays = dict(m.arrays)
            arrays[c.array] = tuple(elems)
            return [replace(cfg, mem=SymMemory(m.vars, arrays), cmd=Skip(), ptrace=p, cstrs=s)]
        if not isinstance(i, int):
            raise EvalError("unsupported array index")
        return [replace(cfg, mem=m.set_elem(c.array, i, v), cmd=Skip(), ptrace=p, cstrs=s)]
    if isinstance(c, LapSample):
        mean, p, s = sp_eval_expr(m, c.mean, p, s, ctx)
        scale, p, s = sp_eval_expr(m, c.inv_scale, p, s, ctx)
        if isinstance(mean, ProbSym) or isinstance(scale, ProbSym):
            raise StuckSampling("sampling with a random parameter")
        if isinstance(mean, Fraction) and mean.denominator == 1:
            mean = int(mean)
        if not isinstance(mean, (int, SymInt)):
            raise EvalError("sampling mean must be an integer")
        s = _scale_check(scale, s, ctx, add_positivity=not ctx.relational)
        if ctx.samples == "free":
            x = ctx.registry.fresh(ctx.side, SAMPLE, "Int", f"{c.target}{ctx.registry._next_int + 1}_{ctx.side}")
            return [replace(cfg, mem=m.set(c.target, x), cmd=Skip(), cstrs=s, ptrace=p,
                            samples=cfg.samples + (x,))]
        y = ctx.registry.fresh_prob(ctx.side)
        return [replace(cfg, mem=m.set(c.target, y), cmd=Skip(), cstrs=s,
                        ptrace=p + (LapDecl(y, ce(mean, ctx), ce(scale, ctx)),))]
    if isinstance(c, If):
        v, p, s = sp_eval_expr(m, c.guard, p, s, ctx)
        return [replace(cfg, cmd=c.then if t else c.orelse, ptrace=p2, cstrs=s2, history=h2)
                for t, p2, s2, h2 in branch(v, p, s, h, c.pos, ctx)]
    if isinstance(c, For):
        lo, p, s = sp_eval_expr(m, c.lo, p, s, ctx)
        hi, p, s = sp_eval_expr(m, c.hi, p, s, ctx)
        if isinstance(lo, int) and isinstance(hi, int):
            return [replace(cfg, cmd=_unroll(c, lo, hi), ptrace=p, cstrs=s)]
        if isinstance(lo, (int, SymInt)) and isinstance(hi, (int, SymInt)):
            return _sym_loop(c, lo, hi, cfg, s, ctx,
                             lambda cmd, s2, u: replace(cfg, cmd=cmd, ptrace=p, cstrs=s2, unrolled=u))
        raise EvalError("loop bounds must be integers")
    if isinstance(c, PairCmd):
        raise EvalError("pair command in a unary context")
    raise EvalError(f"cannot step {c!r}")


def is_sat(s: tuple, ctx: ExecCtx) -> bool:
    """Satisfiability with caching; unknown keeps the configuration (marked)."""
    key = frozenset(s)
    if key in ctx.sat_cache:
        return ctx.sat_cache[key]
    ctx.stats["sat_checks"] += 1
    v = smt.check_sat(s)
    if v.status == "unknown":
        ctx.stats["unknown"] += 1
    ok = v.status != "unsat"
    ctx.sat_cache[key] = ok
    return ok


def sp_collect(H: list, ctx: ExecCtx) -> list:
    """Step every non-final configuration sharing the first one's constraints."""
    first = next((c for c in H if not c.final), None)
    if first is None:
        return list(H)
    group_key = first.cstrs
    out = []
    for cfg in H:
        if cfg.final or cfg.cstrs != group_key:
            out.append(cfg)
            continue
        for nxt in sp_step(cfg, ctx):
            if nxt.cstrs == cfg.cstrs or is_sat(nxt.cstrs, ctx):
                out.append(nxt)
    return out


def run_sp(configs: list, ctx: ExecCtx, max_steps: int = 200_000) -> list:
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
        succ = [n for n in sp_step(cfg, ctx) if n.cstrs == cfg.cstrs or is_sat(n.cstrs, ctx)]
        work[0:0] = succ
    return done


# ------------------------------------------------------------ initial states


@dataclass
class Setup:
    """Initial symbolic state shared by unary and relational exploration."""

    registry: Registry
    eps_mode: str                 # units or concrete
    eps_sym: Optional[SymInt]
    eps_value: Optional[Fraction]
    inputs: dict                  # side -> {param: value}
    mems: dict                    # side -> SymMemory
    cstrs: tuple
    budget0: Optional[SymInt] = None


def _eps_value(mode, eps_value):
    return EpsMul(Fraction(1)) if mode == "units" else Fraction(eps_value)


def make_setup(prog, bindings: Optional[dict] = None, eps=None, sides=(1, 2),
               relational: bool = True, registry: Optional[Registry] = None) -> Setup:
    reg = registry or Registry()
    bindings = bindings or {}
    mode = "units" if eps is None else "concrete"
    s = ()
    eps_sym = None
    if mode == "units":
        eps_sym = reg.named(("eps",), 0, INPUT, "Real", "eps")
        s = add(s, Cmp(">", Sym(eps_sym), Lit(0)))
    inputs, mems = {}, {}
    ctx = ExecCtx(reg, prog, eps_sym=eps_sym)
    for side in sides:
        env = {"eps": _eps_value(mode, eps)}
        ins = {}
        arrays = {}
        for prm in prog.params:
            if prm.kind == "int":
                if prm.name in bindings:
                    v = int(bindings[prm.name])
                else:
                    v = reg.named(("in", prm.name, side), side, INPUT, "Int", f"{prm.name}_{side}")
                env[prm.name] = v
                ins[prm.name] = v
            elif prm.kind == "db":
                env[prm.name] = SymDb(side)
            elif prm.kind == "array":
                if prm.name not in bindings:
                    raise EvalError(f"array parameter {prm.name} needs a concrete length binding")
                n = int(bindings[prm.name])
                arr = tuple(reg.named(("in", prm.name, j, side), side, INPUT, "Int",
                                      f"{prm.name}{j}_{side}") for j in range(n))
                arrays[prm.name] = arr
                ins[prm.name] = arr
        mem = SymMemory(env, arrays)
        sctx = ctx.for_side(side)
        for a in prog.arrays:
            n, _, _ = sp_eval_expr(mem, a.length, (), (), sctx)
            init, _, _ = sp_eval_expr(mem, a.init, (), (), sctx)
            if not isinstance(n, int):
                raise EvalError(f"array {a.name} needs a concrete length (bind its parameters)")
            arrays[a.name] = (init,) * n
        mems[side] = SymMemory(env, arrays)
        inputs[side] = ins
    return Setup(reg, mode, eps_sym, None if eps is None else Fraction(eps), inputs, mems, s)


def explore_unary(prog, bindings=None, eps=None, samples: str = "prob",
                  unroll_limit: int = DEFAULT_UNROLL, symbolic_loops: str = "truncate",
                  registry=None):
    """All satisfiable final unary traces of side 1; returns (finals, ctx, setup)."""
    st = make_setup(prog, bindings, eps, sides=(1,), registry=registry)
    ctx = ExecCtx(st.registry, prog, 1, False, samples, st.eps_sym, unroll_limit, symbolic_loops)
    start = SPConfig(st.mems[1], prog.body, (), st.cstrs)
    return run_sp([start], ctx), ctx, st


# -------------------------------------------------------- relational configs


@dataclass(frozen=True)
class Coupling:
    site: tuple          # (position, ordinal)
    kind: str            # lapgen, avoc or one-sided
    x1: Optional[SymInt]
    x2: Optional[SymInt]
    k: Optional[SymInt] = None
    mean1: object = None
    mean2: object = None
    coef: Optional[Fraction] = None
    budget: Optional[SymInt] = None


@dataclass(frozen=True)
class SRConfig:
    mem1: SymMemory
    mem2: SymMemory
    cmd: object
    ptrace1: tuple = ()
    ptrace2: tuple = ()
    cstrs: tuple = ()
    budget: Optional[SymInt] = None
    history1: tuple = ()
    history2: tuple = ()
    syncs: int = 0
    unrolled: int = 0
    couplings: tuple = ()
    samples1: tuple = ()
    samples2: tuple = ()

    @property
    def final(self) -> bool:
        return isinstance(self.cmd, Skip)

    def mem(self, side):
        return self.mem1 if side == 1 else self.mem2


def head(c):
    """Atomic command in evaluation position (a Seq whose first part is done counts)."""
    while isinstance(c, Seq):
        if isinstance(c.first, Skip):
            return c
        c = c.first
    return c


def replace_head(c, new):
    if isinstance(c, Seq) and not isinstance(c.first, Skip):
        return Seq(replace_head(c.first, new), c.second, c.pos)
    return new


def srp_eval(m1, m2, e, p1, p2, s, ctx1: ExecCtx, ctx2: ExecCtx):
    """Evaluate both projections; a unary value when both are equal integers."""
    v1, p1, s = sp_eval_expr(m1, project(1, e), p1, s, ctx1)
    v2, p2, s = sp_eval_expr(m2, project(2, e), p2, s, ctx2)
    if _is_num(v1) and _is_num(v2) and v1 == v2:
        return v1, p1, p2, s
    if isinstance(v1, EpsMul) and v1 == v2:
        return v1, p1, p2, s
    return (v1, v2), p1, p2, s


def _side_step(cfg: SRConfig, side: int, sub, ctx: ExecCtx) -> list:
    """Step one side of a pair with the unary rules."""
    u = SPConfig(cfg.mem(side), sub, cfg.ptrace1 if side == 1 else cfg.ptrace2, cfg.cstrs,
                 cfg.history1 if side == 1 else cfg.history2, cfg.unrolled,
                 cfg.samples1 if side == 1 else cfg.samples2)
    out = []
    for n in sp_step(u, ctx.for_side(side)):
        if side == 1:
            out.append((n.cmd, replace(cfg, mem1=n.mem, ptrace1=n.ptrace, cstrs=n.cstrs,
                                       history1=n.history, unrolled=n.unrolled, samples1=n.samples)))
        else:
            out.append((n.cmd, replace(cfg, mem2=n.mem, ptrace2=n.ptrace, cstrs=n.cstrs,
                                       history2=n.history, unrolled=n.unrolled, samples2=n.samples)))
    return out


def srp_step_nonsync(cfg: SRConfig, ctx: ExecCtx) -> list:
    """Relational step for a head command that does not synchronize samplings."""
    c = cfg.cmd
    c1, c2 = ctx.for_side(1), ctx.for_side(2)
    if isinstance(c, Skip):
        return []
    if isinstance(c, PairCmd):
        if isinstance(c.left, Skip) and isinstance(c.right, Skip):
            return [replace(cfg, cmd=Skip())]
        h1, h2 = head(c.left), head(c.right)
        left_first = not isinstance(c.left, Skip)
        if left_first and isinstance(h1, LapSample) and not isinstance(c.right, Skip):
            # The left sampling waits for a possible partner on the right.
            left_first = False
        if left_first:
            return [replace(n, cmd=PairCmd(sub, c.right, c.pos)) for sub, n in _side_step(cfg, 1, c.left, ctx)]
        return [replace(n, cmd=PairCmd(c.left, sub, c.pos)) for sub, n in _side_step(cfg, 2, c.right, ctx)]
    if isinstance(c, Seq):
        if isinstance(c.first, Skip):
            return [replace(cfg, cmd=c.second)]
        return [replace(n, cmd=Seq(n.cmd, c.second, c.pos))
                for n in srp_step_nonsync(replace(cfg, cmd=c.first), ctx)]
    if isinstance(c, Assign):
        v1, p1, s = sp_eval_expr(cfg.mem1, project(1, c.expr), cfg.ptrace1, cfg.cstrs, c1)
        v2, p2, s = sp_eval_expr(cfg.mem2, project(2, c.expr), cfg.ptrace2, s, c2)
        return [replace(cfg, mem1=cfg.mem1.set(c.target, v1), mem2=cfg.mem2.set(c.target, v2),
                        ptrace1=p1, ptrace2=p2, cstrs=s, cmd=Skip())]
    if isinstance(c, ArrAssign) or isinstance(c, LapSample):
        # Unary rules on both projections (one-sided or unsynchronized sampling).
        out = []
        for sub1, n1 in _side_step(cfg, 1, project(1, c), ctx):
            for sub2, n2 in _side_step(n1, 2, project(2, c), ctx):
                out.append(replace(n2, cmd=Skip()))
        return out
    if isinstance(c, If):
        v1, p1, s = sp_eval_expr(cfg.mem1, project(1, c.guard), cfg.ptrace1, cfg.cstrs, c1)
        v2, p2, s = sp_eval_expr(cfg.mem2, project(2, c.guard), cfg.ptrace2, s, c2)
        out = []
        for t1, q1, s1, h1 in branch(v1, p1, s, cfg.history1, c.pos, c1):
            for t2, q2, s2, h2 in branch(v2, p2, s1, cfg.history2, c.pos, c2):
                b1 = c.then if t1 else c.orelse
                b2 = c.then if t2 else c.orelse
                cmd = b1 if t1 == t2 else PairCmd(project(1, b1), project(2, b2))
                out.append(replace(cfg, cmd=cmd, ptrace1=q1, ptrace2=q2, cstrs=s2,
                                   history1=h1, history2=h2))
        return out
    if isinstance(c, For):
        lo1, p1, s = sp_eval_expr(cfg.mem1, project(1, c.lo), cfg.ptrace1, cfg.cstrs, c1)
        hi1, p1, s = sp_eval_expr(cfg.mem1, project(1, c.hi), p1, s, c1)
        lo2, p2, s = sp_eval_expr(cfg.mem2, project(2, c.lo), cfg.ptrace2, s, c2)
        hi2, p2, s = sp_eval_expr(cfg.mem2, project(2, c.hi), p2, s, c2)
        conc = all(isinstance(b, int) for b in (lo1, hi1, lo2, hi2))
        if conc and (lo1, hi1) == (lo2, hi2):
            cmd = _unroll(c, lo1, hi1)
        else:
            f1 = For(c.var, SymVal(lo1), SymVal(hi1), project(1, c.body), c.pos)
            f2 = For(c.var, SymVal(lo2), SymVal(hi2), project(2, c.body), c.pos)
            cmd = PairCmd(f1, f2)
        return [replace(cfg, cmd=cmd, ptrace1=p1, ptrace2=p2, cstrs=s)]
    raise EvalError(f"cannot step {c!r}")


# ------------------------------------------------------ proof semantics


def sync_site(cfg: SRConfig):
    """The synchronizing sampling pair at the head, if any: (lap1, lap2)."""
    h = head(cfg.cmd)
    if isinstance(h, LapSample):
        return project(1, h), project(2, h)
    if isinstance(h, PairCmd):
        h1, h2 = head(h.left), head(h.right)
        if isinstance(h1, LapSample) and isinstance(h2, LapSample):
            return h1, h2
    return None


def _consume_sync(cmd):
    """Replace the synchronized sampling(s) at the head by skip."""
    h = head(cmd)
    if isinstance(h, LapSample):
        return replace_head(cmd, Skip())
    return replace_head(cmd, PairCmd(replace_head(h.left, Skip()), replace_head(h.right, Skip()), h.pos))


@dataclass
class ProofOptions:
    budget_rule: str = "distance"   # distance: c*|K + mu1 - mu2|; shift: K <= K', K' = c
    site_policy: dict = field(default_factory=dict)  # site position -> [options]


def _scale_coef(v, mode):
    if isinstance(v, EpsMul):
        return v.coef
    if _is_num(v):
        return Fraction(v)
    return None


def sync_step(cfg: SRConfig, option: str, ctx: ExecCtx, opts: ProofOptions):
    """Apply LAP-GEN or AVOC at a synchronizing sampling; returns (config, note)."""
    l1, l2 = sync_site(cfg)
    c1, c2 = ctx.for_side(1), ctx.for_side(2)
    mu1, p1, s = sp_eval_expr(cfg.mem1, l1.mean, cfg.ptrace1, cfg.cstrs, c1)
    b1, p1, s = sp_eval_expr(cfg.mem1, l1.inv_scale, p1, s, c1)
    mu2, p2, s = sp_eval_expr(cfg.mem2, l2.mean, cfg.ptrace2, s, c2)
    b2, p2, s = sp_eval_expr(cfg.mem2, l2.inv_scale, p2, s, c2)
    for v in (mu1, b1, mu2, b2):
        if isinstance(v, ProbSym):
            raise StuckSampling("sampling with a random parameter")
    for mu in (mu1, mu2):
        if not isinstance(mu, (int, SymInt)):
            raise EvalError("sampling mean must be an integer")
    s = _scale_check(b1, s, c1, False)
    s = _scale_check(b2, s, c2, False)
    site = (l1.pos, cfg.syncs)
    reg = ctx.registry
    note = None
    coef = _scale_coef(b1, None)
    if option == "lapgen" and (coef is None or b1 != b2):
        option, note = "avoc", f"scales differ or are symbolic at {l1.pos}; samples left uncoupled"
    x1 = reg.fresh(1, SAMPLE, "Int", f"{l1.target}{reg._next_int + 1}_1")
    if option == "lapgen":
        k = reg.fresh(0, SHIFT, "Int", f"K{reg._next_int + 1}")
        x2 = reg.fresh(2, SAMPLE, "Int", f"{l2.target}{reg._next_int + 1}_2")
        s = add(s, reg.define(x2, CBin("+", Sym(x1), Sym(k))))
        e_new = reg.fresh(0, BUDGET, "Real", f"E{reg._next_int + 1}")
        diff = CBin("-", leaf(mu1), leaf(mu2))
        if opts.budget_rule == "shift":
            kb = reg.fresh(0, BOUND, "Real", f"Kb{reg._next_int + 1}")
            s = add(s, Cmp("<=", Sym(k), Sym(kb)), reg.define(kb, Lit(coef)))
            cost = CBin("*", Abs(diff), Sym(kb))
        else:
            cost = CBin("*", Lit(coef), Abs(CBin("+", Sym(k), diff)))
        s = add(s, reg.define(e_new, CBin("+", Sym(cfg.budget), cost)))
        rec = Coupling(site, "lapgen", x1, x2, k, leaf(mu1), leaf(mu2), coef, e_new)
        budget = e_new
    else:
        x2 = reg.fresh(2, SAMPLE, "Int", f"{l2.target}{reg._next_int + 1}_2")
        rec = Coupling(site, "avoc", x1, x2, None, leaf(mu1), leaf(mu2), coef, None)
        budget = cfg.budget
    new = replace(cfg, mem1=cfg.mem1.set(l1.target, x1), mem2=cfg.mem2.set(l2.target, x2),
                  ptrace1=p1, ptrace2=p2, cstrs=s, budget=budget, cmd=_consume_sync(cfg.cmd),
                  syncs=cfg.syncs + 1, couplings=cfg.couplings + (rec,),
                  samples1=cfg.samples1 + (x1,), samples2=cfg.samples2 + (x2,))
    return new, note


@dataclass
class World:
    id: int
    traces: list
    choices: tuple = ()  # (site, option) decisions taken when the world forked

    @property
    def final(self) -> bool:
        return all(t.final for t in self.traces)


@dataclass
class Exploration:
    prog: object
    mode: str
    setup: Setup
    ctx: ExecCtx
    worlds: list
    notes: list
    options: ProofOptions

    @property
    def registry(self):
        return self.setup.registry


def default_policy(mode: str):
    return ["avoc"] if mode == "strategyA" else ["lapgen"]


def proof_step(world: World, mode: str, ctx: ExecCtx, opts: ProofOptions, notes: list):
    """Advance the first non-final configuration of a world.

    Returns a list of worlds: one unless the policy offers several options
    at a synchronizing sampling.
    """
    idx = next(i for i, t in enumerate(world.traces) if not t.final)
    cfg = world.traces[idx]
    site = sync_site(cfg)
    if site is not None:
        options = opts.site_policy.get(site[0].pos, default_policy(mode))
        out = []
        for opt in options:
            new, note = sync_step(cfg, opt, ctx, opts)
            if note and note not in notes:
                notes.append(note)
            traces = world.traces[:idx] + [new] + world.traces[idx + 1:]
            choices = world.choices + (((site[0].pos, cfg.syncs), opt),) if len(options) > 1 else world.choices
            out.append(World(world.id, traces, choices))
        return out
    succ = [n for n in srp_step_nonsync(cfg, ctx) if n.cstrs == cfg.cstrs or is_sat(n.cstrs, ctx)]
    return [World(world.id, world.traces[:idx] + succ + world.traces[idx + 1:], world.choices)]


def explore(prog, mode: str = "prove", bindings=None, eps=None,
            unroll_limit: int = DEFAULT_UNROLL, options: Optional[ProofOptions] = None,
            registry=None, max_steps: int = 500_000) -> Exploration:
    """Run the proof semantics to completion under the mode's coupling policy."""
    opts = options or ProofOptions()
    st = make_setup(prog, bindings, eps, registry=registry)
    reg = st.registry
    loops = "reject" if mode == "prove" else "truncate"
    ctx = ExecCtx(reg, prog, 1, True, "free", st.eps_sym, unroll_limit, loops)
    s = st.cstrs
    b0 = reg.fresh(0, BUDGET, "Real", "E0")
    s = add(s, reg.define(b0, Lit(0)))
    pre, extra = instantiate(prog.requires, st.mems[1], st.mems[2], s, ctx)
    s = add(s, *extra)
    if pre != TRUE:
        s = add(s, pre)
    st.budget0 = b0
    start = SRConfig(st.mems[1], st.mems[2], prog.body, cstrs=s, budget=b0)
    notes = []
    work = [World(0, [start])]
    done = []
    steps = 0
    while work:
        w = work.pop(0)
        if w.final:
            done.append(w)
            continue
        steps += 1
        if steps > max_steps:
            raise EvalError("exploration step limit exceeded")
        work[0:0] = proof_step(w, mode, ctx, opts, notes)
    for i, w in enumerate(done):
        w.id = i
    if ctx.stats["truncated"]:
        notes.append(f"{ctx.stats['truncated']} paths truncated at the unroll limit")
    if ctx.stats["unknown"]:
        notes.append(f"{ctx.stats['unknown']} satisfiability checks returned unknown")
    return Exploration(prog, mode, st, ctx, done, notes, opts)


# ------------------------------------------------------------ assertions


def _aterm(t, mems, s, ctx, env):
    """Constraint term (or tuple for whole arrays) of an assertion term."""
    if isinstance(t, IntLit):
        return Lit(t.value), s
    if isinstance(t, SideVar):
        m = mems[t.side]
        if t.name in m.arrays:
            return tuple(_val_term(v, ctx) for v in m.arrays[t.name]), s
        return _val_term(m.get(t.name), ctx), s
    if isinstance(t, SideIdx):
        i, s = _aterm(t.index, mems, s, ctx, env)
        if not isinstance(i, Lit):
            raise EvalError("assertion index must be concrete")
        arr = mems[t.side].array(t.name)
        return _val_term(arr[i.value], ctx), s
    if isinstance(t, SideLen):
        return Lit(len(mems[t.side].array(t.name))), s
    if isinstance(t, SideQuery):
        idx = None
        if t.index is not None:
            i, s = _aterm(t.index, mems, s, ctx, env)
            if not isinstance(i, Lit):
                raise EvalError("assertion query index must be concrete")
            idx = i.value
        if ctx.relational:
            s = _sensitivity(ctx, t.name, idx, s)
        return Sym(query_symbol(ctx, t.name, idx, t.side)), s
    if isinstance(t, LogVar):
        if t.name in env:
            return Lit(env[t.name]), s
        return BoundVar(t.name), s
    if isinstance(t, Var):
        if t.name in env:
            return Lit(env[t.name]), s
        return _val_term(mems[1].get(t.name), ctx), s
    if isinstance(t, AbsTerm):
        a, s = _aterm(t.arg, mems, s, ctx, env)
        return Abs(a), s
    if isinstance(t, BinOp):
        a, s = _aterm(t.lhs, mems, s, ctx, env)
        b, s = _aterm(t.rhs, mems, s, ctx, env)
        return CBin(t.op, a, b), s
    raise EvalError(f"cannot translate {t!r}")


def _val_term(v, ctx):
    if isinstance(v, ProbSym):
        raise EvalError("assertion mentions a random value")
    return ce(v, ctx)


def _assert(a, mems, s, ctx, env):
    if isinstance(a, ATrue):
        return TRUE, s
    if isinstance(a, ACmp):
        l, s = _aterm(a.lhs, mems, s, ctx, env)
        r, s = _aterm(a.rhs, mems, s, ctx, env)
        if isinstance(l, tuple) or isinstance(r, tuple):
            if not (isinstance(l, tuple) and isinstance(r, tuple)) or a.op not in ("=", "!="):
                raise EvalError("arrays can only be compared for equality")
            eq = c_and(*[Cmp("=", x, y) for x, y in zip(l, r)]) if len(l) == len(r) else FALSE
            return (eq if a.op == "=" else c_not(eq)), s
        return Cmp(a.op, l, r), s
    if isinstance(a, AAnd):
        items = []
        for x in a.items:
            c, s = _assert(x, mems, s, ctx, env)
            items.append(c)
        return c_and(*items), s
    if isinstance(a, ANot):
        c, s = _assert(a.item, mems, s, ctx, env)
        return c_not(c), s
    if isinstance(a, AForall):
        lo, s = _aterm(a.lo, mems, s, ctx, env)
        hi, s = _aterm(a.hi, mems, s, ctx, env)
        if not (isinstance(lo, Lit) and isinstance(hi, Lit)):
            raise EvalError("quantifier bounds in assertions must be concrete")
        items = []
        for i in range(lo.value, hi.value + 1):
            c, s = _assert(a.body, mems, s, ctx, {**env, a.var: i})
            items.append(c)
        return c_and(*items), s
    raise EvalError(f"cannot translate assertion {a!r}")


def instantiate(a, m1, m2, s, ctx):
    """Constraint for a relational assertion on two memories, plus side constraints."""
    c, s2 = _assert(a, {1: m1, 2: m2}, (), ctx, {})
    return c, s2


def value_eq(vals, target, ctx) -> object:
    """Constraint: a (possibly array) value equals a concrete output value."""
    if isinstance(vals, tuple):
        if not isinstance(target, tuple) or len(target) != len(vals):
            return FALSE
        return c_and(*[Cmp("=", _val_term(v, ctx), Lit(int(t))) for v, t in zip(vals, target)])
    if isinstance(target, tuple):
        return FALSE
    return Cmp("=", _val_term(vals, ctx), Lit(int(target)))


def output_of(mem: SymMemory, name: str):
    if name in mem.arrays:
        return mem.arrays[name]
    return mem.get(name)


def pointwise_post(cfg: SRConfig, out_name: str, iota, ctx) -> object:
    o1, o2 = output_of(cfg.mem1, out_name), output_of(cfg.mem2, out_name)
    return c_implies(value_eq(o1, iota, ctx), value_eq(o2, iota, ctx))


def omega(cfg: SRConfig) -> OmegaTriple:
    return omega_decompose(cfg.cstrs)
