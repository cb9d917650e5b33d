"""Exact-up-to-truncation output distributions of programs on concrete inputs.

Every sampling is a two-sided geometric (discrete Laplace) restricted to a
window whose tail mass is below a target.  A final trace is a list of
declarations, definitions and conditions over random symbols; its output
subdistribution is computed by variable elimination over numpy factors.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .concrete import DbHandle, initial_memory, run_program
from .constraints import CBin, Eq, Gt0, LapDecl, Le0, Lit, ProbSym, PSym
from .errors import EvalError, OracleError
from .syntax import (
    AAnd, ACmp, AForall, ANot, ATrue, AbsTerm, BinOp, IntLit, LogVar, SideIdx, SideLen,
    SideQuery, SideVar, Var,
)

TAIL = 1e-12
MAX_FACTOR = 50_000_000


def _alpha(inv_scale) -> float:
    b = float(inv_scale)
    if b <= 0:
        raise OracleError("discrete Laplace needs a positive inverse scale")
    return math.exp(-b)


def dlap_pmf(mean: int, inv_scale, z: int) -> float:
    a = _alpha(inv_scale)
    return (1 - a) / (1 + a) * a ** abs(z - mean)


def dlap_cdf(mean: int, inv_scale, z: int) -> float:
    """P(X <= z)."""
    a = _alpha(inv_scale)
    if z >= mean:
        return 1 - a ** (z - mean + 1) / (1 + a)
    return a ** (mean - z) / (1 + a)


def window(inv_scale, tail: float = TAIL) -> int:
    """Smallest w such that P(|X - mean| > w) <= tail."""
    a = _alpha(inv_scale)
    # 2 a^(w+1) / (1+a) <= tail
    w = math.ceil(math.log(tail * (1 + a) / 2) / math.log(a)) - 1
    w = max(w, 0)
    while w > 0 and 2 * a ** w / (1 + a) <= tail:
        w -= 1
    return w


@dataclass
class SubDist:
    masses: dict = field(default_factory=dict)  # outcome -> mass
    tail_bound: float = 0.0

    @property
    def weight(self) -> float:
        return math.fsum(self.masses.values())

    def mass(self, outcome) -> float:
        return self.masses.get(outcome, 0.0)


# ----------------------------------------------------------- trace evaluation


class _Factor:
    def __init__(self, scope: tuple, table):
        self.scope = scope
        self.table = table


def _einsum_product(factors, keep: tuple):
    letters = {}
    for f in factors:
        for v in f.scope:
            if v not in letters:
                if len(letters) >= len(string.ascii_letters):
                    raise OracleError("too many random variables in one factor")
                letters[v] = string.ascii_letters[len(letters)]
    subs = ",".join("".join(letters[v] for v in f.scope) for f in factors)
    out = "".join(letters[v] for v in keep)
    return np.einsum(f"{subs}->{out}", *[f.table for f in factors], optimize=True)


class _Trace:
    def __init__(self, ptrace, tail):
        self.base = {}   # ProbSym -> (grid ndarray, weights ndarray)
        self.defs = {}   # ProbSym -> randExpr
        self.conds = []  # (expr, positive?)
        self.order = []
        for c in ptrace:
            if isinstance(c, LapDecl):
                if not (isinstance(c.mean, Lit) and isinstance(c.inv_scale, Lit)):
                    raise OracleError("sampling parameters must be concrete")
                mu, b = int(c.mean.value), c.inv_scale.value
                w = window(b, tail)
                grid = np.arange(mu - w, mu + w + 1, dtype=np.int64)
                a = _alpha(b)
                weights = (1 - a) / (1 + a) * a ** np.abs(grid - mu).astype(float)
                self.base[c.y] = (grid, weights)
                self.order.append(c.y)
            elif isinstance(c, Eq):
                self.defs[c.y] = c.expr
            elif isinstance(c, Gt0):
                self.conds.append((c.expr, True))
            elif isinstance(c, Le0):
                self.conds.append((c.expr, False))

    def deps(self, e) -> set:
        if isinstance(e, PSym):
            y = e.sym
            if y in self.base:
                return {y}
            if y in self.defs:
                return self.deps(self.defs[y])
            raise OracleError(f"undeclared random symbol {y}")
        if isinstance(e, ProbSym):
            return self.deps(PSym(e))
        if isinstance(e, CBin):
            return self.deps(e.lhs) | self.deps(e.rhs)
        if isinstance(e, Lit):
            return set()
        raise OracleError(f"unexpected term {e!r} in random expression")

    def value(self, e, scope: tuple):
        """Evaluate ``e`` as an array broadcast over the axes of ``scope``."""
        if isinstance(e, ProbSym):
            e = PSym(e)
        if isinstance(e, PSym):
            y = e.sym
            if y in self.base:
                shape = [1] * len(scope)
                shape[scope.index(y)] = -1
                return self.base[y][0].reshape(shape)
            return self.value(self.defs[y], scope)
        if isinstance(e, Lit):
            v = e.value
            return float(v) if isinstance(v, Fraction) and v.denominator != 1 else int(v)
        if isinstance(e, CBin):
            a = self.value(e.lhs, scope)
            b = self.value(e.rhs, scope)
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if e.op == "/":
                if np.any(np.asarray(b) == 0):
                    raise OracleError("division by zero inside a random expression")
                ai, bi = np.asarray(a), np.asarray(b)
                if ai.dtype.kind == "i" and bi.dtype.kind == "i":
                    return np.sign(ai) * np.sign(bi) * (np.abs(ai) // np.abs(bi))
                return ai / bi
        raise OracleError(f"unexpected term {e!r} in random expression")

    def factors(self):
        fs = []
        for y in self.order:
            fs.append(_Factor((y,), self.base[y][1]))
        for expr, positive in self.conds:
            scope = tuple(sorted(self.deps(expr), key=lambda s: s.id))
            val = np.asarray(self.value(expr, scope))
            ind = (val > 0) if positive else (val <= 0)
            if not scope:
                if not bool(ind):
                    return None
                continue
            shape = tuple(len(self.base[y][0]) for y in scope)
            fs.append(_Factor(scope, np.broadcast_to(ind, shape).astype(float)))
        return fs


def trace_output_dist(ptrace, out, tail: float = TAIL) -> dict:
    """Output subdistribution of one final trace; ``out`` may hold random symbols."""
    tr = _Trace(ptrace, tail)
    fs = tr.factors()
    if fs is None:
        return {}
    comps = list(out) if isinstance(out, tuple) else [out]
    out_vars = set()
    for v in comps:
        if isinstance(v, ProbSym):
            out_vars |= tr.deps(v)
        elif isinstance(v, DbHandle):
            raise OracleError("a database is not an observable output")
    keep = tuple(sorted(out_vars, key=lambda s: s.id))
    elim = [y for y in tr.order if y not in out_vars]
    while elim:
        best, best_size = None, None
        for y in elim:
            scope = set()
            for f in fs:
                if y in f.scope:
                    scope |= set(f.scope)
            size = 1
            for v in scope:
                size *= len(tr.base[v][0])
            if best is None or size < best_size:
                best, best_size = y, size
        if best_size > MAX_FACTOR:
            raise OracleError("factor too large; reduce the number of correlated samples")
        touching = [f for f in fs if best in f.scope]
        rest = [f for f in fs if best not in f.scope]
        scope = []
        for f in touching:
            for v in f.scope:
                if v != best and v not in scope:
                    scope.append(v)
        scope = tuple(scope)
        fs = rest + [_Factor(scope, _einsum_product(touching, scope))]
        elim.remove(best)
    joint = _einsum_product(fs, keep) if fs else np.array(1.0)
    if not keep:
        mass = float(joint)
        key = _ground_key(comps, out)
        return {key: mass} if mass > 0 else {}
    cols = []
    for v in comps:
        if isinstance(v, ProbSym):
            arr = np.broadcast_to(np.asarray(tr.value(v, keep)), joint.shape)
            if arr.dtype.kind != "i":
                if not np.all(arr == np.round(arr)):
                    raise OracleError("output is not an integer")
                arr = arr.astype(np.int64)
            cols.append(arr.ravel())
        else:
            cols.append(np.full(joint.size, int(v), dtype=np.int64))
    flat = joint.ravel()
    nz = flat > 0
    stacked = np.stack([c[nz] for c in cols], axis=1)
    uniq, inv = np.unique(stacked, axis=0, return_inverse=True)
    sums = np.bincount(inv.ravel(), weights=flat[nz], minlength=len(uniq))
    res = {}
    for row, m in zip(uniq, sums):
        vals = tuple(int(x) for x in row)
        res[vals if isinstance(out, tuple) else vals[0]] = float(m)
    return res


def _ground_key(comps, out):
    vals = tuple(int(v) for v in comps)
    return vals if isinstance(out, tuple) else vals[0]


def _samplings(ptrace) -> int:
    return sum(1 for c in ptrace if isinstance(c, LapDecl))


def denote_output_dist(prog, inputs: dict, eps, tail: float = TAIL) -> SubDist:
    """Output subdistribution of ``prog`` on concrete inputs at concrete eps."""
    if eps is None:
        raise OracleError("the oracle needs a concrete eps")
    try:
        finals = run_program(prog, inputs, eps)
    except EvalError as e:
        raise OracleError(f"cannot run program: {e}") from None
    acc = {}
    k = 0
    for cfg in finals:
        out = cfg.mem.arrays[prog.output] if prog.output in cfg.mem.arrays else cfg.mem.get(prog.output)
        k = max(k, _samplings(cfg.ptrace))
        for o, m in trace_output_dist(cfg.ptrace, out, tail).items():
            acc.setdefault(o, []).append(m)
    masses = {o: math.fsum(ms) for o, ms in acc.items()}
    return SubDist(dict(sorted(masses.items(), key=lambda kv: repr(kv[0]))), k * tail)


# ------------------------------------------------------------- divergences


def eps_divergence(mu1: SubDist, mu2: SubDist, eps: float) -> float:
    f = math.exp(eps)
    keys = set(mu1.masses) | set(mu2.masses)
    return max(0.0, math.fsum(max(0.0, mu1.mass(o) - f * mu2.mass(o)) for o in keys))


def max_ratio(mu1: SubDist, mu2: SubDist):
    """Largest certified ratio mu1(o)/mu2(o), computed in log space.

    Truncation only removes mass, so the true mu1(o) is at least the computed
    value and the true mu2(o) at most the computed value plus mu2's tail
    bound.  The ratio reported is therefore a lower bound on the true one.
    """
    best, event = -math.inf, None
    for o in sorted(mu1.masses, key=repr):
        a = mu1.mass(o)
        if a <= 0:
            continue
        b = mu2.mass(o) + mu2.tail_bound
        r = math.inf if b <= 0 else math.log(a) - math.log(b)
        if r > best:
            best, event = r, o
    return (math.exp(best) if best != -math.inf else 0.0), event


def max_ratio_sym(mu1: SubDist, mu2: SubDist):
    r1, e1 = max_ratio(mu1, mu2)
    r2, e2 = max_ratio(mu2, mu1)
    return (r1, e1, 1) if r1 >= r2 else (r2, e2, 2)


# ---------------------------------------------------------- preconditions


def _term_value(t, mems, env):
    if isinstance(t, IntLit):
        return t.value
    if isinstance(t, SideVar):
        m = mems[t.side]
        if t.name in m.arrays:
            return m.arrays[t.name]
        return m.get(t.name)
    if isinstance(t, SideIdx):
        i = _term_value(t.index, mems, env)
        return mems[t.side].array(t.name)[i]
    if isinstance(t, SideLen):
        return len(mems[t.side].array(t.name))
    if isinstance(t, SideQuery):
        db = mems[t.side].get(t.db)
        idx = None if t.index is None else _term_value(t.index, mems, env)
        return db.answer(t.name, idx)
    if isinstance(t, LogVar):
        if t.name not in env:
            raise OracleError(f"unbound logical variable {t.name}")
        return env[t.name]
    if isinstance(t, Var):
        if t.name in env:
            return env[t.name]
        return mems[1].get(t.name)
    if isinstance(t, AbsTerm):
        return abs(_term_value(t.arg, mems, env))
    if isinstance(t, BinOp):
        from .constraints import arith
        return arith(t.op, _term_value(t.lhs, mems, env), _term_value(t.rhs, mems, env))
    raise OracleError(f"cannot evaluate {t!r}")


_CMP = {"=": lambda a, b: a == b, "!=": lambda a, b: a != b, "<": lambda a, b: a < b,
        "<=": lambda a, b: a <= b, ">": lambda a, b: a > b, ">=": lambda a, b: a >= b}


def holds(a, mems: dict, env: Optional[dict] = None) -> bool:
    """Truth of a relational assertion on two concrete memories {1: m1, 2: m2}."""
    env = env or {}
    if isinstance(a, ATrue):
        return True
    if isinstance(a, ACmp):
        return _CMP[a.op](_term_value(a.lhs, mems, env), _term_value(a.rhs, mems, env))
    if isinstance(a, AAnd):
        return all(holds(x, mems, env) for x in a.items)
    if isinstance(a, ANot):
        return not holds(a.item, mems, env)
    if isinstance(a, AForall):
        lo, hi = _term_value(a.lo, mems, env), _term_value(a.hi, mems, env)
        return all(holds(a.body, mems, {**env, a.var: i}) for i in range(lo, hi + 1))
    raise OracleError(f"cannot evaluate assertion {a!r}")


def check_adjacent(prog, inputs1: dict, inputs2: dict, eps) -> list:
    """Violations of the precondition and of the declared query sensitivities."""
    problems = []
    m1 = initial_memory(prog, inputs1, eps, "d1")
    m2 = initial_memory(prog, inputs2, eps, "d2")
    try:
        if not holds(prog.requires, {1: m1, 2: m2}):
            problems.append("requires clause does not hold")
    except (EvalError, OracleError, IndexError) as e:
        problems.append(f"requires clause cannot be evaluated: {e}")
    for q in prog.queries:
        a, b = inputs1.get(q.name), inputs2.get(q.name)
        if a is None or b is None:
            continue
        pairs = [(a, b)] if q.lo is None else list(zip(a, b))
        if q.lo is not None and len(a) != len(b):
            problems.append(f"query {q.name} tables differ in length")
        for x, y in pairs:
            if abs(int(x) - int(y)) > q.sensitivity:
                problems.append(f"query {q.name} answers {x} and {y} exceed sensitivity {q.sensitivity}")
                break
    return problems


@dataclass
class Confirmation:
    confirmed: bool
    divergence: float
    margin: float
    event: object
    event_masses: tuple
    ratio: float
    ratio_event: object
    eps: float
    dist1: SubDist = None
    dist2: SubDist = None


def confirm_counterexample(prog, inputs1: dict, inputs2: dict, eps, tail: float = TAIL,
                           event=None) -> Confirmation:
    """Decide with the oracle whether the two inputs witness a privacy violation."""
    problems = check_adjacent(prog, inputs1, inputs2, eps)
    if problems:
        raise OracleError("; ".join(problems))
    mu1 = denote_output_dist(prog, inputs1, eps, tail)
    mu2 = denote_output_dist(prog, inputs2, eps, tail)
    e = float(eps)
    f = math.exp(e)
    div = eps_divergence(mu1, mu2, e)
    margin = mu1.tail_bound + f * mu2.tail_bound + 1e-12
    if event is None:
        keys = sorted(set(mu1.masses) | set(mu2.masses), key=repr)
        event = max(keys, key=lambda o: mu1.mass(o) - f * mu2.mass(o)) if keys else None
    ratio, revent = max_ratio(mu1, mu2)
    return Confirmation(div > margin, div, margin, event,
                        (mu1.mass(event), mu2.mass(event)), ratio, revent, e, mu1, mu2)
