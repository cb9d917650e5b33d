"""Symbols, integer constraints, probabilistic path constraints.

Two symbol families are kept apart: ``SymInt`` (integer unknowns that the
solver reasons about) and ``ProbSym`` (random values, only ever constrained
through the probabilistic trace).  Every symbol carries the run it belongs
to (1, 2, or 0 for shared) so that a constraint set can be split into its
left, right and relational parts.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import GroundEvalError, UnmappedSymbol

SHARED = 0

# Origins of integer symbols.
INPUT = "input"
BRANCH = "branch"
SHIFT = "shift"        # coupling shift K
BOUND = "bound"        # coupling bound K'
BUDGET = "budget"      # privacy budget accumulators E, E', E''
SAMPLE = "sample"      # a sample turned into an integer unknown
DERIVED = "derived"    # result of an operation, has a defining equation
OTHER = "other"

RELATIONAL_ORIGINS = (SHIFT, BOUND, BUDGET)


@dataclass(frozen=True)
class SymInt:
    id: int
    side: int = field(compare=False)
    origin: str = field(compare=False)
    sort: str = field(default="Int", compare=False)  # Int, Real or Array
    name: str = field(default="", compare=False)

    def __str__(self):
        return self.name

    @property
    def smt_name(self):
        return f"x{self.id}"


@dataclass(frozen=True)
class ProbSym:
    id: int
    side: int = field(compare=False)

    def __str__(self):
        return f"Y{self.id}"


_PREFIX = {INPUT: "I", BRANCH: "B", SHIFT: "K", BOUND: "Kb", BUDGET: "E",
           SAMPLE: "X", DERIVED: "X", OTHER: "X"}


class Registry:
    """Issues fresh symbols.  The only mutable state shared by a run."""

    def __init__(self):
        self._lock = threading.Lock()
        self._next_int = 0
        self._next_prob = 0
        self.symbols = []
        self.prob_symbols = []
        self.definitions = {}   # SymInt id -> defining Constraint
        self._memo = {}         # named symbols (queries, inputs)

    def fresh(self, side: int, origin: str, sort: str = "Int", name: Optional[str] = None) -> SymInt:
        with self._lock:
            self._next_int += 1
            sid = self._next_int
            if name is None:
                name = f"{_PREFIX.get(origin, 'X')}{sid}"
                if side in (1, 2) and origin != SAMPLE:
                    name += f"_{side}" if origin == INPUT else ""
            s = SymInt(sid, side, origin, sort, name)
            self.symbols.append(s)
            return s

    def fresh_prob(self, side: int) -> ProbSym:
        with self._lock:
            self._next_prob += 1
            y = ProbSym(self._next_prob, side)
            self.prob_symbols.append(y)
            return y

    def named(self, key, side: int, origin: str, sort: str = "Int", name: Optional[str] = None) -> SymInt:
        """Memoized symbol: the same key always yields the same symbol."""
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        s = self.fresh(side, origin, sort, name)
        with self._lock:
            return self._memo.setdefault(key, s)

    def lookup(self, key):
        return self._memo.get(key)

    def define(self, sym: SymInt, expr) -> "Cmp":
        """Record ``sym = expr`` as the defining equation of ``sym``."""
        c = Cmp("=", Sym(sym), expr)
        with self._lock:
            self.definitions[sym.id] = c
        return c

    def audit(self) -> bool:
        ids = [s.id for s in self.symbols]
        pids = [y.id for y in self.prob_symbols]
        return len(ids) == len(set(ids)) and len(pids) == len(set(pids))


# --------------------------------------------------------- constraint terms


@dataclass(frozen=True)
class Lit:
    value: object  # int or Fraction


@dataclass(frozen=True)
class Sym:
    sym: SymInt


@dataclass(frozen=True)
class BoundVar:
    name: str


@dataclass(frozen=True)
class CBin:
    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Store:
    array: object
    index: object
    value: object


@dataclass(frozen=True)
class Select:
    array: object
    index: object


@dataclass(frozen=True)
class Abs:
    arg: object


@dataclass(frozen=True)
class PSym:
    """A random symbol inside a random expression (never in integer constraints)."""

    sym: ProbSym


# --------------------------------------------------------------- constraints


@dataclass(frozen=True)
class CTrue:
    pass


@dataclass(frozen=True)
class Cmp:
    op: str  # = != < <= > >=
    lhs: object
    rhs: object


@dataclass(frozen=True)
class CAnd:
    items: tuple


@dataclass(frozen=True)
class CNot:
    item: object


@dataclass(frozen=True)
class Forall:
    """``forall var in [lo, hi]. body``; unbounded when lo/hi are None."""

    var: str
    body: object
    lo: object = None
    hi: object = None


@dataclass(frozen=True)
class Quant:
    """Quantifier block over symbols, used only when building solver queries."""

    kind: str  # "forall" or "exists"
    syms: tuple
    body: object


TRUE = CTrue()
FALSE = CNot(TRUE)


def c_and(*items):
    flat = []
    for c in items:
        if isinstance(c, CAnd):
            flat.extend(c.items)
        elif isinstance(c, CTrue):
            continue
        else:
            flat.append(c)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return CAnd(tuple(flat))


def c_not(c):
    if isinstance(c, CNot):
        return c.item
    return CNot(c)


def c_or(*items):
    return c_not(c_and(*[c_not(c) for c in items]))


def c_implies(a, b):
    return c_not(c_and(a, c_not(b)))


# ---------------------------------------------------- probabilistic traces


@dataclass(frozen=True)
class LapDecl:
    y: ProbSym
    mean: object
    inv_scale: object


@dataclass(frozen=True)
class Eq:
    y: ProbSym
    expr: object


@dataclass(frozen=True)
class Gt0:
    expr: object


@dataclass(frozen=True)
class Le0:
    expr: object


def leaf(v):
    """Constraint-term for a runtime value (int, Fraction, SymInt, ProbSym)."""
    if isinstance(v, SymInt):
        return Sym(v)
    if isinstance(v, ProbSym):
        return PSym(v)
    if isinstance(v, (int, Fraction)):
        return Lit(v)
    if isinstance(v, (Lit, Sym, CBin, PSym, Abs, Select, Store, BoundVar)):
        return v
    raise TypeError(f"no constraint term for {v!r}")


def add(s: tuple, *cs) -> tuple:
    """Append constraints to a constraint tuple, skipping duplicates and True."""
    out = list(s)
    seen = set(s)
    for c in cs:
        if isinstance(c, CTrue) or c in seen:
            continue
        out.append(c)
        seen.add(c)
    return tuple(out)


# ------------------------------------------------------------------- text


def _num(v) -> str:
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        return f"{v.numerator}/{v.denominator}"
    return str(v)


def text(t) -> str:
    """Canonical human-readable text of a term, constraint or prob constraint."""
    if isinstance(t, Lit):
        return _num(t.value) if t.value >= 0 else f"({_num(t.value)})"
    if isinstance(t, Sym):
        return t.sym.name
    if isinstance(t, PSym):
        return str(t.sym)
    if isinstance(t, BoundVar):
        return t.name
    if isinstance(t, CBin):
        return f"({text(t.lhs)} {t.op} {text(t.rhs)})"
    if isinstance(t, Abs):
        return f"|{text(t.arg)}|"
    if isinstance(t, Select):
        return f"{text(t.array)}[{text(t.index)}]"
    if isinstance(t, Store):
        return f"store({text(t.array)}, {text(t.index)}, {text(t.value)})"
    if isinstance(t, CTrue):
        return "true"
    if isinstance(t, Cmp):
        a, b = text(t.lhs), text(t.rhs)
        if a.startswith("(") and a.endswith(")") and isinstance(t.lhs, CBin):
            a = a[1:-1]
        if b.startswith("(") and b.endswith(")") and isinstance(t.rhs, CBin):
            b = b[1:-1]
        return f"{a} {t.op} {b}"
    if isinstance(t, CAnd):
        return "(" + " && ".join(text(x) for x in t.items) + ")"
    if isinstance(t, CNot):
        return f"!{text(t.item)}" if isinstance(t.item, (CAnd, CNot)) else f"!({text(t.item)})"
    if isinstance(t, Forall):
        rng = "" if t.lo is None else f" in {text(t.lo)}:{text(t.hi)}"
        return f"(forall {t.var}{rng}. {text(t.body)})"
    if isinstance(t, Quant):
        names = " ".join(s.name for s in t.syms)
        return f"({t.kind} {names}. {text(t.body)})"
    if isinstance(t, LapDecl):
        return f"{t.y} ~ lap({text(t.mean)}, {text(t.inv_scale)})"
    if isinstance(t, Eq):
        return f"{t.y} = {text(t.expr)}"
    if isinstance(t, Gt0):
        return f"{text(t.expr)} > 0"
    if isinstance(t, Le0):
        return f"{text(t.expr)} <= 0"
    raise TypeError(f"cannot print {t!r}")


def canonical(cs) -> list:
    """Deterministic, duplicate-free, sorted text form of a constraint set."""
    return sorted({text(c) for c in cs})


# -------------------------------------------------------------- traversal


def symbols(t) -> set:
    """All SymInt occurring in a term / constraint / prob constraint."""
    out = set()
    _collect(t, out, None)
    return out


def prob_symbols(t) -> set:
    out = set()
    _collect(t, None, out)
    return out


def _collect(t, ints, probs):
    stack = [t]
    while stack:
        n = stack.pop()
        if isinstance(n, Sym):
            if ints is not None:
                ints.add(n.sym)
        elif isinstance(n, PSym):
            if probs is not None:
                probs.add(n.sym)
        elif isinstance(n, (LapDecl, Eq)):
            if probs is not None:
                probs.add(n.y)
            stack.extend([n.mean, n.inv_scale] if isinstance(n, LapDecl) else [n.expr])
        elif isinstance(n, (Gt0, Le0)):
            stack.append(n.expr)
        elif isinstance(n, CBin):
            stack.extend([n.lhs, n.rhs])
        elif isinstance(n, Cmp):
            stack.extend([n.lhs, n.rhs])
        elif isinstance(n, Abs):
            stack.append(n.arg)
        elif isinstance(n, Select):
            stack.extend([n.array, n.index])
        elif isinstance(n, Store):
            stack.extend([n.array, n.index, n.value])
        elif isinstance(n, CAnd):
            stack.extend(n.items)
        elif isinstance(n, CNot):
            stack.append(n.item)
        elif isinstance(n, Forall):
            stack.append(n.body)
            if n.lo is not None:
                stack.extend([n.lo, n.hi])
        elif isinstance(n, Quant):
            inner = set()
            _collect(n.body, inner, probs)
            if ints is not None:
                ints.update(inner - set(n.syms))
        elif isinstance(n, (tuple, list)):
            stack.extend(n)


def is_pure(t) -> bool:
    """True when no random symbol occurs in ``t`` (integer-constraint invariant)."""
    return not prob_symbols(t)


def rename(t, mapping: dict):
    """Replace symbols by terms: mapping SymInt -> term (or value)."""
    if isinstance(t, Sym):
        if t.sym in mapping:
            return leaf(mapping[t.sym])
        return t
    if isinstance(t, (Lit, BoundVar, PSym, CTrue)):
        return t
    if isinstance(t, CBin):
        return CBin(t.op, rename(t.lhs, mapping), rename(t.rhs, mapping))
    if isinstance(t, Abs):
        return Abs(rename(t.arg, mapping))
    if isinstance(t, Select):
        return Select(rename(t.array, mapping), rename(t.index, mapping))
    if isinstance(t, Store):
        return Store(rename(t.array, mapping), rename(t.index, mapping), rename(t.value, mapping))
    if isinstance(t, Cmp):
        return Cmp(t.op, rename(t.lhs, mapping), rename(t.rhs, mapping))
    if isinstance(t, CAnd):
        return CAnd(tuple(rename(x, mapping) for x in t.items))
    if isinstance(t, CNot):
        return CNot(rename(t.item, mapping))
    if isinstance(t, Forall):
        lo = None if t.lo is None else rename(t.lo, mapping)
        hi = None if t.hi is None else rename(t.hi, mapping)
        return Forall(t.var, rename(t.body, mapping), lo, hi)
    if isinstance(t, Quant):
        inner = {k: v for k, v in mapping.items() if k not in t.syms}
        return Quant(t.kind, t.syms, rename(t.body, inner))
    if isinstance(t, LapDecl):
        return LapDecl(t.y, rename(t.mean, mapping), rename(t.inv_scale, mapping))
    if isinstance(t, Eq):
        return Eq(t.y, rename(t.expr, mapping))
    if isinstance(t, Gt0):
        return Gt0(rename(t.expr, mapping))
    if isinstance(t, Le0):
        return Le0(rename(t.expr, mapping))
    if isinstance(t, tuple):
        return tuple(rename(x, mapping) for x in t)
    if isinstance(t, list):
        return [rename(x, mapping) for x in t]
    raise TypeError(f"cannot rename in {t!r}")


# -------------------------------------------------------- ground arithmetic


@dataclass(frozen=True)
class ArrayValue:
    """A total integer array: default value plus finitely many entries."""

    default: object
    entries: tuple = ()  # sorted (index, value) pairs

    def select(self, i):
        for k, v in self.entries:
            if k == i:
                return v
        return self.default

    def store(self, i, v):
        d = dict(self.entries)
        d[i] = v
        return ArrayValue(self.default, tuple(sorted(d.items())))


def trunc_div(a: int, b: int) -> int:
    if b == 0:
        raise GroundEvalError("division by zero")
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b > 0) else -q


def arith(op: str, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if isinstance(a, int) and isinstance(b, int):
            return trunc_div(a, b)
        if b == 0:
            raise GroundEvalError("division by zero")
        return Fraction(a) / Fraction(b)
    raise ValueError(op)


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def ground_eval(t, sigma: Optional[dict] = None, env: Optional[dict] = None):
    """Evaluate a term or constraint under a total substitution ``sigma``."""
    sigma = sigma or {}
    env = env or {}
    if isinstance(t, Lit):
        return t.value
    if isinstance(t, Sym):
        if t.sym not in sigma:
            raise UnmappedSymbol(f"no value for {t.sym.name}")
        return sigma[t.sym]
    if isinstance(t, BoundVar):
        if t.name not in env:
            raise GroundEvalError(f"unbound variable {t.name}")
        return env[t.name]
    if isinstance(t, CBin):
        return arith(t.op, ground_eval(t.lhs, sigma, env), ground_eval(t.rhs, sigma, env))
    if isinstance(t, Abs):
        return abs(ground_eval(t.arg, sigma, env))
    if isinstance(t, Select):
        return ground_eval(t.array, sigma, env).select(ground_eval(t.index, sigma, env))
    if isinstance(t, Store):
        return ground_eval(t.array, sigma, env).store(
            ground_eval(t.index, sigma, env), ground_eval(t.value, sigma, env))
    if isinstance(t, CTrue):
        return True
    if isinstance(t, Cmp):
        return _CMP[t.op](ground_eval(t.lhs, sigma, env), ground_eval(t.rhs, sigma, env))
    if isinstance(t, CAnd):
        return all(ground_eval(x, sigma, env) for x in t.items)
    if isinstance(t, CNot):
        return not ground_eval(t.item, sigma, env)
    if isinstance(t, Forall):
        if t.lo is None:
            raise GroundEvalError("unbounded quantifier in ground evaluation")
        lo, hi = ground_eval(t.lo, sigma, env), ground_eval(t.hi, sigma, env)
        return all(ground_eval(t.body, sigma, {**env, t.var: i}) for i in range(lo, hi + 1))
    if isinstance(t, PSym):
        raise GroundEvalError("random symbol in ground evaluation")
    if isinstance(t, (tuple, list)):
        return all(ground_eval(x, sigma, env) for x in t)
    raise TypeError(f"cannot evaluate {t!r}")


def apply_subst(sigma: dict, target):
    """Substitute values for integer symbols in a constraint set, trace or memory.

    Constraint sets and prob traces are returned with every integer symbol
    replaced by a literal (random symbols are left in place).  Objects with
    ``vars``/``arrays`` attributes (symbolic memories) become plain dicts.
    Raises UnmappedSymbol when sigma misses a symbol.
    """
    if hasattr(target, "vars") and hasattr(target, "arrays"):
        out_vars = {k: _subst_value(sigma, v) for k, v in target.vars.items()}
        out_arrays = {k: tuple(_subst_value(sigma, v) for v in a.items)
                      for k, a in target.arrays.items()}
        return {"vars": out_vars, "arrays": out_arrays}
    missing = [s for s in symbols(target) if s not in sigma]
    if missing:
        raise UnmappedSymbol("no value for " + ", ".join(sorted(s.name for s in missing)))
    # Array-valued symbols have no literal form and stay symbolic.
    return rename(target, {s: Lit(v) for s, v in sigma.items() if not isinstance(v, ArrayValue)})


def _subst_value(sigma, v):
    if isinstance(v, SymInt):
        if v not in sigma:
            raise UnmappedSymbol(f"no value for {v.name}")
        return sigma[v]
    return v


# -------------------------------------------------------- decomposition


@dataclass(frozen=True)
class OmegaTriple:
    omega1: tuple
    omega2: tuple
    relational: tuple
    kvec: tuple


def side_of(c) -> int:
    """1 or 2 when every symbol of ``c`` belongs to that run, else 0."""
    syms = symbols(c)
    if not syms:
        return 0
    if any(s.origin in RELATIONAL_ORIGINS for s in syms):
        return 0
    sides = {s.side for s in syms}
    if sides == {1}:
        return 1
    if sides == {2}:
        return 2
    return 0


def project_side(i: int, s) -> tuple:
    return tuple(c for c in s if side_of(c) == i)


def omega_decompose(s) -> OmegaTriple:
    o1, o2, rel = [], [], []
    for c in s:
        k = side_of(c)
        (o1 if k == 1 else o2 if k == 2 else rel).append(c)
    shifts = set()
    for c in s:
        shifts |= {x for x in symbols(c) if x.origin == SHIFT}
    kvec = tuple(sorted(shifts, key=lambda x: x.id))
    return OmegaTriple(tuple(o1), tuple(o2), tuple(rel), kvec)
