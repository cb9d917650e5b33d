"""SMT-LIB2 encoding and an external solver driven over stdin/stdout.

A small pool of long-lived ``z3 -in`` processes serves all queries; each
query starts with ``(reset)`` so no state leaks between queries.  Models are
never trusted blindly: quantifier-free assertions are re-evaluated on the
returned values before a model is handed back.
"""

from __future__ import annotations

import itertools
import os
import queue
import select
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .constraints import (
    Abs, ArrayValue, BoundVar, CAnd, CBin, CNot, CTrue, Cmp, Forall, Lit, PSym,
    Quant, Select, Store, Sym, SymInt, c_and, c_implies, c_not, c_or,
    ground_eval, rename, symbols,
)
from .errors import GroundEvalError, SolverError, SolverMissing, UnmappedSymbol

DEFAULT_TIMEOUT = 10.0
DONE = "@@done"

# ------------------------------------------------------------------ encoding


def smt_name(sym: SymInt) -> str:
    return f"x{sym.id}" if sym.id >= 0 else f"y{-sym.id}"


def _sort(t) -> str:
    if isinstance(t, Lit):
        return "Real" if isinstance(t.value, Fraction) and t.value.denominator != 1 else "Int"
    if isinstance(t, Sym):
        return t.sym.sort
    if isinstance(t, BoundVar):
        return "Int"
    if isinstance(t, CBin):
        a, b = _sort(t.lhs), _sort(t.rhs)
        return "Real" if "Real" in (a, b) else "Int"
    if isinstance(t, Abs):
        return _sort(t.arg)
    if isinstance(t, Select):
        return "Int"
    if isinstance(t, Store):
        return "Array"
    if isinstance(t, PSym):
        raise SolverError("random symbol in solver query")
    raise SolverError(f"cannot encode term {t!r}")


def _int_lit(n: int, real: bool) -> str:
    s = f"{abs(n)}.0" if real else str(abs(n))
    return s if n >= 0 else f"(- {s})"


def _term(t, want: str) -> str:
    """Encode ``t`` as an expression of sort ``want`` (Int or Real)."""
    real = want == "Real"
    if isinstance(t, Lit):
        v = t.value
        if isinstance(v, Fraction) and v.denominator != 1:
            body = f"(/ {abs(v.numerator)}.0 {v.denominator}.0)"
            return body if v > 0 else f"(- {body})"
        return _int_lit(int(v), real)
    have = _sort(t)
    if real and have == "Int":
        return f"(to_real {_term(t, 'Int')})"
    if isinstance(t, Sym):
        return smt_name(t.sym)
    if isinstance(t, BoundVar):
        return f"b_{t.name}"
    if isinstance(t, CBin):
        if t.op == "/" and have == "Int":
            a, b = _term(t.lhs, "Int"), _term(t.rhs, "Int")
            # Truncating division expressed through the Euclidean div.
            return f"(ite (>= {a} 0) (div {a} {b}) (- (div (- {a}) {b})))"
        return f"({t.op} {_term(t.lhs, have)} {_term(t.rhs, have)})"
    if isinstance(t, Abs):
        a = _term(t.arg, have)
        zero = "0.0" if have == "Real" else "0"
        return f"(ite (>= {a} {zero}) {a} (- {a}))"
    if isinstance(t, Select):
        return f"(select {_term(t.array, 'Array')} {_term(t.index, 'Int')})"
    if isinstance(t, Store):
        return (f"(store {_term(t.array, 'Array')} {_term(t.index, 'Int')} "
                f"{_term(t.value, 'Int')})")
    raise SolverError(f"cannot encode term {t!r}")


_OPS = {"=": "=", "!=": "distinct", "<": "<", "<=": "<=", ">": ">", ">=": ">="}


_ENCODED = {}
_SYMS = {}


def _symbols_cached(c) -> frozenset:
    hit = _SYMS.get(id(c))
    if hit is not None and hit[0] is c:
        return hit[1]
    s = frozenset(symbols(c))
    if len(_SYMS) > 500_000:
        _SYMS.clear()
    _SYMS[id(c)] = (c, s)
    return s


def encode(c) -> str:
    """SMT-LIB2 text of a constraint (cached per constraint object)."""
    hit = _ENCODED.get(id(c))
    if hit is not None and hit[0] is c:
        return hit[1]
    s = _encode(c)
    if len(_ENCODED) > 500_000:
        _ENCODED.clear()
    _ENCODED[id(c)] = (c, s)
    return s


def _encode(c) -> str:
    if isinstance(c, CTrue):
        return "true"
    if isinstance(c, Cmp):
        a, b = _sort(c.lhs), _sort(c.rhs)
        if "Array" in (a, b):
            s = "Array"
        else:
            s = "Real" if "Real" in (a, b) else "Int"
        return f"({_OPS[c.op]} {_term(c.lhs, s)} {_term(c.rhs, s)})"
    if isinstance(c, CAnd):
        if not c.items:
            return "true"
        return "(and " + " ".join(encode(x) for x in c.items) + ")"
    if isinstance(c, CNot):
        return f"(not {encode(c.item)})"
    if isinstance(c, Forall):
        v = f"b_{c.var}"
        body = encode(c.body)
        if c.lo is not None:
            body = (f"(=> (and (<= {_term(c.lo, 'Int')} {v}) (<= {v} {_term(c.hi, 'Int')})) "
                    f"{body})")
        return f"(forall (({v} Int)) {body})"
    if isinstance(c, Quant):
        if not c.syms:
            return encode(c.body)
        binds = " ".join(f"({smt_name(s)} {_decl_sort(s)})" for s in c.syms)
        return f"({c.kind} ({binds}) {encode(c.body)})"
    raise SolverError(f"cannot encode constraint {c!r}")


def _decl_sort(s: SymInt) -> str:
    return "(Array Int Int)" if s.sort == "Array" else s.sort


def _quantified(c) -> bool:
    stack = [c]
    while stack:
        n = stack.pop()
        if isinstance(n, (Quant, Forall)):
            return True
        if isinstance(n, CAnd):
            stack.extend(n.items)
        elif isinstance(n, CNot):
            stack.append(n.item)
    return False


@dataclass
class SolverQuery:
    """Declarations plus assertions; ``wanted`` lists the symbols to read back."""

    assertions: tuple
    wanted: tuple = ()
    timeout: float = DEFAULT_TIMEOUT

    def declarations(self) -> list:
        syms = set()
        for a in self.assertions:
            syms |= _symbols_cached(a)
        syms |= set(self.wanted)
        return sorted(syms, key=lambda s: s.id)

    @property
    def quantified(self) -> bool:
        if not hasattr(self, "_q"):
            self._q = any(_quantified(a) for a in self.assertions)
        return self._q

    def logic(self) -> str:
        return "ALL" if self.quantified else "QF_AUFLIRA"

    def script(self) -> str:
        lines = [
            "(set-option :produce-models true)",
            f"(set-option :timeout {int(self.timeout * 1000)})",
            f"(set-logic {self.logic()})",
        ]
        for s in self.declarations():
            lines.append(f"(declare-const {smt_name(s)} {_decl_sort(s)})")
        for a in self.assertions:
            lines.append(f"(assert {encode(a)})")
        lines.append("(check-sat)")
        return "\n".join(lines) + "\n"


def parse_declarations(script: str) -> set:
    """Names declared by a script (used to check the encoding's symbol table)."""
    out = set()
    for line in script.splitlines():
        if line.startswith("(declare-const "):
            out.add(line.split()[1])
    return out


# --------------------------------------------------------------- s-expressions


def parse_sexprs(text: str) -> list:
    toks = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            toks.append(ch)
            i += 1
        elif ch == '"':
            j = text.index('"', i + 1)
            toks.append(text[i:j + 1])
            i = j + 1
        elif ch == "|":
            j = text.index("|", i + 1)
            toks.append(text[i + 1:j])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append(text[i:j])
            i = j
    out, stack = [], [[]]
    for t in toks:
        if t == "(":
            stack.append([])
        elif t == ")":
            if len(stack) == 1:
                raise SolverError("unbalanced solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(t)
    if len(stack) != 1:
        raise SolverError("unbalanced solver output")
    out = stack[0]
    return out


def sexpr_value(e):
    """Decode an integer, rational or array value printed by the solver."""
    if isinstance(e, str):
        if "." in e:
            return Fraction(e)
        return int(e)
    if len(e) == 2 and e[0] == "-":
        return -sexpr_value(e[1])
    if len(e) == 3 and e[0] == "/":
        return Fraction(sexpr_value(e[1])) / Fraction(sexpr_value(e[2]))
    if len(e) == 2 and isinstance(e[0], list) and e[0][:2] == ["as", "const"]:
        return ArrayValue(sexpr_value(e[1]))
    if len(e) == 4 and e[0] == "store":
        return sexpr_value(e[1]).store(sexpr_value(e[2]), sexpr_value(e[3]))
    raise SolverError(f"unsupported model value {e!r}")


# ----------------------------------------------------------------- processes


def find_solver(path: Optional[str] = None) -> str:
    """Solver executable: explicit path, then $DPCHECK_SOLVER, then z3 on PATH."""
    cand = path or os.environ.get("DPCHECK_SOLVER") or shutil.which("z3")
    if not cand:
        raise SolverMissing("no SMT solver found (set --solver or DPCHECK_SOLVER)")
    if os.path.sep in cand:
        if not (os.path.isfile(cand) and os.access(cand, os.X_OK)):
            raise SolverMissing(f"solver not executable: {cand}")
        return cand
    found = shutil.which(cand)
    if not found:
        raise SolverMissing(f"solver not found: {cand}")
    return found


class SolverProcess:
    """One interactive solver process."""

    def __init__(self, path: str):
        self.path = path
        self.proc = None
        self._buf = b""

    def _start(self):
        self.proc = subprocess.Popen(
            [self.path, "-in", "-smt2"], stdin=subprocess.PIPE,
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT)
        self._buf = b""

    def close(self):
        if self.proc is not None:
            try:
                self.proc.kill()
                self.proc.wait(timeout=5)
            except Exception:
                pass
            self.proc = None

    def _send(self, text: str):
        if self.proc is None or self.proc.poll() is not None:
            self._start()
        self.proc.stdin.write(text.encode())
        self.proc.stdin.flush()

    def _read_until_done(self, deadline: float) -> list:
        lines = []
        fd = self.proc.stdout.fileno()
        while True:
            while b"\n" in self._buf:
                line, self._buf = self._buf.split(b"\n", 1)
                s = line.decode().strip()
                if s == DONE:
                    return lines
                if s:
                    lines.append(s)
            left = deadline - time.monotonic()
            if left <= 0:
                raise TimeoutError
            ready, _, _ = select.select([fd], [], [], left)
            if not ready:
                raise TimeoutError
            chunk = os.read(fd, 65536)
            if not chunk:
                raise SolverError("solver process exited")
            self._buf += chunk

    def exchange(self, text: str, timeout: float) -> list:
        """Send commands, return the output lines up to the done marker."""
        self._send(text + f'(echo "{DONE}")\n')
        try:
            return self._read_until_done(time.monotonic() + timeout)
        except (TimeoutError, SolverError, OSError):
            self.close()
            raise


class SolverPool:
    def __init__(self, path: Optional[str] = None, size: int = 2, dump_dir: Optional[str] = None):
        self.path = find_solver(path)
        self.dump_dir = dump_dir
        self._free = queue.LifoQueue()
        self._all = []
        self._lock = threading.Lock()
        self._count = itertools.count(1)
        self.size = size

    def _acquire(self) -> SolverProcess:
        try:
            return self._free.get_nowait()
        except queue.Empty:
            with self._lock:
                if len(self._all) < self.size:
                    p = SolverProcess(self.path)
                    self._all.append(p)
                    return p
            return self._free.get()

    def close(self):
        for p in self._all:
            p.close()

    def run(self, q: SolverQuery) -> "Verdict":
        script = q.script()
        n = next(self._count)
        if self.dump_dir:
            os.makedirs(self.dump_dir, exist_ok=True)
            with open(os.path.join(self.dump_dir, f"query_{n:05d}.smt2"), "w") as fh:
                fh.write(script)
        proc = self._acquire()
        t0 = time.monotonic()
        try:
            try:
                out = proc.exchange("(reset)\n" + script, q.timeout + 5.0)
            except TimeoutError:
                return Verdict("unknown", None, time.monotonic() - t0, "solver timed out")
            except SolverError as e:
                return Verdict("unknown", None, time.monotonic() - t0, str(e))
            errors = [x for x in out if x.startswith("(error")]
            status = next((x for x in out if x in ("sat", "unsat", "unknown")), None)
            if status is None:
                return Verdict("unknown", None, time.monotonic() - t0,
                               "; ".join(errors) or "no verdict")
            if errors:
                raise SolverError("; ".join(errors))
            model = None
            if status == "sat" and q.wanted:
                names = " ".join(smt_name(s) for s in q.wanted)
                try:
                    lines = proc.exchange(f"(get-value ({names}))\n", q.timeout + 5.0)
                except TimeoutError:
                    return Verdict("unknown", None, time.monotonic() - t0, "model timed out")
                text = " ".join(lines)
                if text.startswith("(error"):
                    raise SolverError(text)
                pairs = parse_sexprs(text)[0]
                by_name = {s_name: sexpr_value(v) for s_name, v in pairs}
                model = {s: by_name[smt_name(s)] for s in q.wanted}
            return Verdict(status, model, time.monotonic() - t0)
        finally:
            self._free.put(proc)


_pool: Optional[SolverPool] = None
_pool_lock = threading.Lock()
_settings = {"path": None, "timeout": DEFAULT_TIMEOUT, "dump_dir": None}


def configure(path: Optional[str] = None, timeout: Optional[float] = None,
              dump_dir: Optional[str] = None):
    """Set the solver executable, default timeout and query dump directory."""
    global _pool
    with _pool_lock:
        if _pool is not None:
            _pool.close()
            _pool = None
        _settings["path"] = path
        if timeout is not None:
            _settings["timeout"] = timeout
        _settings["dump_dir"] = dump_dir
    return find_solver(path)


def pool() -> SolverPool:
    global _pool
    with _pool_lock:
        if _pool is None:
            _pool = SolverPool(_settings["path"], dump_dir=_settings["dump_dir"])
        return _pool


def default_timeout() -> float:
    return _settings["timeout"]


# ------------------------------------------------------------------- verdicts


@dataclass
class Verdict:
    status: str  # sat, unsat, unknown
    model: Optional[dict] = None
    time: float = 0.0
    diagnostics: str = ""


def _recheck(assertions, model: dict) -> Optional[str]:
    """Re-evaluate the quantifier-free assertions on a model."""
    for a in assertions:
        if _quantified(a):
            continue
        try:
            ok = ground_eval(a, model)
        except GroundEvalError as e:
            return f"model could not be re-checked: {e}"
        if not ok:
            raise SolverError("solver model violates an assertion")
    return None


def check_formula(assertions, wanted=None, timeout: Optional[float] = None) -> Verdict:
    """Satisfiability of a conjunction that may contain quantifier blocks.

    ``wanted`` selects the model symbols to return; by default every free
    symbol of a quantifier-free query.
    """
    assertions = tuple(assertions)
    full = wanted is None
    if wanted is None:
        wanted = []
        for a in assertions:
            wanted.extend(symbols(a))
        wanted = sorted(set(wanted), key=lambda s: s.id)
    q = SolverQuery(assertions, tuple(wanted), timeout or default_timeout())
    v = pool().run(q)
    if full and v.status == "sat" and v.model is not None and not q.quantified:
        note = _recheck(assertions, v.model)
        if note:
            return Verdict("unknown", None, v.time, note)
    return v


def check_sat(cs, want_model: bool = False, timeout: Optional[float] = None) -> Verdict:
    """Satisfiability of a constraint set; the model covers all its symbols."""
    cs = tuple(cs)
    if not cs:
        return Verdict("sat", {} if want_model else None)
    wanted = None if want_model else ()
    return check_formula(cs, wanted, timeout)


@dataclass
class Validity:
    status: str  # valid, invalid, unknown
    counter_model: Optional[dict] = None
    diagnostics: str = ""


def check_validity(hyp, concl, universals=None, timeout: Optional[float] = None) -> Validity:
    """Is ``hyp => concl`` valid?  Universals default to every free symbol."""
    hyp = tuple(hyp)
    concl = tuple(concl) if isinstance(concl, (tuple, list)) else (concl,)
    v = check_formula(hyp + (c_not(c_and(*concl)),), None, timeout)
    if v.status == "unsat":
        return Validity("valid")
    if v.status == "sat":
        model = v.model
        if universals is not None:
            keep = set(universals)
            model = {k: x for k, x in model.items() if k in keep}
        return Validity("invalid", model)
    return Validity("unknown", None, v.diagnostics)


# -------------------------------------------------------- exists-forall solver


@dataclass
class Obligation:
    """``hyp => goal`` for one final trace."""

    hyp: tuple
    goal: object
    label: str = ""


@dataclass
class ShiftClass:
    """Shift symbols that must take the same template; candidates aligned by index."""

    key: str
    labels: list
    members: dict  # SymInt -> list of candidate terms, len == len(labels)


@dataclass
class EFResult:
    status: str  # witness, refuted (no shifts and a counter-model), none, unknown
    choice: dict = field(default_factory=dict)    # class key -> candidate label
    values: dict = field(default_factory=dict)    # SymInt -> term
    tier: int = 0
    iterations: int = 0
    diagnostics: list = field(default_factory=list)


class _Local:
    """Solver-only symbols (selectors, instance copies) with negative ids."""

    def __init__(self):
        self.n = 0

    def fresh(self, sort="Int", name="tmp"):
        self.n += 1
        return SymInt(-self.n, 0, "other", sort, f"{name}#{self.n}")


def _split(hyp, dependent: set, definitions: dict):
    defs = {definitions[s.id] for s in dependent if s.id in definitions}
    d = tuple(c for c in hyp if c in defs)
    rest = tuple(c for c in hyp if c not in defs)
    return d, rest


def verify_assignment(obligations, values: dict, timeout: Optional[float] = None) -> Verdict:
    """Check all obligations at once with shifts replaced by ``values`` terms.

    Returns unsat when the assignment discharges every obligation.
    """
    disj = []
    for ob in obligations:
        h = rename(ob.hyp, values)
        g = rename(ob.goal, values)
        disj.append(c_and(*h, c_not(g)))
    if not disj:
        return Verdict("unsat")
    return check_formula((c_or(*disj),), None, timeout)


def _failing(obligations, values: dict, model: dict) -> list:
    """Indices of obligations the counter-model violates (all if unsure)."""
    out = []
    for j, ob in enumerate(obligations):
        try:
            hyp = ground_eval(c_and(*rename(ob.hyp, values)), model)
            ok = (not hyp) or ground_eval(rename(ob.goal, values), model)
        except (GroundEvalError, UnmappedSymbol):
            return list(range(len(obligations)))
        if not ok:
            out.append(j)
    return out or list(range(len(obligations)))


def solve_exists_forall(classes, obligations, definitions: dict,
                        timeout: Optional[float] = None, max_iterations: int = 80,
                        tier2: bool = True, tier2_timeout: Optional[float] = None) -> EFResult:
    """Find one candidate per shift class such that every obligation is valid.

    Tier 1 is a counterexample-guided search over the finite template space;
    tier 2 asks the solver directly for constant shifts.  Any witness is
    re-validated with the tier-1 verification query.
    """
    obligations = list(obligations)
    shifts = {}
    for cl in classes:
        for k in cl.members:
            shifts[k] = cl
    all_syms = set()
    for ob in obligations:
        all_syms |= symbols(ob.hyp) | symbols(ob.goal)
    dependent = {s for s in all_syms if s.id in definitions and s not in shifts}
    free = sorted(all_syms - dependent - set(shifts), key=lambda s: s.id)
    split = [_split(ob.hyp, dependent, definitions) for ob in obligations]
    res = EFResult("unknown")

    def values_for(choice):
        return {k: shifts[k].members[k][choice[shifts[k].key]] for k in shifts}

    local = _Local()
    sels = {cl.key: local.fresh("Int", "sel") for cl in classes}
    synth = [c_and(Cmp(">=", Sym(sels[cl.key]), Lit(0)),
                   Cmp("<", Sym(sels[cl.key]), Lit(len(cl.labels)))) for cl in classes]
    choice = {cl.key: 0 for cl in classes}
    for it in range(1, max_iterations + 1):
        res.iterations = it
        vals = values_for(choice)
        v = verify_assignment(obligations, vals, timeout)
        if v.status == "unsat":
            res.status, res.tier, res.values = "witness", 1, vals
            res.choice = {cl.key: cl.labels[choice[cl.key]] for cl in classes}
            return res
        if v.status != "sat":
            res.diagnostics.append(f"verification: {v.diagnostics or v.status}")
            break
        sigma = {s: v.model[s] for s in free if s in v.model}
        failing = _failing(obligations, vals, v.model)
        used = set()
        for j in failing:
            used |= symbols(c_and(*obligations[j].hyp)) | symbols(obligations[j].goal)
        # Instance: free symbols fixed, dependent ones copied, shifts by template.
        mapping = {s: Lit(x) for s, x in sigma.items()}
        for d in dependent & used:
            mapping[d] = Sym(local.fresh(d.sort, d.name))
        for k in sorted(set(shifts) & used, key=lambda s: s.id):
            mapping[k] = Sym(local.fresh("Int", k.name))
        for k in sorted(set(shifts) & used, key=lambda s: s.id):
            cl, kc = shifts[k], mapping[k]
            for j, term in enumerate(cl.members[k]):
                synth.append(c_or(Cmp("!=", Sym(sels[cl.key]), Lit(j)),
                                  Cmp("=", kc, rename(term, mapping))))
        for j in failing:
            (d, rest), ob = split[j], obligations[j]
            synth.extend(rename(d, mapping))
            synth.append(c_implies(c_and(*rename(rest, mapping)), rename(ob.goal, mapping)))
        if not classes:
            res.status = "refuted"
            return res
        sv = check_formula(tuple(synth), tuple(sels.values()), timeout)
        if sv.status == "unsat":
            res.diagnostics.append("template space exhausted")
            break
        if sv.status != "sat":
            res.diagnostics.append(f"synthesis: {sv.diagnostics or sv.status}")
            break
        choice = {key: sv.model[s] for key, s in sels.items()}
    else:
        res.diagnostics.append("iteration limit reached")

    if tier2 and classes:
        t2 = _tier2(classes, obligations, shifts, free, dependent, local,
                    tier2_timeout or timeout)
        res.diagnostics.extend(t2.diagnostics)
        if t2.status == "witness":
            vals = t2.values
            v = verify_assignment(obligations, vals, timeout)
            if v.status == "unsat":
                t2.iterations = res.iterations
                return t2
            res.diagnostics.append("tier-2 witness failed re-validation")
    return res


def _tier2(classes, obligations, shifts, free, dependent, local, timeout) -> EFResult:
    kvars = {cl.key: local.fresh("Int", f"k_{cl.key}") for cl in classes}
    mapping = {k: Sym(kvars[cl.key]) for k, cl in shifts.items()}
    body = c_and(*[c_implies(c_and(*rename(ob.hyp, mapping)), rename(ob.goal, mapping))
                   for ob in obligations])
    bound = tuple(sorted(set(free) | set(dependent), key=lambda s: s.id))
    v = check_formula((Quant("forall", bound, body),), tuple(kvars.values()), timeout)
    if v.status == "sat":
        vals = {k: Lit(v.model[kvars[cl.key]]) for k, cl in shifts.items()}
        choice = {cl.key: str(v.model[kvars[cl.key]]) for cl in classes}
        return EFResult("witness", choice, vals, tier=2)
    if v.status == "unsat":
        # Only constants were searched, so this refutes nothing beyond them.
        return EFResult("none", tier=2, diagnostics=["no constant shifts exist"])
    return EFResult("unknown", tier=2, diagnostics=[f"tier 2: {v.diagnostics or v.status}"])
