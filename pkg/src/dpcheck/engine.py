"""Prove and refute pipelines over explored relational traces, and reports."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import smt
from .concrete import Ctx, ProbMemory, eval_expr_c
from .constraints import (
    INPUT, SAMPLE, Abs, CBin, Cmp, Lit, Quant, Sym, SymInt, c_and, c_implies, c_not,
    Registry, canonical, ground_eval, omega_decompose, rename, symbols,
)
from .errors import CheckerError, ConfigError, EvalError, GroundEvalError, OracleError
from .oracle import TAIL, confirm_counterexample
from .symexec import (
    ProofOptions, _val_term, explore, explore_unary, instantiate, output_of,
    pointwise_post,
)
from .syntax import ArrAssign, Assign, If, IntLit, Var, format_budget, walk

SCHEMA = "dpcheck.report/1"

EXIT = {"proved": 0, "refuted": 10, "suspected": 11, "inconclusive": 20}


@dataclass
class EngineConfig:
    bindings: dict = field(default_factory=dict)
    eps: Optional[Fraction] = None          # None: symbolic eps units
    budget: Optional[Fraction] = None       # multiple of eps; default from the program
    unroll_limit: int = 16
    timeout: float = 30.0
    tail: float = TAIL
    oracle_eps: Fraction = Fraction(1)
    budget_rule: str = "distance"
    site_policy: dict = field(default_factory=dict)
    assume_identifiable: bool = False
    input_bounds: tuple = (1, 4, 16, None)
    oracle_attempts: int = 2
    witness: Optional[dict] = None          # fixed site -> template label; skips the search
    pointwise_witness: Optional[dict] = None  # output value -> fixed site -> label


@dataclass
class Report:
    command: str
    program: str
    status: str = "inconclusive"
    strategy: Optional[str] = None
    reasons: list = field(default_factory=list)
    vacuous: bool = False
    traces: list = field(default_factory=list)
    witness: object = None
    refutation: Optional[dict] = None
    flagged: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT[self.status]

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "command": self.command,
            "program": self.program,
            "settings": self.settings,
            "verdict": {"status": self.status, "strategy": self.strategy,
                        "reasons": self.reasons, "vacuous": self.vacuous},
            "witness": self.witness,
            "refutation": self.refutation,
            "flagged": self.flagged,
            "traces": self.traces,
            "notes": self.notes,
            "timing": self.timing,
        }


# ---------------------------------------------------------------- helpers


def _budget_of(prog, cfg: EngineConfig) -> Fraction:
    return Fraction(cfg.budget if cfg.budget is not None else prog.budget)


def _budget_bound(prog, cfg: EngineConfig) -> Lit:
    b = _budget_of(prog, cfg)
    return Lit(b if cfg.eps is None else b * Fraction(cfg.eps))


def _settings(prog, cfg: EngineConfig, extra=None) -> dict:
    out = {
        "bindings": {k: cfg.bindings[k] for k in sorted(cfg.bindings)},
        "eps": "symbolic" if cfg.eps is None else str(Fraction(cfg.eps)),
        "budget": format_budget(_budget_of(prog, cfg)),
        "unroll_limit": cfg.unroll_limit,
        "budget_rule": cfg.budget_rule,
    }
    out.update(extra or {})
    return out


def _pos(p) -> str:
    return f"{p[0]}:{p[1]}" if isinstance(p, tuple) else str(p)


def _history(h) -> list:
    return [f"{_pos(p)}={'T' if t else 'F'}" for p, t in h]


def _site_key(site) -> str:
    return f"{_pos(site[0])}#{site[1]}"


def _value(v):
    if isinstance(v, tuple):
        return [_value(x) for x in v]
    if isinstance(v, SymInt):
        return v.name
    if isinstance(v, Fraction):
        return str(v)
    return v if isinstance(v, int) else str(v)


def _model_json(model: dict) -> dict:
    return {s.name: (str(x) if isinstance(x, Fraction) else x)
            for s, x in sorted(model.items(), key=lambda kv: kv[0].name)}


def trace_summary(tid: int, world: int, tr) -> dict:
    om = omega_decompose(tr.cstrs)
    return {
        "id": tid,
        "world": world,
        "history1": _history(tr.history1),
        "history2": _history(tr.history2),
        "omega": {"omega1": canonical(om.omega1), "relational": canonical(om.relational),
                  "omega2": canonical(om.omega2)},
        "kvec": [k.name for k in om.kvec],
        "budget": tr.budget.name if tr.budget else None,
        "couplings": [{"site": _site_key(c.site), "kind": c.kind,
                       "shift": c.k.name if c.k else None} for c in tr.couplings],
    }


def _defs_in(ex, s) -> set:
    d = ex.registry.definitions
    return {c for c in s if isinstance(c, Cmp) and c.op == "=" and isinstance(c.lhs, Sym)
            and d.get(c.lhs.sym.id) == c}


def _inputs_of(s) -> set:
    out = set()
    for c in s:
        out |= {x for x in symbols(c) if x.origin == INPUT}
    return out


class _Copies:
    """Renamings of symbols to solver-only copies with negative ids."""

    def __init__(self):
        self.local = smt._Local()

    def __call__(self, syms) -> dict:
        return {z: Sym(self.local.fresh(z.sort, z.name)) for z in syms}


def concrete_inputs(prog, setup, sigma: dict, side: int, default: int = 0) -> dict:
    """Concrete program inputs of one run read off a solver model."""
    reg = setup.registry
    other = 2 if side == 1 else 1

    def val(key_side, key_other):
        s1 = reg.lookup(key_side)
        if s1 is not None and s1 in sigma:
            return int(sigma[s1])
        s2 = reg.lookup(key_other)
        if s2 is not None and s2 in sigma:
            return int(sigma[s2])
        return default

    out = {}
    ints = {}
    for prm in prog.params:
        if prm.kind == "int":
            if prm.name in setup.inputs[side] and isinstance(setup.inputs[side][prm.name], int):
                out[prm.name] = setup.inputs[side][prm.name]
            else:
                out[prm.name] = val(("in", prm.name, side), ("in", prm.name, other))
            ints[prm.name] = out[prm.name]
        elif prm.kind == "array":
            arr = setup.inputs[side].get(prm.name, ())
            out[prm.name] = [val(("in", prm.name, j, side), ("in", prm.name, j, other))
                             for j in range(len(arr))]
    mem = ProbMemory({**ints, "eps": Fraction(1)}, {})
    for q in prog.queries:
        if q.lo is None:
            out[q.name] = val(("q", q.name, None, side), ("q", q.name, None, other))
        else:
            lo, _ = eval_expr_c(mem, q.lo, (), Ctx(Registry()))
            hi, _ = eval_expr_c(mem, q.hi, (), Ctx(Registry()))
            out[q.name] = [val(("q", q.name, i, side), ("q", q.name, i, other))
                           for i in range(lo, hi + 1)]
    return out


def _oracle(prog, ex, cfg, sigma, event=None) -> tuple:
    in1 = concrete_inputs(prog, ex.setup, sigma, 1)
    in2 = concrete_inputs(prog, ex.setup, sigma, 2)
    eps = cfg.eps if cfg.eps is not None else cfg.oracle_eps
    conf = confirm_counterexample(prog, in1, in2, eps, cfg.tail, event)
    return in1, in2, conf


def _oracle_json(conf) -> dict:
    return {
        "confirmed": conf.confirmed,
        "eps": conf.eps,
        "divergence": conf.divergence,
        "margin": conf.margin,
        "event": _value(conf.event),
        "event_masses": list(conf.event_masses),
        "max_ratio": conf.ratio,
        "max_ratio_event": _value(conf.ratio_event),
    }


def _explore(prog, mode, cfg):
    return explore(prog, mode, cfg.bindings, cfg.eps, cfg.unroll_limit,
                   ProofOptions(cfg.budget_rule, dict(cfg.site_policy)))


# ---------------------------------------------------------------- proving


def _query_pairs(ex) -> list:
    pairs = []
    for key, sym in sorted(ex.registry._memo.items(), key=lambda kv: kv[1].id):
        if key[0] == "q" and key[3] == 1:
            partner = ex.registry.lookup(("q", key[1], key[2], 2))
            if partner is not None:
                pairs.append((sym, partner))
    return pairs


def shift_classes(ex, traces, full: bool = True) -> list:
    """Group shift symbols by sync site and attach aligned candidate templates.

    Candidates: small constants, the mean difference (plus or minus one) and,
    for each query, the difference of its two answers.  With ``full`` off
    the query differences are kept only at sites whose means read no query.
    """
    sens = sorted({q.sensitivity for q in ex.prog.queries if q.sensitivity > 1})
    pairs = _query_pairs(ex)
    qsyms = {s for pr in pairs for s in pr}
    sites = {}
    for tr in traces:
        for c in tr.couplings:
            if c.kind == "lapgen":
                sites.setdefault(c.site, []).append(c)
    classes = []
    for site, cs in sorted(sites.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        reads = any(symbols(c.mean1) & qsyms or symbols(c.mean2) & qsyms for c in cs)
        use_pairs = pairs if (full or not reads) else []
        labels = ["0", "1", "-1"]
        for r in sens:
            labels += [str(r), str(-r)]
        labels += ["mu2-mu1", "mu2-mu1+1", "mu2-mu1-1"]
        for a, b in use_pairs:
            labels += [f"{b.name}-{a.name}", f"{a.name}-{b.name}"]
        members = {}
        for c in cs:
            d = CBin("-", c.mean2, c.mean1)
            terms = [Lit(0), Lit(1), Lit(-1)]
            for r in sens:
                terms += [Lit(r), Lit(-r)]
            terms += [d, CBin("+", d, Lit(1)), CBin("-", d, Lit(1))]
            for a, b in use_pairs:
                terms += [CBin("-", Sym(b), Sym(a)), CBin("-", Sym(a), Sym(b))]
            members[c.k] = terms
        classes.append(smt.ShiftClass(_site_key(site), labels, members))
    return classes


def _obligations(ex, traces, post_of, bound) -> list:
    obs = []
    for i, tr in enumerate(traces):
        post, extra = post_of(tr)
        goal = c_and(post, Cmp("<=", Sym(tr.budget), bound))
        free = symbols(goal) - set().union(*[symbols(c) for c in tr.cstrs + tuple(extra)])
        # Uncoupled samples are legitimately unconstrained.
        free = {s for s in free if s.origin != SAMPLE}
        if free:
            raise CheckerError("postcondition mentions symbols outside the trace: "
                               + ", ".join(sorted(s.name for s in free)))
        mapping, kept = _inline(ex, tuple(tr.cstrs) + tuple(extra))
        obs.append(smt.Obligation(tuple(rename(c, mapping) for c in kept),
                                  rename(goal, mapping), f"trace {i}"))
    return obs


def _discharge(ex, traces, post_of, bound, cfg):
    obs = _obligations(ex, traces, post_of, bound)
    small = shift_classes(ex, traces, full=False)
    full = shift_classes(ex, traces, full=True)
    if [c.labels for c in small] != [c.labels for c in full]:
        res = smt.solve_exists_forall(small, obs, ex.registry.definitions, cfg.timeout,
                                      tier2=False)
        if res.status == "witness":
            return res, small, obs
    res = smt.solve_exists_forall(full, obs, ex.registry.definitions, cfg.timeout,
                                  tier2_timeout=cfg.timeout)
    return res, full, obs


def _fixed(ex, traces, post_of, bound, cfg, fixed: dict):
    """Check a caller-supplied shift assignment instead of searching."""
    obs = _obligations(ex, traces, post_of, bound)
    classes = shift_classes(ex, traces)
    unknown = set(fixed) - {cl.key for cl in classes}
    if unknown:
        raise ConfigError("witness names unknown sites: " + ", ".join(sorted(unknown)))
    choice, values = {}, {}
    for cl in classes:
        label = fixed.get(cl.key, "0")
        if label not in cl.labels:
            raise ConfigError(f"site {cl.key} has no template {label!r}")
        choice[cl.key] = label
        for k, terms in cl.members.items():
            values[k] = terms[cl.labels.index(label)]
    v = smt.verify_assignment(obs, values, cfg.timeout)
    status = {"unsat": "witness", "sat": "none"}.get(v.status, "unknown")
    diag = [] if status == "witness" else [f"fixed assignment does not discharge every trace ({v.status})"]
    return smt.EFResult(status, choice, values, diagnostics=diag), classes, obs


def _witness_json(res, classes) -> list:
    return [{"site": cl.key, "shift": res.choice.get(cl.key)} for cl in classes]


def _failures(obs, res, classes) -> list:
    """Per-trace outcome under the best assignment found (or all-zero shifts)."""
    values = res.values or {k: cl.members[k][0] for cl in classes for k in cl.members}
    out = []
    for ob in obs:
        v = smt.verify_assignment([ob], values)
        out.append("discharged" if v.status == "unsat" else "failed" if v.status == "sat" else "unknown")
    return out


def prove(prog, cfg: EngineConfig) -> Report:
    t0 = time.time()
    rep = Report("prove", prog.name, settings=_settings(prog, cfg))
    try:
        ex = _explore(prog, "prove", cfg)
    except EvalError as e:
        rep.reasons.append(f"exploration failed: {e}")
        return rep
    t1 = time.time()
    rep.notes.extend(ex.notes)
    bound = _budget_bound(prog, cfg)
    post_of = lambda tr: instantiate(prog.ensures, tr.mem1, tr.mem2, tr.cstrs, ex.ctx)
    for w in ex.worlds:
        if cfg.witness is not None:
            res, classes, obs = _fixed(ex, w.traces, post_of, bound, cfg, cfg.witness)
        else:
            res, classes, obs = _discharge(ex, w.traces, post_of, bound, cfg)
        rep.traces = [dict(trace_summary(i, w.id, tr), outcome=o)
                      for i, (tr, o) in enumerate(zip(w.traces, _failures(obs, res, classes)))]
        if res.status == "witness":
            rep.status = "proved"
            rep.witness = _witness_json(res, classes)
            rep.reasons = []
            break
        rep.reasons.append(f"world {w.id}: no shift assignment discharges every trace"
                           + (f" ({'; '.join(res.diagnostics)})" if res.diagnostics else ""))
    rep.timing = {"explore": round(t1 - t0, 3), "total": round(time.time() - t0, 3)}
    return rep


def output_domain(prog, cfg: EngineConfig) -> list:
    """Distinct ground outputs of the unary symbolic traces."""
    finals, _, _ = explore_unary(prog, cfg.bindings, cfg.eps, "prob", cfg.unroll_limit)
    dom = set()
    for f in finals:
        v = output_of(f.mem, prog.output)
        items = v if isinstance(v, tuple) else (v,)
        if not all(isinstance(x, int) for x in items):
            raise CheckerError("output is not ground on every trace; supply an explicit domain")
        dom.add(v)
    return sorted(dom)


def prove_pointwise(prog, cfg: EngineConfig, domain: Optional[list] = None) -> Report:
    t0 = time.time()
    rep = Report("prove-pointwise", prog.name, settings=_settings(prog, cfg))
    try:
        if domain is None:
            domain = output_domain(prog, cfg)
        ex = _explore(prog, "prove", cfg)
    except (EvalError, CheckerError) as e:
        rep.reasons.append(f"exploration failed: {e}")
        return rep
    rep.notes.extend(ex.notes)
    rep.settings["domain"] = [_value(x) for x in domain]
    if not domain:
        rep.status, rep.vacuous = "proved", True
        rep.notes.append("empty output domain: the result is vacuous")
        return rep
    bound = _budget_bound(prog, cfg)
    witnesses = []
    for w in ex.worlds:
        witnesses, ok = [], True
        for iota in domain:
            post_of = lambda tr, iota=iota: (pointwise_post(tr, prog.output, iota, ex.ctx), ())
            if cfg.pointwise_witness is not None:
                fixed = cfg.pointwise_witness.get(iota, {})
                res, classes, obs = _fixed(ex, w.traces, post_of, bound, cfg, fixed)
            else:
                res, classes, obs = _discharge(ex, w.traces, post_of, bound, cfg)
            if res.status != "witness":
                ok = False
                rep.reasons.append(f"world {w.id}, output {_value(iota)}: no shift assignment found"
                                   + (f" ({'; '.join(res.diagnostics)})" if res.diagnostics else ""))
                break
            witnesses.append({"output": _value(iota), "shifts": _witness_json(res, classes)})
        rep.traces = [trace_summary(i, w.id, tr) for i, tr in enumerate(w.traces)]
        if ok:
            rep.status, rep.witness, rep.reasons = "proved", witnesses, []
            break
    rep.timing = {"total": round(time.time() - t0, 3)}
    return rep


# --------------------------------------------------------------- refuting


def trace_identifiable(prog) -> bool:
    """Syntactic check that outputs identify the branches taken.

    Every conditional must write the output in at least one branch, and
    when both branches write it the written values must be distinct
    constants.
    """
    out = prog.output

    def writes(c):
        vals = []
        for n in walk(c):
            if isinstance(n, Assign) and n.target == out:
                vals.append(n.expr)
            elif isinstance(n, ArrAssign) and n.array == out:
                vals.append(n.rhs)
        return vals

    def const(e):
        if isinstance(e, IntLit):
            return e.value
        if isinstance(e, Var) and e.name in ("top", "bot"):
            return e.name
        return None

    for n in walk(prog.body):
        if isinstance(n, If):
            a, b = writes(n.then), writes(n.orelse)
            if not a and not b:
                return False
            if a and b:
                ca, cb = {const(x) for x in a}, {const(x) for x in b}
                if None in ca or None in cb or ca & cb:
                    return False
    return True


def _bounds(syms, bound):
    if bound is None:
        return ()
    return tuple(c for x in syms if x.sort == "Int"
                 for c in (Cmp("<=", Sym(x), Lit(bound)), Cmp(">=", Sym(x), Lit(-bound))))


def _ground_output(v, sigma):
    if isinstance(v, tuple):
        return tuple(_ground_output(x, sigma) for x in v)
    if isinstance(v, int):
        return v
    return int(ground_eval(Sym(v), sigma))


def _block(inputs, sigma):
    return c_not(c_and(*[Cmp("=", Sym(x), Lit(sigma[x])) for x in inputs if x in sigma]))


def refute_A(prog, cfg: EngineConfig) -> Report:
    t0 = time.time()
    rep = Report("refute-A", prog.name, strategy="A", settings=_settings(prog, cfg))
    identifiable = cfg.assume_identifiable or trace_identifiable(prog)
    rep.settings["trace_identifiable"] = identifiable
    if not identifiable:
        rep.reasons.append("outputs may not identify branches; pass --assume-trace-identifiable")
        return rep
    try:
        ex = _explore(prog, "strategyA", cfg)
    except EvalError as e:
        rep.reasons.append(f"exploration failed: {e}")
        return rep
    rep.notes.extend(ex.notes)
    found = []
    for w in ex.worlds:
        for i, tr in enumerate(w.traces):
            summ = trace_summary(i, w.id, tr)
            outcome, ref = _refute_A_trace(prog, ex, tr, cfg, rep, i)
            summ["outcome"] = outcome
            rep.traces.append(summ)
            if ref is not None:
                rep.flagged.append(i)
                found.append(ref)
    if found:
        # Deterministic choice among confirmed traces: the smallest event.
        rep.status = "refuted"
        rep.refutation = min(found, key=lambda r: (_event_key(r["oracle"]["event"]), r["trace"]))
    if rep.status != "refuted":
        if all(t["outcome"] == "not orthogonal" for t in rep.traces):
            rep.reasons.append("no orthogonal trace found")
        else:
            rep.reasons.append("no oracle-confirmed orthogonal trace")
    rep.timing = {"total": round(time.time() - t0, 3)}
    return rep


def _event_key(e):
    return tuple(e) if isinstance(e, list) else (e,)


def _extreme(ex, inputs) -> tuple:
    """Query pairs differing by exactly their sensitivity (boundary inputs)."""
    have = set(inputs)
    out = []
    for a, b in _query_pairs(ex):
        if a in have and b in have:
            decl = ex.prog.query(next(k for k, v in ex.registry._memo.items() if v == a)[1])
            out.append(Cmp("=", Abs(CBin("-", Sym(a), Sym(b))), Lit(decl.sensitivity)))
    return tuple(out)


def _refute_A_trace(prog, ex, tr, cfg, rep, tid):
    """Outcome text and, when the oracle confirms, the refutation entry."""
    s = tuple(tr.cstrs)
    z2 = set()
    for c in s:
        z2 |= {x for x in symbols(c) if x.side == 2 and x.origin != INPUT}
    left = tuple(c for c in s if not (symbols(c) & z2))
    right = tuple(c for c in s if symbols(c) & z2)
    if not right:
        return "not orthogonal", None
    inputs = sorted(_inputs_of(s), key=lambda x: x.id)
    body = Quant("forall", tuple(sorted(z2, key=lambda x: x.id)), c_not(c_and(*right)))
    wanted = tuple(sorted(set().union(*[symbols(c) for c in left]), key=lambda x: x.id))
    boundary = _extreme(ex, inputs)
    tiers = [(cfg.input_bounds[0], boundary)] if boundary and cfg.input_bounds else []
    tiers += [(b, ()) for b in cfg.input_bounds]
    seen = False
    for bound, extra in tiers:
        blocked = ()
        for _ in range(cfg.oracle_attempts):
            v = smt.check_formula(left + (body,) + extra + _bounds(inputs, bound) + blocked,
                                  wanted, cfg.timeout)
            if v.status == "unknown":
                rep.notes.append(f"trace {tid}: solver unknown ({v.diagnostics})")
            if v.status != "sat":
                break
            seen = True
            sigma = v.model
            blocked += (_block(inputs, sigma),)
            try:
                event = _ground_output(output_of(tr.mem1, prog.output), sigma)
                in1, in2, conf = _oracle(prog, ex, cfg, sigma, event)
            except (OracleError, EvalError, GroundEvalError) as e:
                rep.notes.append(f"trace {tid}: oracle failed ({e})")
                continue
            positive_zero = (conf.event_masses[0] > conf.margin
                             and conf.event_masses[1] <= conf.margin)
            if conf.confirmed and positive_zero:
                return "orthogonal, confirmed", {
                    "strategy": "A", "trace": tid,
                    "sigma": _model_json({x: sigma[x] for x in inputs if x in sigma}),
                    "inputs1": in1, "inputs2": in2, "oracle": _oracle_json(conf),
                }
        if v.status == "unsat" and bound is None and not extra:
            break
    return ("orthogonal, unconfirmed" if seen else "not orthogonal"), None


def _inline(ex, s):
    """Substitute defined symbols by their definitions.

    Returns the substitution and the constraints that are not definitions.
    Definitions only mention older symbols, so one pass in id order suffices.
    """
    defs = _defs_in(ex, s)
    mapping = {}
    for c in sorted(defs, key=lambda c: c.lhs.sym.id):
        mapping[c.lhs.sym] = rename(c.rhs, mapping)
    return mapping, tuple(c for c in s if c not in defs)


def _specular(tr) -> bool:
    return [t for _, t in tr.history1] == [t for _, t in tr.history2]


def _eq_out(tr, prog, ctx):
    o1, o2 = output_of(tr.mem1, prog.output), output_of(tr.mem2, prog.output)
    if isinstance(o1, tuple):
        if not isinstance(o2, tuple) or len(o1) != len(o2):
            return None
        return c_and(*[Cmp("=", _val_term(a, ctx), _val_term(b, ctx)) for a, b in zip(o1, o2)])
    return Cmp("=", _val_term(o1, ctx), _val_term(o2, ctx))


def _strategy_query(prog, ex, tr, cfg, which):
    """Solver assertions of strategy B or C for one trace (inputs left free)."""
    s = tuple(tr.cstrs)
    eq = _eq_out(tr, prog, ex.ctx)
    om = omega_decompose(s)
    inputs = sorted(_inputs_of(s), key=lambda x: x.id)
    if eq is None or not om.kvec:
        return None, inputs
    mapping, kept = _inline(ex, s)
    inl = lambda c: rename(c, mapping)
    eq = inl(eq)
    if not symbols(eq) and ground_eval(eq, {}):
        return None, inputs  # outputs are equal constants on this trace
    o2core = set(om.omega2)
    ins = set(inputs)
    pre = tuple(inl(c) for c in kept if symbols(inl(c)) <= ins)
    o2 = tuple(inl(c) for c in kept if c in o2core)
    rest = tuple(inl(c) for c in kept if c not in o2core and not symbols(inl(c)) <= ins)
    within = inl(Cmp("<=", Sym(tr.budget), _budget_bound(prog, cfg)))
    ks = tuple(om.kvec)
    allsyms = set()
    for c in rest + o2 + (eq, within):
        allsyms |= symbols(c)
    zs = tuple(sorted(allsyms - ins - set(ks), key=lambda x: x.id))
    copies = _Copies()
    if which == "B":
        hyp, goal = rest, c_and(*o2)
        side = within
    else:
        hyp, goal = rest + o2, eq
        side = None

    def holds_all(kmap):
        body = c_implies(c_and(*[rename(c, kmap) for c in hyp]), rename(goal, kmap))
        return Quant("forall", zs, body) if zs else body

    z1 = copies(zs)
    exist = (holds_all({}),) + tuple(rename(c, z1) for c in hyp)
    if side is not None:
        exist += (side,)
    k2 = copies(ks)
    z2 = copies(zs)
    kz = {**k2, **z2}
    if which == "B":
        inner = c_and(rename(within, k2), holds_all(k2), *[rename(c, kz) for c in hyp],
                      rename(eq, kz))
    else:
        inner = c_and(holds_all(k2), *[rename(c, kz) for c in hyp], rename(within, kz))
    bound_syms = tuple(t.sym for t in list(k2.values()) + list(z2.values()))
    univ = Quant("forall", bound_syms, c_not(inner))
    return pre + exist + (univ,), inputs


def _certificate(prog, ex, tr, cfg, sigma, inputs, classes):
    """Smallest budget among template shifts that force equal outputs."""
    eq = _eq_out(tr, prog, ex.ctx)
    ks = [c.k for c in tr.couplings if c.kind == "lapgen"]
    per = []
    for k in ks:
        cl = next(c for c in classes if k in c.members)
        per.append([(lab, term) for lab, term in zip(cl.labels, cl.members[k])])
    if not per or len(list(itertools.islice(itertools.product(*per), 4097))) > 4096:
        return None
    fix = tuple(Cmp("=", Sym(x), Lit(sigma[x])) for x in inputs if x in sigma)
    best = None
    for combo in itertools.product(*per):
        kmap = {k: term for k, (_, term) in zip(ks, combo)}
        hyp = tuple(rename(c, kmap) for c in tr.cstrs) + fix
        if smt.check_validity(hyp, rename(eq, kmap), timeout=cfg.timeout).status != "valid":
            continue
        v = smt.check_sat(hyp, want_model=True, timeout=cfg.timeout)
        if v.status != "sat" or tr.budget not in v.model:
            continue
        cost = Fraction(v.model[tr.budget])
        if best is None or cost < best[0]:
            best = (cost, {k.name: lab for k, (lab, _) in zip(ks, combo)})
    if best is None:
        return None
    unit = "" if cfg.eps is not None else " eps"
    return {"min_budget": f"{best[0]}{unit}", "shifts": best[1],
            "statement": f"equality forces the spent budget to at least {best[0]}{unit}"}


def _refute_BC(prog, cfg: EngineConfig, which: str) -> Report:
    t0 = time.time()
    rep = Report(f"refute-{which}", prog.name, strategy=which, settings=_settings(prog, cfg))
    try:
        ex = _explore(prog, f"strategy{which}", cfg)
    except EvalError as e:
        rep.reasons.append(f"exploration failed: {e}")
        return rep
    rep.notes.extend(ex.notes)
    confirmed = None
    suspects = []
    for w in ex.worlds:
        classes = shift_classes(ex, w.traces)
        for i, tr in enumerate(w.traces):
            summ = trace_summary(i, w.id, tr)
            rep.traces.append(summ)
            if which == "B" and not _specular(tr):
                summ["outcome"] = "not specular"
                continue
            q, inputs = _strategy_query(prog, ex, tr, cfg, which)
            if q is None:
                summ["outcome"] = "skipped"
                continue
            v = smt.check_formula(q, tuple(inputs), cfg.timeout)
            if v.status == "unknown":
                summ["outcome"] = "unknown"
                rep.notes.append(f"trace {i}: solver unknown, skipped ({v.diagnostics})")
                continue
            if v.status == "unsat":
                summ["outcome"] = "not flagged"
                continue
            summ["outcome"] = "flagged"
            rep.flagged.append(i)
            sigma = v.model
            entry = {"strategy": which, "trace": i,
                     "sigma": _model_json({x: sigma[x] for x in inputs if x in sigma})}
            if which == "C":
                cert = _certificate(prog, ex, tr, cfg, sigma, inputs, classes)
                if cert:
                    entry["certificate"] = cert
            for attempt in range(cfg.oracle_attempts):
                try:
                    in1, in2, conf = _oracle(prog, ex, cfg, sigma)
                except (OracleError, EvalError) as e:
                    entry["oracle_error"] = str(e)
                    break
                entry.update({"inputs1": in1, "inputs2": in2, "oracle": _oracle_json(conf)})
                if conf.confirmed:
                    break
                nxt = smt.check_formula(q + (_block(inputs, sigma),), tuple(inputs), cfg.timeout)
                if nxt.status != "sat":
                    break
                sigma = nxt.model
                entry["sigma"] = _model_json({x: sigma[x] for x in inputs if x in sigma})
            if entry.get("oracle", {}).get("confirmed") and confirmed is None:
                confirmed = entry
            elif not entry.get("oracle", {}).get("confirmed"):
                suspects.append(entry)
    if confirmed:
        rep.status, rep.refutation = "refuted", confirmed
    elif suspects:
        rep.status, rep.refutation = "suspected", suspects[0]
        rep.reasons.append("flagged traces were not confirmed by the oracle")
    else:
        rep.reasons.append("no trace flagged")
    rep.timing = {"total": round(time.time() - t0, 3)}
    return rep


def refute_B(prog, cfg: EngineConfig) -> Report:
    return _refute_BC(prog, cfg, "B")


def refute_C(prog, cfg: EngineConfig) -> Report:
    return _refute_BC(prog, cfg, "C")


def refute_all(prog, cfg: EngineConfig) -> Report:
    t0 = time.time()
    parts = []
    if cfg.assume_identifiable or trace_identifiable(prog):
        parts.append(refute_A(prog, cfg))
    parts += [refute_B(prog, cfg), refute_C(prog, cfg)]
    rep = Report("refute-all", prog.name, settings=_settings(prog, cfg))
    for status in ("refuted", "suspected"):
        hit = next((p for p in parts if p.status == status), None)
        if hit:
            rep.status, rep.strategy, rep.refutation = status, hit.strategy, hit.refutation
            rep.flagged, rep.traces = hit.flagged, hit.traces
            break
    for p in parts:
        rep.notes.extend(f"{p.strategy}: {n}" for n in p.notes)
        if rep.status == "inconclusive":
            rep.reasons.extend(f"{p.strategy}: {r}" for r in p.reasons)
    rep.timing = {"total": round(time.time() - t0, 3)}
    return rep
