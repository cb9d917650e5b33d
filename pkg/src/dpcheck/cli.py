"""Command-line front end: parse, explore, solve, confirm and report."""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from . import engine, smt
from .errors import CheckerError, ConfigError, OracleError, ParseError, SolverMissing, WellFormednessError
from .oracle import TAIL, confirm_counterexample, denote_output_dist
from .parser import parse_program
from .syntax import BOT, TOP
from .wellformed import check_wellformed

EX_USAGE, EX_DATAERR, EX_NOINPUT, EX_UNAVAILABLE = 64, 65, 66, 69

ALIASES = {
    "laplace_safe": "alg1_safe",
    "laplace_buggy": "alg1_buggy",
    "svt_value": "alg2_buggy",
    "svt_top": "alg2_safe_top",
    "alg3": "alg3_buggy",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # prefix matching would swallow program parameters such as --t
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(message)


def example_names() -> list:
    root = resources.files("dpcheck") / "programs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".pfor"))


def resolve_program(spec: str) -> tuple:
    """Source text and label for a path or a bundled example name."""
    p = Path(spec)
    if p.is_file():
        return p.read_text(), str(p)
    stem = p.name[:-5] if p.name.endswith(".pfor") else p.name
    stem = ALIASES.get(stem, stem)
    root = resources.files("dpcheck") / "programs"
    f = root / f"{stem}.pfor"
    if f.is_file():
        return f.read_text(), f"{stem} (bundled)"
    raise FileNotFoundError(spec)


def load(spec: str):
    src, _ = resolve_program(spec)
    prog = parse_program(src)
    diags = check_wellformed(prog)
    if diags:
        raise WellFormednessError(diags)
    return prog


def parse_budget(text: str) -> Fraction:
    m = re.fullmatch(r"\s*([0-9]+(?:/[0-9]+)?)\s*(?:\*?\s*eps)?\s*", text)
    if not m:
        raise UsageError(f"bad budget {text!r}; expected forms like 1eps or 1/2 eps")
    return Fraction(m.group(1))


def parse_params(rest: list) -> dict:
    """Leftover ``--name value`` pairs become integer parameter bindings."""
    out = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or i + 1 >= len(rest):
            raise UsageError(f"unexpected argument {tok!r}")
        name = tok[2:].replace("-", "_")
        try:
            out[name] = json.loads(rest[i + 1])
        except json.JSONDecodeError:
            raise UsageError(f"bad value for {tok}: {rest[i + 1]!r}") from None
        i += 2
    return out


def parse_inputs(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"bad input {item!r}; expected name=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            raise UsageError(f"bad input value {v!r}") from None
    return out


def _show(v) -> str:
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_show(x) for x in v) + "]"
    if v == BOT:
        return "bot"
    if v == TOP:
        return "top"
    return str(v)


def _common(p):
    p.add_argument("program")
    p.add_argument("--eps", help="concrete eps value (default: symbolic units)")
    p.add_argument("--budget", help="privacy budget, e.g. 1eps (default: the program's)")
    p.add_argument("--unroll", type=int, default=16, help="unroll limit for symbolic loops")
    p.add_argument("--solver", help="solver executable (default: $DPCHECK_SOLVER or z3)")
    p.add_argument("--timeout", type=float, default=30.0, help="per-query solver timeout (s)")
    p.add_argument("--tail", type=float, default=TAIL, help="oracle tail bound per sampling")
    p.add_argument("--output", help="write the JSON report here")
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--dump-queries", help="directory for solver query scripts")
    p.add_argument("--seed", type=int, default=0, help="recorded for audit; exploration is deterministic")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpcheck", description="Prove or refute differential privacy of small programs.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("prove", help="prove the program's postcondition within budget")
    _common(p)
    p.add_argument("--budget-rule", choices=["distance", "shift"], default="distance")
    p.add_argument("--site-policy", action="append", default=[],
                   help="LINE:COL=lapgen|avoc|both for a sampling site")
    p.add_argument("--witness", action="append", default=None,
                   help="SITE=TEMPLATE (e.g. 12:3#0=1); check this shift assignment "
                        "instead of searching, unnamed sites take 0")
    p = sub.add_parser("prove-pointwise", help="prove o1=i => o2=i for each output i")
    _common(p)
    p.add_argument("--budget-rule", choices=["distance", "shift"], default="distance")
    p.add_argument("--domain", help="JSON list of outputs (default: derived from the program)")
    p = sub.add_parser("refute", help="search for a privacy violation")
    p.add_argument("strategy", choices=["A", "B", "C", "all"])
    _common(p)
    p.add_argument("--assume-trace-identifiable", action="store_true")
    p.add_argument("--oracle-eps", default="1", help="eps used for confirmation in symbolic mode")
    p = sub.add_parser("confirm", help="check two concrete inputs with the probability oracle")
    _common(p)
    p.add_argument("--inputs1", action="append", required=True, help="name=value (repeatable)")
    p.add_argument("--inputs2", action="append", required=True, help="name=value (repeatable)")
    p = sub.add_parser("run", help="print the output distribution on concrete inputs")
    _common(p)
    p.add_argument("--inputs", action="append", default=[], help="name=value (repeatable)")
    p.add_argument("--top", type=int, default=20, help="rows to print")
    p = sub.add_parser("dump-traces", help="print the explored relational traces")
    _common(p)
    p.add_argument("--mode", choices=["prove", "A"], default="prove")
    sub.add_parser("list-examples", help="list bundled example programs")
    return ap


def _site_policy(items) -> dict:
    out = {}
    for item in items:
        m = re.fullmatch(r"(\d+):(\d+)=(lapgen|avoc|both)", item)
        if not m:
            raise UsageError(f"bad site policy {item!r}")
        opts = ["lapgen", "avoc"] if m.group(3) == "both" else [m.group(3)]
        out[(int(m.group(1)), int(m.group(2)))] = opts
    return out


def _config(args, bindings) -> engine.EngineConfig:
    cfg = engine.EngineConfig(bindings=bindings, unroll_limit=args.unroll,
                              timeout=args.timeout, tail=args.tail)
    if args.eps is not None:
        cfg.eps = Fraction(args.eps)
    if args.budget is not None:
        cfg.budget = parse_budget(args.budget)
    if getattr(args, "budget_rule", None):
        cfg.budget_rule = args.budget_rule
    if getattr(args, "site_policy", None):
        cfg.site_policy = _site_policy(args.site_policy)
    if getattr(args, "witness", None) is not None:
        cfg.witness = {}
        for item in args.witness:
            site, sep, label = item.partition("=")
            if not sep or not site or not label:
                raise UsageError(f"bad witness item {item!r}")
            cfg.witness[site] = label
    if getattr(args, "assume_trace_identifiable", False):
        cfg.assume_identifiable = True
    if getattr(args, "oracle_eps", None):
        cfg.oracle_eps = Fraction(args.oracle_eps)
    return cfg


def _emit(args, data: dict, human: str, out):
    """Write the human summary, or the JSON report when --json is given."""
    text = json.dumps(data, indent=2, default=str) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    out.write(text if args.json else human)


def summary(rep: engine.Report) -> str:
    lines = [f"{rep.command} {rep.program}: {rep.status.upper()}"]
    if rep.vacuous:
        lines.append("  (vacuous: empty output domain)")
    if rep.witness is not None:
        if rep.witness and "output" in rep.witness[0]:
            for w in rep.witness:
                shifts = ", ".join(f"{s['site']}={s['shift']}" for s in w["shifts"])
                lines.append(f"  output {_show(w['output'])}: {shifts}")
        else:
            lines.append("  shifts: " + ", ".join(f"{s['site']}={s['shift']}" for s in rep.witness))
    if rep.refutation:
        r = rep.refutation
        lines.append(f"  strategy {r['strategy']} on trace {r['trace']}")
        lines.append("  model: " + ", ".join(f"{k}={v}" for k, v in r["sigma"].items()))
        if "certificate" in r:
            lines.append(f"  certificate: {r['certificate']['statement']}")
        if "oracle" in r:
            o = r["oracle"]
            lines.append(f"  inputs: {r['inputs1']} vs {r['inputs2']}")
            lines.append(f"  oracle: confirmed={o['confirmed']} divergence={o['divergence']:.6g} "
                         f"max ratio={o['max_ratio']:.6g} at {_show(o['max_ratio_event'])}")
    for reason in rep.reasons:
        lines.append(f"  reason: {reason}")
    for note in rep.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)


def _with_solver(args):
    smt.configure(args.solver, args.timeout, args.dump_queries)


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    err = sys.stderr
    try:
        args, rest = build_parser().parse_known_args(argv)
        if args.command == "list-examples":
            if rest:
                raise UsageError(f"unexpected arguments {rest}")
            inverse = {}
            for a, n in ALIASES.items():
                inverse.setdefault(n, []).append(a)
            for name in example_names():
                first = resolve_program(name)[0].splitlines()[0].lstrip("# ").strip()
                al = f" (alias: {', '.join(sorted(inverse[name]))})" if name in inverse else ""
                out.write(f"{name}{al}: {first}\n")
            return 0
        bindings = parse_params(rest)
        prog = load(args.program)
        if args.command in ("confirm", "run") and args.eps is None:
            raise UsageError(f"{args.command} needs a concrete --eps")
        if args.command == "run":
            inputs = {**bindings, **parse_inputs(args.inputs)}
            dist = denote_output_dist(prog, inputs, Fraction(args.eps), args.tail)
            rows = sorted(dist.masses.items(), key=lambda kv: (-kv[1], repr(kv[0])))
            human = (f"output distribution of {prog.name} (weight {dist.weight:.12f}, "
                     f"tail bound {dist.tail_bound:.1e})\n")
            for o, m in rows[:args.top]:
                human += f"  {_show(o):<40} {m:.12f}\n"
            if len(rows) > args.top:
                human += f"  ... {len(rows) - args.top} more outcomes\n"
            _emit(args, {"schema": engine.SCHEMA, "command": "run", "program": prog.name,
                         "weight": dist.weight, "tail_bound": dist.tail_bound,
                         "outcomes": [[_show(o), m] for o, m in rows]}, human, out)
            return 0
        if args.command == "confirm":
            in1 = {**bindings, **parse_inputs(args.inputs1)}
            in2 = {**bindings, **parse_inputs(args.inputs2)}
            conf = confirm_counterexample(prog, in1, in2, Fraction(args.eps), args.tail)
            human = (f"confirm {prog.name}: {'CONFIRMED' if conf.confirmed else 'NOT CONFIRMED'}\n"
                     f"  divergence {conf.divergence:.6g} (margin {conf.margin:.3g})\n"
                     f"  max ratio {conf.ratio:.6g} at {_show(conf.ratio_event)}\n")
            _emit(args, {"schema": engine.SCHEMA, "command": "confirm", "program": prog.name,
                         "inputs1": in1, "inputs2": in2,
                         "oracle": engine._oracle_json(conf)}, human, out)
            return 10 if conf.confirmed else 20
        _with_solver(args)
        cfg = _config(args, bindings)
        if args.command == "dump-traces":
            from .symexec import explore
            ex = explore(prog, "strategyA" if args.mode == "A" else "prove", cfg.bindings,
                         cfg.eps, cfg.unroll_limit)
            data = {"schema": engine.SCHEMA, "command": "dump-traces", "program": prog.name,
                    "notes": ex.notes,
                    "traces": [engine.trace_summary(i, w.id, t)
                               for w in ex.worlds for i, t in enumerate(w.traces)]}
            out.write(json.dumps(data, indent=2, default=str) + "\n")
            if args.output:
                Path(args.output).write_text(json.dumps(data, indent=2, default=str) + "\n")
            return 0
        if args.command == "prove":
            rep = engine.prove(prog, cfg)
        elif args.command == "prove-pointwise":
            domain = None
            if args.domain:
                domain = [tuple(x) if isinstance(x, list) else x for x in json.loads(args.domain)]
            rep = engine.prove_pointwise(prog, cfg, domain)
        else:
            fn = {"A": engine.refute_A, "B": engine.refute_B, "C": engine.refute_C,
                  "all": engine.refute_all}[args.strategy]
            rep = fn(prog, cfg)
        rep.settings["seed"] = args.seed
        _emit(args, rep.to_json(), summary(rep) + "\n", out)
        return rep.exit_code
    except (UsageError, ConfigError) as e:
        err.write(f"dpcheck: usage error: {e}\n")
        return EX_USAGE
    except FileNotFoundError as e:
        err.write(f"dpcheck: cannot open {e}\n")
        return EX_NOINPUT
    except SolverMissing as e:
        err.write(f"dpcheck: {e}\n")
        return EX_UNAVAILABLE
    except (ParseError, WellFormednessError) as e:
        err.write(f"dpcheck: invalid program: {e}\n")
        return EX_DATAERR
    except (OracleError, CheckerError) as e:
        err.write(f"dpcheck: {e}\n")
        return engine.EXIT["inconclusive"]


def main_exit():
    try:
        code = main()
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        code = 0
    sys.exit(code)


if __name__ == "__main__":
    main_exit()
