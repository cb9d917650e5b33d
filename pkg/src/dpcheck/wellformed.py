"""Static well-formedness checks for parsed programs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .syntax import (
    ArrAssign, Assign, For, If, IntLit, LapSample, Pair, PairCmd, Query, Seq,
    Skip, walk,
)


@dataclass(frozen=True)
class Diagnostic:
    code: str  # short invariant name, e.g. "output-unassigned"
    message: str
    pos: Optional[tuple] = None

    def __str__(self):
        where = f"{self.pos[0]}:{self.pos[1]}: " if self.pos else ""
        return f"{where}[{self.code}] {self.message}"


def must_assign(cmd) -> set:
    """Variables and arrays assigned on every syntactic path through ``cmd``."""
    if isinstance(cmd, Skip):
        return set()
    if isinstance(cmd, (Assign, LapSample)):
        return {cmd.target}
    if isinstance(cmd, ArrAssign):
        return {cmd.array}
    if isinstance(cmd, Seq):
        return must_assign(cmd.first) | must_assign(cmd.second)
    if isinstance(cmd, If):
        return must_assign(cmd.then) & must_assign(cmd.orelse)
    if isinstance(cmd, For):
        # Only a loop with literal bounds is known to run at least once.
        if (isinstance(cmd.lo, IntLit) and isinstance(cmd.hi, IntLit)
                and cmd.lo.value <= cmd.hi.value):
            return must_assign(cmd.body) | {cmd.var}
        return set()
    if isinstance(cmd, PairCmd):
        return must_assign(cmd.left) & must_assign(cmd.right)
    return set()


def _nested_pairs(node) -> list:
    out = []
    for n in walk(node):
        if isinstance(n, (Pair, PairCmd)):
            for side in (n.left, n.right):
                for m in walk(side):
                    if isinstance(m, (Pair, PairCmd)):
                        out.append(m)
    return out


def check_wellformed(prog) -> list:
    """Return the list of violated program invariants (empty when well formed)."""
    diags = []
    declared_arrays = {a.name for a in prog.arrays}
    declared_arrays |= {p.name for p in prog.params if p.kind == "array"}
    if prog.output not in declared_arrays and prog.output not in must_assign(prog.body):
        diags.append(Diagnostic(
            "output-unassigned",
            f"output {prog.output} is not assigned on every path", prog.pos))

    for n in walk(prog.body):
        if isinstance(n, Query):
            decl = prog.query(n.name)
            if decl is None:
                diags.append(Diagnostic("undeclared-query", f"query {n.name} is not declared", n.pos))
                continue
            if decl.indexed != (n.index is not None):
                diags.append(Diagnostic(
                    "query-index", f"query {n.name} used with the wrong index form", n.pos))
                continue
            if (n.index is not None and isinstance(n.index, IntLit)
                    and isinstance(decl.lo, IntLit) and isinstance(decl.hi, IntLit)):
                if not decl.lo.value <= n.index.value <= decl.hi.value:
                    diags.append(Diagnostic(
                        "undeclared-query",
                        f"{n.name}[{n.index.value}] is outside the declared range "
                        f"{decl.lo.value}:{decl.hi.value}", n.pos))
        if isinstance(n, (Assign, LapSample)) and n.target == "eps":
            diags.append(Diagnostic("eps-assigned", "eps is read-only", n.pos))
        if isinstance(n, For) and n.var == "eps":
            diags.append(Diagnostic("eps-assigned", "eps is read-only", n.pos))

    for n in _nested_pairs(prog.body):
        diags.append(Diagnostic("nested-pair", "pair construct nested inside a pair", n.pos))

    for q in prog.queries:
        if q.sensitivity < 0:
            diags.append(Diagnostic("sensitivity", f"query {q.name} has negative sensitivity", q.pos))
    return diags
