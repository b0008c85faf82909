"""Self-contained dense primal simplex with an equality-substitution presolve.

The LP builders in :mod:`pcnopt.lp` emit per-step balance-update rows
verbatim, which makes the raw formulations tall chains of equalities. The
presolve stage eliminates every equality row whose newest variable carries a
unit coefficient, turning the chains into small inequality systems before the
tableau is built. Pivoting uses Dantzig's rule and falls back to Bland's rule
after a degenerate stall, which keeps the solver anti-cycling and fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import PcnError

TOL = 1e-9
# consecutive non-improving pivots before switching to Bland's rule
STALL_LIMIT = 200
MAX_PIVOTS = 200_000


class LPInfeasibleError(PcnError):
    """The LP has no feasible point (a malformed formulation, not user error)."""


class LPUnboundedError(PcnError):
    """The LP objective is unbounded below."""


class Relation(Enum):
    LE = "<="
    GE = ">="
    EQ = "="


@dataclass
class LinearProgram:
    """Minimisation LP over non-negative variables with optional upper bounds."""

    names: list[str] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    objective_const: float = 0.0
    constraints: list[tuple[dict[int, float], Relation, float]] = field(default_factory=list)
    upper: dict[int, float] = field(default_factory=dict)

    def add_var(self, name: str, obj: float = 0.0, upper: float | None = None) -> int:
        idx = len(self.names)
        self.names.append(name)
        if obj:
            self.objective[idx] = obj
        if upper is not None:
            self.upper[idx] = upper
        return idx

    def add_constraint(self, coeffs: dict[int, float], rel: Relation, rhs: float) -> None:
        self.constraints.append(({v: c for v, c in coeffs.items() if c != 0.0}, rel, rhs))

    @property
    def var_count(self) -> int:
        return len(self.names)


@dataclass
class LPSolution:
    objective: float
    values: np.ndarray

    def value(self, idx: int) -> float:
        return float(self.values[idx])


def solve(lp: LinearProgram) -> LPSolution:
    """Return an optimal basic solution, deterministic for a fixed input."""
    rows: list[dict[int, float] | None] = [dict(c) for c, _, _ in lp.constraints]
    rels = [r for _, r, _ in lp.constraints]
    rhss = [b for _, _, b in lp.constraints]
    obj = dict(lp.objective)
    obj_const = lp.objective_const

    occ: dict[int, set[int]] = {}
    for ri, row in enumerate(rows):
        for v in row:
            occ.setdefault(v, set()).add(ri)

    def _append_row(row: dict[int, float], rel: Relation, rhs: float) -> None:
        rows.append(dict(row))
        rels.append(rel)
        rhss.append(rhs)
        for v in row:
            occ.setdefault(v, set()).add(len(rows) - 1)

    # --- presolve: eliminate each equality row via its newest unit variable ---
    defs: list[tuple[int, float, dict[int, float]]] = []  # var = const + expr
    eliminated: set[int] = set()
    ri = 0
    while ri < len(rows):
        row = rows[ri]
        if row is None or rels[ri] is not Relation.EQ:
            ri += 1
            continue
        pivot = None
        for v in sorted(row, reverse=True):
            if abs(abs(row[v]) - 1.0) < TOL:
                pivot = v
                break
        if pivot is None:
            ri += 1
            continue
        coef = row.pop(pivot)
        const = rhss[ri] / coef
        expr = {v: -c / coef for v, c in row.items()}
        rows[ri] = None
        occ[pivot].discard(ri)
        for v in row:
            occ[v].discard(ri)
        _substitute(pivot, const, expr, rows, rhss, occ)
        if pivot in obj:
            c = obj.pop(pivot)
            obj_const += c * const
            for v, e in expr.items():
                obj[v] = obj.get(v, 0.0) + c * e
        # the eliminated variable keeps its bounds as inequality rows, which
        # stay live so later substitutions still reach them
        _append_row(expr, Relation.GE, -const)
        if pivot in lp.upper:
            _append_row(expr, Relation.LE, lp.upper[pivot] - const)
        defs.append((pivot, const, expr))
        eliminated.add(pivot)
        ri += 1

    reduced: list[tuple[dict[int, float], Relation, float]] = []
    survivors = [
        (row, rel, rhs)
        for row, rel, rhs in zip(rows, rels, rhss)
        if row is not None
    ]
    for row, rel, rhs in survivors:
        row = {v: c for v, c in row.items() if abs(c) > TOL}
        if not row:
            bad = (
                (rel is Relation.EQ and abs(rhs) > 1e-7)
                or (rel is Relation.LE and rhs < -1e-7)
                or (rel is Relation.GE and rhs > 1e-7)
            )
            if bad:
                raise LPInfeasibleError("constant row violated after presolve")
            continue
        reduced.append((row, rel, rhs))

    keep = sorted(v for v in range(lp.var_count) if v not in eliminated)
    col_of = {v: j for j, v in enumerate(keep)}
    for v in keep:
        if v in lp.upper:
            reduced.append(({v: 1.0}, Relation.LE, lp.upper[v]))

    values = np.zeros(lp.var_count)
    if keep:
        core = _tableau_solve(
            [
                ({col_of[v]: c for v, c in row.items()}, rel, rhs)
                for row, rel, rhs in reduced
            ],
            {col_of[v]: c for v, c in obj.items() if v not in eliminated and abs(c) > 0},
            len(keep),
        )
        for v, j in col_of.items():
            values[v] = core[j]

    for v, const, expr in reversed(defs):
        values[v] = const + sum(c * values[w] for w, c in expr.items())

    objective = lp.objective_const + sum(c * values[v] for v, c in lp.objective.items())
    return LPSolution(objective=float(objective), values=values)


def _substitute(
    var: int,
    const: float,
    expr: dict[int, float],
    rows: list[dict[int, float] | None],
    rhss: list[float],
    occ: dict[int, set[int]],
) -> None:
    touched = occ.pop(var, set())
    for rj in touched:
        row = rows[rj]
        if row is None or var not in row:
            continue
        c = row.pop(var)
        rhss[rj] -= c * const
        for w, e in expr.items():
            nv = row.get(w, 0.0) + c * e
            if abs(nv) > TOL:
                row[w] = nv
                occ.setdefault(w, set()).add(rj)
            elif w in row:
                del row[w]
                occ[w].discard(rj)


def _tableau_solve(
    rows: list[tuple[dict[int, float], Relation, float]],
    obj: dict[int, float],
    n: int,
) -> np.ndarray:
    """Two-phase simplex over rows indexed by variables 0..n-1 (all >= 0)."""
    if not rows:
        if any(c < -TOL for c in obj.values()):
            raise LPUnboundedError("negative cost with no constraints")
        return np.zeros(n)

    # normalise: GE -> LE by negation, then flip signs so every rhs >= 0
    prepared: list[tuple[dict[int, float], bool, float]] = []  # (row, is_eq, rhs)
    for row, rel, rhs in rows:
        if rel is Relation.GE:
            row = {v: -c for v, c in row.items()}
            rhs = -rhs
            rel = Relation.LE
        prepared.append((row, rel is Relation.EQ, rhs))

    m = len(prepared)
    n_slack = sum(1 for _, is_eq, _ in prepared if not is_eq)
    needs_art = [is_eq or rhs < 0 for _, is_eq, rhs in prepared]
    n_art = sum(needs_art)
    width = n + n_slack + n_art + 1
    T = np.zeros((m, width))
    basis = np.empty(m, dtype=int)

    slack_j = n
    art_j = n + n_slack
    for i, (row, is_eq, rhs) in enumerate(prepared):
        sign = -1.0 if rhs < 0 else 1.0
        for v, c in row.items():
            T[i, v] = sign * c
        T[i, -1] = sign * rhs
        if not is_eq:
            T[i, slack_j] = sign
            if sign > 0:
                basis[i] = slack_j
            slack_j += 1
        if needs_art[i]:
            T[i, art_j] = 1.0
            basis[i] = art_j
            art_j += 1

    total_cols = width - 1
    if n_art:
        cost1 = np.zeros(total_cols)
        cost1[n + n_slack:] = 1.0
        _optimize(T, basis, cost1, total_cols)
        if _objective_value(T, basis, cost1) > 1e-7:
            raise LPInfeasibleError("phase 1 failed to zero the artificials")
        _drive_out_artificials(T, basis, n + n_slack)

    cost2 = np.zeros(total_cols)
    for v, c in obj.items():
        cost2[v] = c
    _optimize(T, basis, cost2, n + n_slack)  # artificials may not re-enter

    x = np.zeros(n)
    for i, b in enumerate(basis):
        if b < n:
            x[b] = T[i, -1]
    np.clip(x, 0.0, None, out=x)
    return x


def _objective_value(T: np.ndarray, basis: np.ndarray, cost: np.ndarray) -> float:
    return float(cost[basis] @ T[:, -1])


def _optimize(T: np.ndarray, basis: np.ndarray, cost: np.ndarray, ncols: int) -> None:
    stall = 0
    bland = False
    last = _objective_value(T, basis, cost)
    for _ in range(MAX_PIVOTS):
        red = cost[:ncols] - cost[basis] @ T[:, :ncols]
        neg = np.flatnonzero(red < -TOL)
        if neg.size == 0:
            return
        if bland:
            j = int(neg[0])
        else:
            j = int(neg[np.argmin(red[neg])])
        col = T[:, j]
        pos = np.flatnonzero(col > TOL)
        if pos.size == 0:
            raise LPUnboundedError(f"column {j} is unbounded")
        ratios = T[pos, -1] / col[pos]
        best = np.min(ratios)
        cand = pos[ratios <= best + TOL]
        # smallest basis index among ties keeps Bland's rule valid
        r = int(cand[np.argmin(basis[cand])])
        _pivot(T, basis, r, j)
        now = _objective_value(T, basis, cost)
        if now < last - 1e-12:
            stall = 0
            last = now
        else:
            stall += 1
            if stall >= STALL_LIMIT:
                bland = True
    raise PcnError("simplex exceeded the pivot limit")


def _pivot(T: np.ndarray, basis: np.ndarray, r: int, j: int) -> None:
    T[r, :] /= T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r, :])
    basis[r] = j


def _drive_out_artificials(T: np.ndarray, basis: np.ndarray, first_art: int) -> None:
    for i in range(T.shape[0]):
        if basis[i] >= first_art:
            row = T[i, :first_art]
            nz = np.flatnonzero(np.abs(row) > TOL)
            if nz.size:
                _pivot(T, basis, i, int(nz[0]))
            # otherwise the row is redundant; the artificial stays basic at 0
