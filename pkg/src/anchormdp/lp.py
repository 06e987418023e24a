"""Minimal linear-programming contract shared by every optimization module.

Wraps scipy's HiGHS backend behind a small immutable program description so
solver choice stays in one place. All variables live in [0, 1]: that is the
only bound shape the perturbation programs ever need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

FEASIBILITY_TOL = 1e-7
SNAP_TOL = 1e-12  # values below this are snapped to 0 before ratio checks


@dataclass(frozen=True)
class LinearProgram:
    """min c @ x  s.t.  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  0 <= x <= 1."""

    n_vars: int
    c: np.ndarray
    a_ub: sparse.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    a_eq: sparse.csr_matrix | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        if len(self.c) != self.n_vars:
            raise ValueError("objective length mismatch")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective coefficients must be finite")
        for a, b, name in ((self.a_ub, self.b_ub, "ub"), (self.a_eq, self.b_eq, "eq")):
            if (a is None) != (b is None):
                raise ValueError(f"A_{name} and b_{name} must come together")
            if a is not None:
                if a.shape[1] != self.n_vars:
                    raise ValueError(f"A_{name} column count mismatch")
                if not np.all(np.isfinite(a.data)) or not np.all(np.isfinite(b)):
                    raise ValueError(f"{name} constraints must be finite")

    @property
    def inequality_count(self) -> int:
        return 0 if self.a_ub is None else self.a_ub.shape[0]

    @property
    def equality_count(self) -> int:
        return 0 if self.a_eq is None else self.a_eq.shape[0]


@dataclass(frozen=True)
class LpSolution:
    status: str  # optimal | infeasible | unbounded | numeric-failure
    x: np.ndarray | None
    objective: float | None

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


_STATUS = {0: "optimal", 1: "numeric-failure", 2: "infeasible", 3: "unbounded", 4: "numeric-failure"}


def solve(lp: LinearProgram) -> LpSolution:
    """Solve the program; infeasibility is reported in the status, never raised."""
    res = linprog(
        c=lp.c,
        A_ub=lp.a_ub,
        b_ub=lp.b_ub,
        A_eq=lp.a_eq,
        b_eq=lp.b_eq,
        bounds=(0.0, 1.0),
        method="highs",
        options={"presolve": True, "primal_feasibility_tolerance": 1e-9},
    )
    status = _STATUS.get(res.status, "numeric-failure")
    if status != "optimal":
        return LpSolution(status=status, x=None, objective=None)
    x = np.asarray(res.x, dtype=float)
    x[np.abs(x) < SNAP_TOL] = 0.0
    np.clip(x, 0.0, 1.0, out=x)
    return LpSolution(status="optimal", x=x, objective=float(res.fun))


def refine_vertex(lp: LinearProgram, x: np.ndarray, active_tol: float = 1e-6) -> np.ndarray:
    """Polish a solver vertex by re-solving its active constraint system.

    Identifies the constraints active at ``x`` and solves them as an exact
    linear system in least-squares sense; falls back to ``x`` unchanged if
    the refit drifts or the system is degenerate. Used where downstream
    checks need residuals at machine precision rather than solver tolerance.
    """
    rows = []
    rhs = []
    if lp.a_eq is not None:
        a = lp.a_eq.toarray()
        rows.extend(a)
        rhs.extend(np.asarray(lp.b_eq, dtype=float))
    if lp.a_ub is not None:
        a = lp.a_ub.toarray()
        resid = a @ x - lp.b_ub
        for i in np.nonzero(resid > -active_tol)[0]:
            rows.append(a[i])
            rhs.append(float(lp.b_ub[i]))
    for j in range(lp.n_vars):
        if x[j] < active_tol:
            e = np.zeros(lp.n_vars)
            e[j] = 1.0
            rows.append(e)
            rhs.append(0.0)
        elif x[j] > 1.0 - active_tol:
            e = np.zeros(lp.n_vars)
            e[j] = 1.0
            rows.append(e)
            rhs.append(1.0)
    if not rows:
        return x
    a = np.vstack(rows)
    b = np.asarray(rhs)
    refined, *_ = np.linalg.lstsq(a, b, rcond=None)
    if np.max(np.abs(refined - x)) > 1e-4:
        return x
    refined = np.clip(refined, 0.0, 1.0)
    refined[np.abs(refined) < SNAP_TOL] = 0.0
    return refined


def to_lp_text(lp: LinearProgram, name: str = "program") -> str:
    """Render in a CPLEX-LP-style text format for offline debugging."""
    lines = [f"\\ {name}", "Minimize", " obj: " + _expr(lp.c)]
    lines.append("Subject To")
    if lp.a_ub is not None:
        coo = lp.a_ub.tocoo()
        by_row: dict[int, list[str]] = {}
        for r, c, v in zip(coo.row, coo.col, coo.data):
            by_row.setdefault(int(r), []).append(_term(v, int(c)))
        for r in sorted(by_row):
            lines.append(f" ub{r}: " + " ".join(by_row[r]) + f" <= {lp.b_ub[r]!r}")
    if lp.a_eq is not None:
        coo = lp.a_eq.tocoo()
        by_row = {}
        for r, c, v in zip(coo.row, coo.col, coo.data):
            by_row.setdefault(int(r), []).append(_term(v, int(c)))
        for r in sorted(by_row):
            lines.append(f" eq{r}: " + " ".join(by_row[r]) + f" = {lp.b_eq[r]!r}")
    lines.append("Bounds")
    lines.extend(f" 0 <= x{j} <= 1" for j in range(lp.n_vars))
    lines.append("End")
    return "\n".join(lines) + "\n"


def _term(v: float, j: int) -> str:
    sign = "+" if v >= 0 else "-"
    return f"{sign} {abs(v)!r} x{j}"


def _expr(c: np.ndarray) -> str:
    return " ".join(_term(float(v), j) for j, v in enumerate(c) if v != 0.0) or "0 x0"
