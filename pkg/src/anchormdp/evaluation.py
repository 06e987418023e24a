"""Metrics: expected utility loss, empirical ratio-violation rate, budget
allocation, LP-size statistics, and clustering coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anpo import AnpoProblem
from .domain import CostMatrix, SecretDomain
from .lp import LinearProgram
from .margins import SafetyMarginPlan

VIOLATION_TOL = 1e-9  # absolute slack absorbing solver feasibility noise
_EXP_ARG_MAX = 700.0  # beyond this exp() overflows; the bound is monotone so capping is safe


def expected_utility_loss(
    rows: np.ndarray, priors: np.ndarray, cost: CostMatrix, records: np.ndarray | None = None
) -> float:
    """sum_x p_x sum_y c[x, y] z[x, y] for effective per-record rows.

    ``records`` selects which cost/prior rows the effective rows belong to
    (default: all, in order); priors are renormalized over that subset so
    mechanisms evaluated on a user sample stay comparable.
    """
    if records is None:
        records = np.arange(cost.costs.shape[0])
    p = priors[records]
    p = p / p.sum()
    c = cost.costs[records]
    return float(np.einsum("x,xy,xy->", p, c, rows))


def ratio_violations(
    rows_n: np.ndarray, rows_m: np.ndarray, bound_exponent: float, tol: float = VIOLATION_TOL
) -> bool:
    """True if some output breaks z_n[y] <= exp(bound) * z_m[y] + tol."""
    factor = math.exp(min(bound_exponent, _EXP_ARG_MAX))
    return bool(np.any(rows_n > factor * rows_m + tol))


def pair_violates(
    rows: np.ndarray, x_n: int, x_m: int, epsilon: float, dist: np.ndarray
) -> bool:
    """Check the distance-scaled ratio condition in both directions."""
    e = epsilon * float(dist[x_n, x_m])
    return ratio_violations(rows[x_n], rows[x_m], e) or ratio_violations(rows[x_m], rows[x_n], e)


def empirical_violation_rate(
    mechanism,
    domain: SecretDomain,
    epsilon: float,
    user_pairs,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of (pair, trial) samples whose effective rows break the bound.

    Each trial asks the mechanism for fresh effective per-record rows
    (static mechanisms return the same matrix; anchor mechanisms redraw
    anchor sets and re-solve). A pair counts as violating if either ordered
    direction fails for any output.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    user_pairs = list(user_pairs)
    if not user_pairs:
        raise ValueError("need at least one user pair")
    bad = 0
    for _ in range(trials):
        rows = mechanism.privacy_rows(rng)
        for x_n, x_m in user_pairs:
            if pair_violates(rows, x_n, x_m, epsilon, domain.distances):
                bad += 1
    return bad / (trials * len(user_pairs))


@dataclass
class BudgetBreakdown:
    """Per-pair split of eps*d into Phase-I cost, margin, and Phase-II budget."""

    phase1: float
    margin: float
    phase2: float
    exhausted_pairs: list = field(default_factory=list)
    per_pair: list = field(default_factory=list)


def budget_allocation(
    domain: SecretDomain,
    eps_bar_table: np.ndarray,
    margin_plan: SafetyMarginPlan,
    epsilon: float,
    pairs,
) -> BudgetBreakdown:
    """Average budget shares over the given record pairs.

    Per pair the Phase-I share is eps_bar/eps, the margin share is
    xi/(eps*d), and Phase-II keeps the remainder; pairs whose remainder is
    negative are reported separately instead of entering the averages.
    """
    rows = []
    exhausted = []
    for x, xp in pairs:
        d = float(domain.distances[x, xp])
        total = epsilon * d
        p1 = float(eps_bar_table[x, xp]) * d / total
        m = margin_plan.margin(x, xp).xi / total
        p2 = 1.0 - p1 - m
        if p2 < 0:
            exhausted.append((x, xp, p1, m))
        else:
            rows.append((x, xp, p1, m, p2))
    if rows:
        arr = np.array([r[2:] for r in rows])
        means = arr.mean(axis=0)
    else:
        means = np.array([math.nan, math.nan, math.nan])
    return BudgetBreakdown(
        phase1=float(means[0]),
        margin=float(means[1]),
        phase2=float(means[2]),
        exhausted_pairs=exhausted,
        per_pair=rows,
    )


def clustering_coefficient(
    distances: np.ndarray, threshold: float, indices: np.ndarray | None = None
) -> float:
    """Mean local clustering coefficient of the distance-threshold graph.

    Adjacency connects pairs strictly below the threshold (diagonal
    cleared); a node with fewer than two neighbors contributes zero.
    ``indices`` restricts the graph to a subset of records.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    d = distances
    if indices is not None:
        idx = np.asarray(indices)
        d = d[np.ix_(idx, idx)]
    adj = (d < threshold).astype(float)
    np.fill_diagonal(adj, 0.0)
    deg = adj.sum(axis=1)
    # closed triangles through each node: diag(A^3) / 2
    tri = np.diag(adj @ adj @ adj) / 2.0
    denom = deg * (deg - 1) / 2.0
    coeff = np.where(denom > 0, tri / np.where(denom > 0, denom, 1.0), 0.0)
    return float(coeff.mean())


@dataclass(frozen=True)
class LpSizeStats:
    variables: int
    inequalities: int
    equalities: int
    anchor_fraction: float | None = None


def lp_size_stats(problem) -> LpSizeStats:
    """Formulation sizes; for anchor problems these are the pre-merge counts."""
    if isinstance(problem, AnpoProblem):
        return LpSizeStats(
            variables=problem.variable_count,
            inequalities=problem.inequality_count,
            equalities=problem.equality_count,
            anchor_fraction=problem.anchor_fraction,
        )
    if isinstance(problem, LinearProgram):
        return LpSizeStats(
            variables=problem.n_vars,
            inequalities=problem.inequality_count,
            equalities=problem.equality_count,
        )
    raise TypeError(f"unsupported problem type {type(problem)!r}")


@dataclass
class ExperimentReport:
    """One (mechanism, repeat) evaluation row."""

    mechanism: str
    seed: int
    repeat: int
    utility_loss_km: float
    violation_rate: float | None = None
    phase1_share: float | None = None
    margin_share: float | None = None
    phase2_share: float | None = None
    lp_variables: int | None = None
    lp_inequalities: int | None = None
    anchor_fraction: float | None = None

    @property
    def utility_loss_m(self) -> float:
        return self.utility_loss_km * 1000.0

    CSV_HEADER = (
        "mechanism,seed,repeat,utility_loss_m,violation_rate,"
        "phase1_share,margin_share,phase2_share,"
        "lp_variables,lp_inequalities,anchor_fraction"
    )

    def csv_row(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return ",".join(
            fmt(v)
            for v in (
                self.mechanism,
                self.seed,
                self.repeat,
                self.utility_loss_m,
                self.violation_rate,
                self.phase1_share,
                self.margin_share,
                self.phase2_share,
                self.lp_variables,
                self.lp_inequalities,
                self.anchor_fraction,
            )
        )
