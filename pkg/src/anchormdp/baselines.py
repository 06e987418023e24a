"""Reference mechanisms: exponential mechanism, Bayesian remapping,
full-domain LP, and the coarse-grid LP approximation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import lp
from .anpo import EXPONENT_CAP
from .domain import (
    CostMatrix,
    DomainError,
    PerturbationMatrix,
    SecretDomain,
    euclidean_matrix,
    haversine_matrix,
)


def em_matrix(domain: SecretDomain, epsilon: float, scale_factor: float = 1.0) -> PerturbationMatrix:
    """Exponential mechanism rows: z[x, y] proportional to exp(-s*eps*d(x, y)).

    The conventional geo form uses ``scale_factor=1``; ``scale_factor=0.5``
    is the setting for which the normalized discrete mechanism provably
    satisfies the distance-scaled ratio bound (both the score gap and the
    normalizer ratio are each within exp(eps*d/2)).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    d = domain.distances[:, domain.outputs]
    scores = np.exp(-scale_factor * epsilon * d)
    rows = scores / scores.sum(axis=1, keepdims=True)
    return PerturbationMatrix(rows=rows)


@dataclass(frozen=True)
class RemapTable:
    """Post-processing map y -> y' chosen to minimize posterior expected cost."""

    mapping: np.ndarray

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """Push a perturbation matrix through the remap."""
        out = np.zeros_like(rows)
        for y, target in enumerate(self.mapping):
            out[:, target] += rows[:, y]
        return out


def bayesian_remap(domain: SecretDomain, z: PerturbationMatrix, cost: CostMatrix) -> RemapTable:
    """Optimal decision-side remapping under the posterior induced by ``z``.

    For each output y with positive marginal, the posterior over true
    records is prior-weighted by column y; the remapped output minimizes
    its expected cost, ties broken by the lowest output index. Outputs that
    can never occur map to themselves.
    """
    p = domain.priors
    joint = p[:, None] * z.rows  # (K, Y)
    marginal = joint.sum(axis=0)
    n_out = z.rows.shape[1]
    mapping = np.arange(n_out)
    positive = marginal > 0
    if np.any(positive):
        post = joint[:, positive] / marginal[positive]
        expected = post.T @ cost.costs  # (Y+, Y')
        mapping[positive] = np.argmin(expected, axis=1)
    return RemapTable(mapping=mapping)


def full_lp(domain: SecretDomain, epsilon: float, cost: CostMatrix) -> PerturbationMatrix:
    """Optimal perturbation matrix over the whole domain.

    Minimizes expected utility loss subject to the pairwise ratio
    constraints ``z[x, y] <= exp(eps*d(x, x')) * z[x', y]`` for all ordered
    record pairs and every output, with rows summing to one. Exponents are
    capped where they exceed what double precision can make bind.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    k = domain.size
    n_out = len(domain.outputs)
    program = _ratio_program(
        np.minimum(epsilon * domain.distances, EXPONENT_CAP),
        domain.priors[:, None] * cost.costs,
    )
    sol = lp.solve(program)
    if not sol.is_optimal:
        raise RuntimeError(f"full LP not solved to optimality: {sol.status}")
    return PerturbationMatrix(rows=sol.x.reshape(k, n_out))


def _ratio_program(exponent: np.ndarray, weighted_cost: np.ndarray) -> lp.LinearProgram:
    """Assemble min sum(w*c*z) s.t. ratio constraints for all ordered pairs."""
    k, n_out = weighted_cost.shape
    n_vars = k * n_out
    pairs = [(x, xp) for x in range(k) for xp in range(k) if x != xp]
    n_rows = len(pairs) * n_out
    rows = np.empty(2 * n_rows, dtype=np.int64)
    cols = np.empty(2 * n_rows, dtype=np.int64)
    data = np.empty(2 * n_rows)
    y = np.arange(n_out)
    r0 = 0
    for x, xp in pairs:
        idx = np.arange(r0, r0 + n_out)
        rows[2 * r0 : 2 * r0 + n_out] = idx
        cols[2 * r0 : 2 * r0 + n_out] = x * n_out + y
        data[2 * r0 : 2 * r0 + n_out] = 1.0
        rows[2 * r0 + n_out : 2 * (r0 + n_out)] = idx
        cols[2 * r0 + n_out : 2 * (r0 + n_out)] = xp * n_out + y
        data[2 * r0 + n_out : 2 * (r0 + n_out)] = -math.exp(exponent[x, xp])
        r0 += n_out
    a_ub = sparse.csr_matrix((data, (rows, cols)), shape=(n_rows, n_vars))
    eq_rows = np.repeat(np.arange(k), n_out)
    a_eq = sparse.csr_matrix((np.ones(n_vars), (eq_rows, np.arange(n_vars))), shape=(k, n_vars))
    return lp.LinearProgram(
        n_vars=n_vars,
        c=weighted_cost.ravel(),
        a_ub=a_ub,
        b_ub=np.zeros(n_rows),
        a_eq=a_eq,
        b_eq=np.ones(k),
    )


@dataclass(frozen=True)
class GridPartition:
    """Rows x cols partition of the bounding box, nonempty cells only."""

    dims: tuple[int, int]
    assignment: np.ndarray  # record -> position into ``representatives``
    representatives: np.ndarray  # (n_cells, 2) member centroids
    cell_ids: np.ndarray  # flat grid ids of the nonempty cells


def grid_partition(domain: SecretDomain, dims: tuple[int, int]) -> GridPartition:
    rows_n, cols_n = dims
    if rows_n < 1 or cols_n < 1:
        raise DomainError("grid dims must be at least 1x1")
    pts = domain.records
    cell_r = _axis_cells(pts[:, 0], rows_n)
    cell_c = _axis_cells(pts[:, 1], cols_n)
    flat = cell_r * cols_n + cell_c
    cell_ids, assignment = np.unique(flat, return_inverse=True)
    reps = np.vstack(
        [pts[assignment == c].mean(axis=0) for c in range(len(cell_ids))]
    )
    return GridPartition(
        dims=dims, assignment=assignment, representatives=reps, cell_ids=cell_ids
    )


def _axis_cells(coord: np.ndarray, n: int) -> np.ndarray:
    lo, hi = coord.min(), coord.max()
    if hi == lo:
        return np.zeros(len(coord), dtype=np.int64)
    edges = np.linspace(lo, hi, n + 1)
    # a point exactly on an interior boundary joins the lower-index cell
    idx = np.searchsorted(edges, coord, side="left") - 1
    return np.clip(idx, 0, n - 1)


def coarse_lp(
    domain: SecretDomain,
    grid_dims: tuple[int, int],
    epsilon: float,
    cost: CostMatrix,
) -> tuple[PerturbationMatrix, GridPartition]:
    """Solve the full LP over grid-cell representatives.

    Each record is approximated by its cell: cell priors add up the member
    priors, costs and pairwise distances are taken from the cell
    representative, and every member perturbs through its cell's row.
    """
    part = grid_partition(domain, grid_dims)
    n_cells = len(part.cell_ids)
    cell_priors = np.zeros(n_cells)
    np.add.at(cell_priors, part.assignment, domain.priors)

    metric = haversine_matrix if domain.metric == "haversine-km" else euclidean_matrix
    both = np.vstack([part.representatives, domain.records[domain.outputs]])
    full = metric(both)
    cell_dist = full[:n_cells, :n_cells]
    if cost.mode == "direct-distance":
        cell_cost = full[:n_cells, n_cells:]
    else:
        # discrepancy of representative-to-task travel against each output
        trav_rep = _travel(metric, part.representatives, cost.task_points)
        trav_out = _travel(metric, domain.records[domain.outputs], cost.task_points)
        diff = np.abs(trav_rep[:, None, :] - trav_out[None, :, :])
        cell_cost = (diff * cost.task_weights[None, None, :]).sum(axis=-1)

    program = _ratio_program(
        np.minimum(epsilon * cell_dist, EXPONENT_CAP), cell_priors[:, None] * cell_cost
    )
    sol = lp.solve(program)
    if not sol.is_optimal:
        raise RuntimeError(f"coarse LP not solved to optimality: {sol.status}")
    rows = sol.x.reshape(n_cells, -1)
    return PerturbationMatrix(rows=rows, row_index=np.arange(n_cells)), part


def _travel(metric, points: np.ndarray, tasks: np.ndarray) -> np.ndarray:
    both = np.vstack([points, tasks])
    return metric(both)[: len(points), len(points):]


def records_rows(matrix: PerturbationMatrix, part: GridPartition) -> np.ndarray:
    """Per-record effective rows of a coarse mechanism (the cell rows)."""
    return matrix.rows[part.assignment]
