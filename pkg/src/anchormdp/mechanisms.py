"""Mechanism objects shared by the evaluation harness and the CLI.

Every mechanism yields effective per-record rows: ``privacy_rows`` feeds
the ratio-violation measurement, ``utility_rows`` feeds the loss metric
(they differ only for decision-side post-processing, which is measured for
utility but not credited for privacy).
"""

from __future__ import annotations

import numpy as np

from . import anpo, baselines
from .anchors import AnchorPolicy, epsilon_bar_table, sample_anchor_set, weight_matrix
from .domain import CostMatrix, SecretDomain
from .margins import SafetyMarginPlan, build_margin_plan, build_margin_tables


class StaticMechanism:
    """Mechanism whose effective rows are fixed once built."""

    def __init__(self, name: str, rows: np.ndarray, utility_rows: np.ndarray | None = None):
        self.name = name
        self._rows = rows
        self._utility_rows = rows if utility_rows is None else utility_rows

    def privacy_rows(self, rng=None) -> np.ndarray:
        return self._rows

    def utility_rows(self, rng=None) -> np.ndarray:
        return self._utility_rows


def make_em(domain: SecretDomain, epsilon: float, scale_factor: float = 1.0) -> StaticMechanism:
    rows = baselines.em_matrix(domain, epsilon, scale_factor).rows
    return StaticMechanism("em", rows)


def make_em_br(
    domain: SecretDomain, epsilon: float, cost: CostMatrix, scale_factor: float = 1.0
) -> StaticMechanism:
    z = baselines.em_matrix(domain, epsilon, scale_factor)
    remap = baselines.bayesian_remap(domain, z, cost)
    # privacy is measured on the pre-remap mechanism; remapping is
    # post-processing and only enters the utility side
    return StaticMechanism("em-br", z.rows, utility_rows=remap.apply(z.rows))


def make_full_lp(domain: SecretDomain, epsilon: float, cost: CostMatrix) -> StaticMechanism:
    rows = baselines.full_lp(domain, epsilon, cost).rows
    return StaticMechanism("lp-full", rows)


def make_grid_lp(
    domain: SecretDomain, epsilon: float, cost: CostMatrix, dims: tuple[int, int] = (8, 8)
) -> StaticMechanism:
    matrix, part = baselines.coarse_lp(domain, dims, epsilon, cost)
    rows = baselines.records_rows(matrix, part)
    return StaticMechanism("lp-grid", rows)


class AnchorMechanism:
    """The two-phase anchor mechanism for a fixed user population.

    Each call to ``privacy_rows``/``utility_rows`` runs a full round: every
    user redraws an anchor set, missing margins are computed (the plan is
    cached across rounds — margins depend only on domain, policy, and
    budgets), the anchor LP is rebuilt and re-solved, and each user's
    effective row is their surrogate's row. Rows of non-participating
    records are zero; only user records are meaningful.
    """

    def __init__(
        self,
        domain: SecretDomain,
        policy: AnchorPolicy,
        epsilon: float,
        delta: float,
        cost: CostMatrix,
        users,
        gamma_nn: int = 10,
        include_same_user: bool = True,
        exhausted: str = "clip",
        name: str | None = None,
    ):
        self.domain = domain
        self.policy = policy
        self.epsilon = epsilon
        self.delta = delta
        self.cost = cost
        self.users = np.asarray(list(users), dtype=np.int64)
        self.gamma_nn = gamma_nn
        self.include_same_user = include_same_user
        self.exhausted = exhausted
        self.name = name or f"anchor-{policy.family}"
        self.tables = build_margin_tables(domain, policy, epsilon)
        self.eps_bar = self.tables.eps_bar
        self.plan = SafetyMarginPlan(gamma_nn=gamma_nn, delta=delta, epsilon=epsilon)
        self.weights = weight_matrix(policy, domain)
        self.last_problem: anpo.AnpoProblem | None = None
        self.last_sets = None
        self.last_matrix = None

    def run_round(self, rng: np.random.Generator):
        """One full two-phase round; returns (anchor sets, solved matrix)."""
        sets = [
            sample_anchor_set(self.policy, self.domain, int(u), rng, weights=self.weights[int(u)])
            for u in self.users
        ]
        union = anpo.anchor_union(sets)
        pairs = [
            (int(union[i]), int(union[j]))
            for i in range(len(union))
            for j in range(i + 1, len(union))
        ]
        build_margin_plan(
            self.tables, pairs, gamma_nn=self.gamma_nn, delta=self.delta, plan=self.plan
        )
        problem = anpo.build_anpo(
            self.domain,
            sets,
            self.epsilon,
            self.eps_bar,
            self.plan,
            self.cost,
            include_same_user=self.include_same_user,
            exhausted=self.exhausted,
        )
        matrix = anpo.solve_anpo(problem)
        self.last_problem, self.last_sets, self.last_matrix = problem, sets, matrix
        return sets, matrix

    def privacy_rows(self, rng: np.random.Generator) -> np.ndarray:
        sets, matrix = self.run_round(rng)
        rows = np.zeros((self.domain.size, len(self.domain.outputs)))
        for u, s in zip(self.users, sets):
            surrogate = anpo.surrogate_of(self.domain, int(u), s)
            rows[int(u)] = matrix.row_of(surrogate)
        return rows

    utility_rows = privacy_rows


_GRID_DEFAULT = (8, 8)


def build_mechanism(
    kind: str,
    domain: SecretDomain,
    epsilon: float,
    delta: float,
    cost: CostMatrix,
    users,
    policy_params: dict | None = None,
    em_scale: float = 1.0,
    grid_dims: tuple[int, int] = _GRID_DEFAULT,
    gamma_nn: int = 10,
):
    """Factory keyed by CLI mechanism names."""
    if kind == "em":
        return make_em(domain, epsilon, em_scale)
    if kind == "em-br":
        return make_em_br(domain, epsilon, cost, em_scale)
    if kind == "lp-full":
        return make_full_lp(domain, epsilon, cost)
    if kind == "lp-grid":
        return make_grid_lp(domain, epsilon, cost, grid_dims)
    if kind.startswith("anchor-"):
        family = {"anchor-exp": "exponential", "anchor-power": "power-law", "anchor-logistic": "logistic"}[kind]
        params = dict(policy_params or {})
        params["family"] = family
        policy = AnchorPolicy(**params)
        return AnchorMechanism(
            domain, policy, epsilon, delta, cost, users, gamma_nn=gamma_nn, name=kind
        )
    raise ValueError(f"unknown mechanism {kind!r}")


MECHANISM_NAMES = ("em", "em-br", "lp-full", "lp-grid", "anchor-exp", "anchor-power", "anchor-logistic")
