"""Surrogate probabilities, success-probability bound, and safety margins.

The server cannot see which anchor stands in for a user's true record, so
it reserves a margin out of the Phase-II exponent budget. The margin for a
true pair is found by sweeping the sorted candidate-margin list while
accumulating the probability mass of surrogate pairs that become safe; the
server-side estimate takes a supremum of exact margins over neighborhoods
of the anchor pair, with the failure tolerance adjusted for the chance the
true records fall outside those neighborhoods.

All candidate margins for one true pair differ from the shared
"exponent budget" array E[x, x'] = (eps - eps_bar[x, x']) * d[x, x'] only
by a constant offset, so the sorted sweep order is global and computed
once per (domain, policy, epsilon).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .anchors import AnchorPolicy, weight_matrix
from .domain import SecretDomain

DEFAULT_GAMMA_NN = 10  # neighborhood size used by the estimated margin


class MarginError(ValueError):
    """Raised when the margin machinery's validity conditions fail."""


@dataclass(frozen=True)
class MarginTables:
    """Shared precomputation for one (domain, policy, epsilon) triple."""

    domain: SecretDomain
    policy: AnchorPolicy
    epsilon: float
    weights: np.ndarray  # (K, K) selection probabilities
    eps_bar: np.ndarray  # (K, K) Phase-I costs
    v: np.ndarray  # (K, K) surrogate probabilities
    v_gated: np.ndarray  # v zeroed where d >= gamma (membership gating)
    budget: np.ndarray  # E[x, x'] = (eps - eps_bar) * d
    valid: np.ndarray  # (K, K) bool, eps_bar < eps
    order: np.ndarray  # argsort of budget.ravel()
    order_i: np.ndarray
    order_j: np.ndarray
    e_sorted: np.ndarray
    valid_sorted: np.ndarray  # uint8 mask aligned with e_sorted


def build_margin_tables(domain: SecretDomain, policy: AnchorPolicy, epsilon: float) -> MarginTables:
    if epsilon <= 0:
        raise MarginError("epsilon must be positive")
    w = np.ascontiguousarray(weight_matrix(policy, domain))
    dist = np.ascontiguousarray(domain.distances)
    eps_bar = kernels.epsilon_bar_table(w, dist)
    v = kernels.surrogate_prob_table(w, dist)
    v_gated = np.where(dist < policy.gamma, v, 0.0)
    budget = (epsilon - eps_bar) * dist
    valid = eps_bar < epsilon
    k = domain.size
    order = np.argsort(budget.ravel(), kind="stable").astype(np.int64)
    return MarginTables(
        domain=domain,
        policy=policy,
        epsilon=epsilon,
        weights=w,
        eps_bar=eps_bar,
        v=v,
        v_gated=np.ascontiguousarray(v_gated),
        budget=budget,
        valid=valid,
        order=order,
        order_i=np.ascontiguousarray(order // k),
        order_j=np.ascontiguousarray(order % k),
        e_sorted=np.ascontiguousarray(budget.ravel()[order]),
        valid_sorted=np.ascontiguousarray(valid.ravel()[order].astype(np.uint8)),
    )


def surrogate_prob(policy: AnchorPolicy, domain: SecretDomain, x_q: int, xhat_q: int) -> float:
    """Probability that ``xhat_q`` is the surrogate of ``x_q``.

    The surrogate is the nearest selected anchor, ties broken by lower
    record index, so the event needs ``xhat_q`` selected and every
    strictly-closer record missed.
    """
    w = weight_matrix(policy, domain)[x_q]
    d = domain.distances[x_q]
    closer = (d < d[xhat_q]) | ((d == d[xhat_q]) & (np.arange(domain.size) < xhat_q))
    return float(w[xhat_q] * np.prod(1.0 - w[closer]))


def success_prob_h(
    domain: SecretDomain,
    policy: AnchorPolicy,
    x_n: int,
    x_m: int,
    xi: float,
    epsilon: float,
    tables: MarginTables | None = None,
) -> float:
    """Lower bound on the probability the realized surrogate pair is safe.

    Sums surrogate-pair probabilities over the set of anchor pairs whose
    exponent budget stays within the true pair's budget plus ``xi``; pairs
    beyond the selection threshold ``gamma`` or with Phase-I cost at or
    above ``epsilon`` never count.
    """
    t = tables if tables is not None else build_margin_tables(domain, policy, epsilon)
    bound = t.budget[x_n, x_m] + xi
    member = t.valid & (t.budget <= bound)
    wts = np.outer(t.v_gated[x_n], t.v_gated[x_m])
    return float(wts[member].sum())


@dataclass(frozen=True)
class CandidateMarginSet:
    """Sorted candidate margins for one true pair."""

    x_n: int
    x_m: int
    deltas: np.ndarray  # ascending, length K^2
    pair_i: np.ndarray  # candidate pair first coordinate, aligned with deltas
    pair_j: np.ndarray


def precompute_candidates(
    domain: SecretDomain,
    x_n: int,
    x_m: int,
    epsilon: float,
    tables: MarginTables | None = None,
    policy: AnchorPolicy | None = None,
) -> CandidateMarginSet:
    """All K^2 candidate margins for ``(x_n, x_m)``, sorted ascending."""
    if tables is None:
        if policy is None:
            raise MarginError("need either prebuilt tables or a policy")
        tables = build_margin_tables(domain, policy, epsilon)
    deltas = tables.e_sorted - tables.budget[x_n, x_m]
    return CandidateMarginSet(
        x_n=x_n,
        x_m=x_m,
        deltas=deltas,
        pair_i=tables.order_i,
        pair_j=tables.order_j,
    )


@dataclass(frozen=True)
class MarginSearchResult:
    xi: float
    feasible: bool  # False when no candidate reaches the target probability
    h_at_xi: float


def exact_margin_xi(
    candidates: CandidateMarginSet,
    tables: MarginTables,
    delta: float,
) -> MarginSearchResult:
    """Smallest candidate margin whose success bound reaches ``1 - delta``.

    Incremental linear scan: candidates enter in sorted order and each adds
    its surrogate-pair probability, so the bound is updated in O(1) per
    step instead of being recomputed. Tied candidates share one margin
    value and are folded together before the threshold test.
    """
    if not 0.0 < delta < 1.0:
        raise MarginError("delta must lie in (0, 1)")
    tau = 1.0 - delta
    va = tables.v_gated[candidates.x_n]
    vb = tables.v_gated[candidates.x_m]
    wts = va[candidates.pair_i] * vb[candidates.pair_j] * tables.valid_sorted
    acc = 0.0
    n = len(candidates.deltas)
    k = 0
    while k < n:
        gval = candidates.deltas[k]
        while k < n and candidates.deltas[k] == gval:
            acc += wts[k]
            k += 1
        if acc >= tau:
            return MarginSearchResult(xi=float(gval), feasible=True, h_at_xi=float(acc))
    return MarginSearchResult(xi=float(candidates.deltas[-1]), feasible=False, h_at_xi=float(acc))


def _neighborhoods(domain: SecretDomain, gamma_nn: int) -> np.ndarray:
    """Indices of the ``gamma_nn`` nearest records per record, ties by index."""
    k = domain.size
    if not 1 <= gamma_nn <= k:
        raise MarginError(f"neighborhood size must lie in [1, {k}]")
    idx = np.arange(k)
    out = np.empty((k, gamma_nn), dtype=np.int64)
    for x in range(k):
        out[x] = np.lexsort((idx, domain.distances[x]))[:gamma_nn]
    return out


def _containment_rows(tables: MarginTables, hoods: np.ndarray) -> np.ndarray:
    """qx[x] = posterior probability the true record lies in S_x given x anchored."""
    p = tables.domain.priors
    joint = p[:, None] * tables.weights  # joint[u, x] prop. to Pr[X = u, x anchored]
    post = joint / joint.sum(axis=0, keepdims=True)
    k = tables.domain.size
    return np.array([post[hoods[x], x].sum() for x in range(k)])


@dataclass
class PairMargin:
    xi: float
    delta_pair: float
    feasible: bool


@dataclass
class SafetyMarginPlan:
    """Estimated margins for a set of anchor pairs, keyed unordered."""

    gamma_nn: int
    delta: float
    epsilon: float
    pairs: dict[tuple[int, int], PairMargin] = field(default_factory=dict)
    neighborhoods: np.ndarray | None = None

    def margin(self, x: int, xp: int) -> PairMargin:
        return self.pairs[(x, xp) if x <= xp else (xp, x)]

    @property
    def infeasible_count(self) -> int:
        return sum(1 for m in self.pairs.values() if not m.feasible)

    def to_csv_rows(self):
        for (x, xp), m in sorted(self.pairs.items()):
            yield x, xp, m.xi, m.delta_pair, int(m.feasible)


def build_margin_plan(
    tables: MarginTables,
    pairs,
    gamma_nn: int = DEFAULT_GAMMA_NN,
    delta: float = 1e-7,
    plan: SafetyMarginPlan | None = None,
) -> SafetyMarginPlan:
    """Estimated margins for the given unordered record pairs.

    Per pair: the Gamma-nearest neighborhoods of both endpoints give the
    containment probability q; the per-pair tolerance is adjusted to
    ``1 - (1-delta)/q`` (requires q > 1-delta, otherwise the neighborhood
    is too small); the margin is the supremum of exact margins over
    neighborhood pairs, floored at zero. Queries for the same neighborhood
    pair are batched into a single sweep. An existing plan can be passed to
    reuse its entries across repeated draws.
    """
    if not 0.0 < delta < 1.0:
        raise MarginError("delta must lie in (0, 1)")
    if plan is None:
        plan = SafetyMarginPlan(gamma_nn=gamma_nn, delta=delta, epsilon=tables.epsilon)
    if plan.neighborhoods is None:
        plan.neighborhoods = _neighborhoods(tables.domain, gamma_nn)
    hoods = plan.neighborhoods
    qx = _containment_rows(tables, hoods)

    todo = []
    for x, xp in pairs:
        key = (x, xp) if x <= xp else (xp, x)
        if key not in plan.pairs and key not in todo:
            todo.append(key)
    if not todo:
        return plan

    # group the neighborhood-pair searches by inner pair so each (a, b)
    # needs one sweep regardless of how many anchor pairs reference it
    queries: dict[tuple[int, int], list[tuple[tuple[int, int], float]]] = {}
    taus = {}
    for key in todo:
        x, xp = key
        q = float(qx[x] * qx[xp])
        if q <= 1.0 - delta:
            raise MarginError(
                f"neighborhood containment probability {q:.6g} for pair {key} "
                f"does not exceed 1-delta; increase the neighborhood size"
            )
        tau = (1.0 - delta) / q
        taus[key] = tau
        for a in hoods[x]:
            for b in hoods[xp]:
                queries.setdefault((int(a), int(b)), []).append((key, tau))

    sup: dict[tuple[int, int], float] = {k: 0.0 for k in todo}
    feas: dict[tuple[int, int], bool] = {k: True for k in todo}
    # upper bound on any reachable h, for a cheap infeasibility exit
    sv = tables.v_gated.sum(axis=1)
    for (a, b), items in queries.items():
        tau_arr = np.array([t for _, t in items])
        if sv[a] * sv[b] < tau_arr.min():
            for key, _ in items:
                feas[key] = False
                sup[key] = max(sup[key], float(tables.e_sorted[-1] - tables.budget[a, b]))
            continue
        vals, ok = kernels.margin_search_multi(
            tables.e_sorted,
            tables.order_i,
            tables.order_j,
            tables.v_gated[a],
            tables.v_gated[b],
            tables.valid_sorted,
            np.ascontiguousarray(tau_arr),
        )
        xis = vals - tables.budget[a, b]
        for (key, _), xi, good in zip(items, xis, ok):
            sup[key] = max(sup[key], float(xi))
            if not good:
                feas[key] = False

    for key in todo:
        plan.pairs[key] = PairMargin(xi=sup[key], delta_pair=1.0 - taus[key], feasible=feas[key])
    return plan


def estimated_margin(
    domain: SecretDomain,
    policy: AnchorPolicy,
    x: int,
    xp: int,
    gamma_nn: int,
    delta: float,
    epsilon: float,
    tables: MarginTables | None = None,
) -> tuple[float, float]:
    """Server-side margin estimate and adjusted tolerance for one anchor pair."""
    t = tables if tables is not None else build_margin_tables(domain, policy, epsilon)
    plan = build_margin_plan(t, [(x, xp)], gamma_nn=gamma_nn, delta=delta)
    m = plan.margin(x, xp)
    return m.xi, m.delta_pair
