"""Pure-numpy implementations of the hot numerical kernels.

These are the reference semantics; ``_kernels_c`` is a compiled twin with
identical contracts. Keep the two in sync — the parity test suite compares
them element-wise.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def epsilon_bar_table(w: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Worst-case per-km disclosure cost of the anchor-selection step.

    For records ``n, m`` the cost is attained on one of the two
    weight-dominance sets: summing, per record ``x``, either the selected
    log-ratio ``log(w[n,x]/w[m,x])`` or the non-selected log-ratio
    ``log((1-w[n,x])/(1-w[m,x]))``, whichever is extremal. Entries of ``w``
    must lie strictly inside (0, 1). Diagonal is 0.
    """
    k = w.shape[0]
    logw = np.log(w)
    log1w = np.log1p(-w)
    out = np.zeros((k, k))
    for n in range(k):
        a = logw[n][None, :] - logw
        b = log1w[n][None, :] - log1w
        hi = np.maximum(a, b).sum(axis=1)
        lo = np.minimum(a, b).sum(axis=1)
        cost = np.maximum(hi, -lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[n] = cost / dist[n]
        out[n, n] = 0.0
    return out


def surrogate_prob_table(w: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Probability that record ``j`` ends up the surrogate of record ``i``.

    ``v[i, j] = w[i, j] * prod(1 - w[i, x])`` over records ``x`` strictly
    closer to ``i`` than ``j``; distance ties are broken by record index
    (lower index counts as closer).
    """
    k = w.shape[0]
    idx = np.arange(k)
    v = np.empty((k, k))
    for i in range(k):
        order = np.lexsort((idx, dist[i]))
        miss = np.concatenate(([1.0], np.cumprod(1.0 - w[i][order])[:-1]))
        v[i][order] = w[i][order] * miss
    return v


def margin_search_multi(
    e_sorted: np.ndarray,
    order_i: np.ndarray,
    order_j: np.ndarray,
    va: np.ndarray,
    vb: np.ndarray,
    mask: np.ndarray,
    taus: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Linear search over the sorted candidate-margin sweep.

    ``e_sorted`` is the globally sorted exponent-budget array; candidate
    ``k`` contributes weight ``va[order_i[k]] * vb[order_j[k]]`` when
    ``mask[k]`` is set and nothing otherwise. For each threshold ``tau``
    returns the smallest candidate value whose cumulative weight, counting
    full tie groups, reaches ``tau``; unreachable thresholds get the
    maximal candidate and a False flag.
    """
    weights = va[order_i] * vb[order_j] * mask
    cs = np.cumsum(weights)
    # group ties: h at a candidate value includes every pair sharing it
    boundary = np.nonzero(np.diff(e_sorted))[0]
    group_ends = np.concatenate((boundary, [e_sorted.size - 1]))
    group_cs = cs[group_ends]
    group_vals = e_sorted[group_ends]
    pos = np.searchsorted(group_cs, taus, side="left")
    feasible = pos < group_cs.size
    pos = np.minimum(pos, group_cs.size - 1)
    return group_vals[pos], feasible
