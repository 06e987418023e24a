"""Probabilistic anchor-record selection and its worst-case privacy cost.

Each user includes every domain record in their anchor set independently,
with probability given by a distance-decay rule clipped at a threshold.
The disclosure cost of revealing the set is accounted per record pair as
the supremum log likelihood-ratio over all possible sets, which lands on
one of the two weight-dominance sets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .domain import SecretDomain

log = logging.getLogger(__name__)

FAMILIES = ("exponential", "power-law", "logistic")

DEFAULT_ALPHA = 0.95
DEFAULT_DECAY = 0.5
GAMMA_DMAX_FRACTION = 50.0  # default threshold: d_max / 50


@dataclass(frozen=True)
class AnchorPolicy:
    """Decay family plus (alpha, decay, gamma) parameters.

    ``alpha`` scales the selection probability at distance zero and must be
    strictly below 1: a certainly-selected anchor would make two records
    perfectly distinguishable through the sets that omit it. ``gamma`` is
    the clip distance (km): beyond it the probability stays at the gamma
    value instead of decaying further.
    """

    family: str = "exponential"
    alpha: float = DEFAULT_ALPHA
    decay: float = DEFAULT_DECAY
    gamma: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown decay family {self.family!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.decay <= 0:
            raise ValueError("decay rate must be positive")
        if self.gamma <= 0:
            raise ValueError("distance threshold must be positive")

    def density(self, d):
        """Unclipped decay value h(d) for the configured family."""
        d = np.asarray(d, dtype=float)
        if self.family == "exponential":
            return self.alpha * np.exp(-self.decay * d)
        if self.family == "power-law":
            return self.alpha / (1.0 + d**self.decay)
        return 2.0 * self.alpha / (1.0 + np.exp(self.decay * d))


def default_policy(domain: SecretDomain, family: str = "exponential") -> AnchorPolicy:
    return AnchorPolicy(family=family, gamma=domain.d_max / GAMMA_DMAX_FRACTION)


def selection_prob(policy: AnchorPolicy, d) -> np.ndarray | float:
    """Clipped selection probability: h(d) below gamma, h(gamma) beyond."""
    d = np.asarray(d, dtype=float)
    clipped = policy.density(np.minimum(d, policy.gamma))
    return clipped if clipped.ndim else float(clipped)


def weight_matrix(policy: AnchorPolicy, domain: SecretDomain) -> np.ndarray:
    """w[n, x] = probability that user at record n selects record x."""
    return np.asarray(selection_prob(policy, domain.distances))


@dataclass(frozen=True)
class AnchorSet:
    owner: int
    members: np.ndarray  # sorted record indices, nonempty

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("anchor sets must be nonempty")

    def __contains__(self, record: int) -> bool:
        pos = np.searchsorted(self.members, record)
        return pos < len(self.members) and self.members[pos] == record


def sample_anchor_set(
    policy: AnchorPolicy,
    domain: SecretDomain,
    x_n: int,
    rng: np.random.Generator,
    weights: np.ndarray | None = None,
) -> AnchorSet:
    """Draw the anchor set of record ``x_n`` by independent Bernoulli trials.

    An empty draw is redrawn in full. This conditioning is not reflected in
    the privacy accounting (which uses the unconditioned product law); the
    redraw probability is the product of all miss probabilities and is
    negligible under reasonable parameters, so the event is only logged.
    """
    w = weight_matrix(policy, domain)[x_n] if weights is None else weights
    while True:
        members = np.nonzero(rng.random(domain.size) < w)[0]
        if len(members):
            return AnchorSet(owner=x_n, members=members)
        log.warning("empty anchor draw for record %d; redrawing", x_n)


def epsilon_bar(
    domain: SecretDomain,
    policy: AnchorPolicy,
    x_n: int,
    x_m: int,
    weights: np.ndarray | None = None,
) -> float:
    """Least upper bound of the per-km anchor-disclosure cost for one pair.

    Evaluates the log likelihood-ratio on the dominance set (records where
    n's weight exceeds m's) and its mirror; the larger magnitude, divided
    by the pair distance, bounds the cost over every possible anchor set.
    """
    if x_n == x_m:
        raise ValueError("epsilon_bar needs two distinct records")
    w = weight_matrix(policy, domain) if weights is None else weights
    a = np.log(w[x_n]) - np.log(w[x_m])
    b = np.log1p(-w[x_n]) - np.log1p(-w[x_m])
    hi = float(np.maximum(a, b).sum())
    lo = float(np.minimum(a, b).sum())
    return max(hi, -lo) / float(domain.distances[x_n, x_m])


def epsilon_bar_table(
    domain: SecretDomain,
    policy: AnchorPolicy,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Full K x K table of pairwise anchor-disclosure costs (diagonal 0)."""
    w = weight_matrix(policy, domain) if weights is None else weights
    return kernels.epsilon_bar_table(
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(domain.distances, dtype=float),
    )
