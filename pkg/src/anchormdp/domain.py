"""Secret/output domains, metrics, priors, cost models, and node ingestion.

The secret domain is a finite set of planar or geographic points with a
full pairwise distance matrix in kilometers, a prior over records, and an
output domain that defaults to the record set itself.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_KM = 6371.0088

TRIANGLE_TOL = 1e-9
PRIOR_TOL = 1e-12
ROW_SUM_TOL = 1e-9


class DomainError(ValueError):
    """Raised for malformed inputs or broken metric invariants."""


@dataclass(frozen=True)
class SecretDomain:
    """Finite record set with metric structure.

    Attributes:
        records: (K, 2) coordinates; meaning depends on ``metric``
            (x/y kilometers for ``euclidean-km``, lat/lon degrees for
            ``haversine-km``).
        distances: (K, K) symmetric nonnegative matrix, kilometers.
        priors: length-K probability vector.
        outputs: indices of the output domain (default: all records).
        metric: name of the metric used to build ``distances``.
    """

    records: np.ndarray
    distances: np.ndarray
    priors: np.ndarray
    outputs: np.ndarray
    metric: str = "euclidean-km"

    def __post_init__(self):
        d = self.distances
        k = self.size
        if d.shape != (k, k):
            raise DomainError("distance matrix shape mismatch")
        if np.any(np.abs(np.diag(d)) > 0):
            raise DomainError("nonzero self-distance")
        if np.any(d < 0) or not np.allclose(d, d.T, atol=1e-12):
            raise DomainError("distances must be symmetric and nonnegative")
        off = d.copy()
        np.fill_diagonal(off, np.inf)
        if k > 1 and off.min() <= 0:
            i, j = divmod(int(np.argmin(off)), k)
            raise DomainError(f"zero distance between distinct records {i} and {j}")
        if abs(self.priors.sum() - 1.0) > PRIOR_TOL or np.any(self.priors < 0):
            raise DomainError("priors must be nonnegative and sum to 1")
        _check_triangle(d)

    @property
    def size(self) -> int:
        return len(self.records)

    @property
    def d_max(self) -> float:
        return float(self.distances.max())


def _check_triangle(d: np.ndarray) -> None:
    # d[i,k] <= d[i,j] + d[j,k] + tol for all i,j,k; vectorized per j
    k = d.shape[0]
    for j in range(k):
        slack = d - (d[:, j][:, None] + d[j][None, :])
        if slack.max() > TRIANGLE_TOL:
            i, l = divmod(int(np.argmax(slack)), k)
            raise DomainError(f"triangle inequality violated at ({i},{j},{l})")


@dataclass(frozen=True)
class CostMatrix:
    """Utility-loss coefficients c[x, y] >= 0 over records x and outputs y."""

    costs: np.ndarray
    mode: str  # "direct-distance" | "task-discrepancy"
    task_points: np.ndarray | None = None
    task_weights: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.costs)) or np.any(self.costs < 0):
            raise DomainError("costs must be finite and nonnegative")


@dataclass
class PerturbationMatrix:
    """Row-stochastic perturbation probabilities over the output domain.

    ``row_index`` identifies which record each row belongs to; for full-
    domain mechanisms it is simply 0..K-1, for anchor mechanisms it is the
    anchor union.
    """

    rows: np.ndarray
    row_index: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.row_index is None:
            self.row_index = np.arange(self.rows.shape[0])
        if np.any(self.rows < -1e-12) or np.any(self.rows > 1 + 1e-12):
            raise DomainError("perturbation probabilities outside [0, 1]")
        sums = self.rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise DomainError("perturbation rows must sum to 1")

    def row_of(self, record: int) -> np.ndarray:
        pos = np.searchsorted(self.row_index, record)
        if pos >= len(self.row_index) or self.row_index[pos] != record:
            raise KeyError(f"no perturbation row for record {record}")
        return self.rows[pos]


def load_nodes(path) -> np.ndarray:
    """Parse a node CSV with header ``id,lat,lon[,weight]``.

    Returns an (N, 2) or (N, 3) float array (lat, lon[, weight]) in file
    order; duplicates are retained. Raises :class:`DomainError` naming the
    offending line on any parse failure.
    """
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DomainError(f"{path}: empty file")
        has_weight = len(header) >= 4
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise DomainError(f"{path}:{lineno}: expected id,lat,lon")
            try:
                lat, lon = float(row[1]), float(row[2])
                weight = float(row[3]) if has_weight and len(row) > 3 else None
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from None
            points.append((lat, lon) if weight is None else (lat, lon, weight))
    if not points:
        raise DomainError(f"{path}: no data rows")
    return np.asarray(points, dtype=float)


def write_nodes(path, points: np.ndarray, weights: np.ndarray | None = None) -> None:
    """Write points in the node-CSV format accepted by :func:`load_nodes`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if weights is None:
            writer.writerow(["id", "lat", "lon"])
            for i, (a, b) in enumerate(points):
                writer.writerow([i, repr(float(a)), repr(float(b))])
        else:
            writer.writerow(["id", "lat", "lon", "weight"])
            for i, ((a, b), w) in enumerate(zip(points, weights)):
                writer.writerow([i, repr(float(a)), repr(float(b)), repr(float(w))])


def euclidean_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    return _symmetrize(d)


def haversine_matrix(points: np.ndarray) -> np.ndarray:
    lat = np.radians(points[:, 0])
    lon = np.radians(points[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return _symmetrize(d)


def _symmetrize(d: np.ndarray) -> np.ndarray:
    d = (d + d.T) / 2.0
    np.fill_diagonal(d, 0.0)
    return d


_METRICS = {"euclidean-km": euclidean_matrix, "haversine-km": haversine_matrix}


def build_domain(
    points: np.ndarray,
    metric: str = "euclidean-km",
    K: int | None = None,
    seed: int = 0,
    priors: np.ndarray | None = None,
) -> SecretDomain:
    """Sample a K-record domain and compute its distance matrix.

    Sampling is uniform without replacement and reproducible for a given
    seed. A sampled point that duplicates another's coordinates (zero
    distance between distinct records) is replaced by a deterministic
    redraw; if the pool is exhausted this is an error.
    """
    points = np.asarray(points, dtype=float)
    weights = None
    if points.ndim == 2 and points.shape[1] >= 3:
        weights = points[:, 2]
        points = points[:, :2]
    n = len(points)
    if K is None:
        K = n
    if K > n:
        raise DomainError(f"cannot sample K={K} from {n} points")
    if K < 2:
        raise DomainError("need at least 2 records")
    if metric not in _METRICS:
        raise DomainError(f"unknown metric {metric!r}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    chosen: list[int] = []
    seen: set[tuple[float, float]] = set()
    for idx in perm:
        key = (points[idx, 0], points[idx, 1])
        if key in seen:
            continue
        seen.add(key)
        chosen.append(int(idx))
        if len(chosen) == K:
            break
    if len(chosen) < K:
        raise DomainError("not enough distinct coordinates to sample the domain")
    chosen_arr = np.array(chosen)
    sample = points[chosen_arr]
    dist = _METRICS[metric](sample)

    if priors is not None:
        p = np.asarray(priors, dtype=float)
    elif weights is not None:
        p = weights[chosen_arr].astype(float)
        if np.any(p < 0) or p.sum() <= 0:
            raise DomainError("node weights must be nonnegative with positive sum")
        p = p / p.sum()
    else:
        p = np.full(K, 1.0 / K)
    return SecretDomain(
        records=sample,
        distances=dist,
        priors=p,
        outputs=np.arange(K),
        metric=metric,
    )


def domain_from_distances(dist: np.ndarray, priors: np.ndarray | None = None) -> SecretDomain:
    """Wrap a precomputed distance matrix (used by grids and tests)."""
    dist = np.asarray(dist, dtype=float)
    k = dist.shape[0]
    p = np.full(k, 1.0 / k) if priors is None else np.asarray(priors, dtype=float)
    return SecretDomain(
        records=np.zeros((k, 2)),
        distances=dist,
        priors=p,
        outputs=np.arange(k),
        metric="precomputed",
    )


def build_cost_model(
    domain: SecretDomain,
    mode: str = "direct-distance",
    task_points: np.ndarray | None = None,
    task_weights: np.ndarray | None = None,
) -> CostMatrix:
    """Build the utility-loss coefficients.

    ``direct-distance`` sets c[x, y] = d(x, y). ``task-discrepancy`` sets
    c[x, y] to the weighted mean absolute difference in travel cost to a
    set of task points, with travel cost given by the domain metric.
    """
    if mode == "direct-distance":
        costs = domain.distances[:, domain.outputs].copy()
        return CostMatrix(costs=costs, mode=mode)
    if mode != "task-discrepancy":
        raise DomainError(f"unknown cost mode {mode!r}")
    if task_points is None or len(task_points) == 0:
        raise DomainError("task-discrepancy mode needs a nonempty task set")
    task_points = np.asarray(task_points, dtype=float)
    if task_weights is None:
        task_weights = np.full(len(task_points), 1.0 / len(task_points))
    task_weights = np.asarray(task_weights, dtype=float)
    if np.any(task_weights < 0):
        raise DomainError("task weights must be nonnegative")
    if abs(task_weights.sum() - 1.0) > 1e-9:
        raise DomainError("task weights must sum to 1")
    travel = _travel_to_tasks(domain, task_points)  # (K, T)
    out_travel = travel[domain.outputs]
    diff = np.abs(travel[:, None, :] - out_travel[None, :, :])
    costs = (diff * task_weights[None, None, :]).sum(axis=-1)
    return CostMatrix(costs=costs, mode=mode, task_points=task_points, task_weights=task_weights)


def _travel_to_tasks(domain: SecretDomain, tasks: np.ndarray) -> np.ndarray:
    both = np.vstack([domain.records, tasks])
    full = _METRICS.get(domain.metric, euclidean_matrix)(both)
    k = domain.size
    return full[:k, k:]


def generate_uniform_square(count: int, side_km: float, seed: int = 0) -> np.ndarray:
    """Uniform points in a ``side_km`` x ``side_km`` square (planar km)."""
    if count < 2:
        raise DomainError("need at least 2 points")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, side_km, size=(count, 2))
