"""Anchor perturbation optimization: the margin-tightened LP and its relaxation.

The server optimizes one perturbation row per anchor in the union of the
users' uploaded sets, subject to tightened ratio constraints between every
ordered anchor pair. Pairs whose tightened exponent is nonpositive have no
usable budget: by default that is a validation error; in ``clip`` mode the
exponent is floored at zero, which forces the two rows equal — the
strictest constraint expressible, so the privacy guarantee only tightens.
Clipped pairs are merged into one variable block before solving, which
also keeps the programs small when many anchors are co-located.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import lp
from .anchors import AnchorSet
from .domain import CostMatrix, PerturbationMatrix, SecretDomain
from .margins import SafetyMarginPlan

# ratio constraints with exponents above this cannot bind at double
# precision and only poison the solver scaling; capping tightens, so the
# guarantee is unaffected
EXPONENT_CAP = math.log(1e10)


class AnpoBudgetError(ValueError):
    """Anchor pairs whose Phase-II budget is exhausted by margin + Phase-I cost."""

    def __init__(self, pairs):
        self.pairs = pairs
        preview = ", ".join(
            f"(x={x}, x'={xp}, eps_bar={eb:.4g}, xi={xi:.4g})" for x, xp, eb, xi in pairs[:5]
        )
        more = "" if len(pairs) <= 5 else f" and {len(pairs) - 5} more"
        super().__init__(f"budget exhausted for {len(pairs)} anchor pair(s): {preview}{more}")


@dataclass
class AnpoProblem:
    """Assembled anchor LP plus the bookkeeping needed by the evaluation."""

    anchors: np.ndarray  # sorted union of anchor indices
    n_outputs: int
    exponents: np.ndarray  # (|A|, |A|) enforced exponent per ordered anchor pair
    classes: list[list[int]]  # positions into ``anchors`` merged to one row
    class_of: np.ndarray  # anchor position -> class id
    program: lp.LinearProgram
    domain_size: int
    epsilon: float

    @property
    def variable_count(self) -> int:
        # size of the formulation before merging equal rows
        return len(self.anchors) * self.n_outputs

    @property
    def inequality_count(self) -> int:
        a = len(self.anchors)
        return a * (a - 1) * self.n_outputs

    @property
    def equality_count(self) -> int:
        return len(self.anchors)

    @property
    def anchor_fraction(self) -> float:
        return len(self.anchors) / self.domain_size

    def anchor_position(self, record: int) -> int:
        pos = int(np.searchsorted(self.anchors, record))
        if pos >= len(self.anchors) or self.anchors[pos] != record:
            raise KeyError(f"record {record} is not an anchor")
        return pos

    def enforced_exponent(self, x: int, xp: int) -> float:
        """Exponent actually enforced between two anchor records (0 = equal rows)."""
        i, j = self.anchor_position(x), self.anchor_position(xp)
        if self.class_of[i] == self.class_of[j]:
            return 0.0
        return float(self.exponents[i, j])


def anchor_union(anchor_sets) -> np.ndarray:
    members = set()
    for s in anchor_sets:
        members.update(int(x) for x in s.members)
    return np.array(sorted(members), dtype=np.int64)


def _required_pairs(anchor_sets, union: np.ndarray, include_same_user: bool) -> np.ndarray:
    """Boolean (|A|, |A|) mask of ordered anchor pairs that carry constraints."""
    a = len(union)
    pos = {int(x): i for i, x in enumerate(union)}
    if include_same_user:
        # every union pair shows up in some A_n x A_m product
        need = np.ones((a, a), dtype=bool)
    else:
        need = np.zeros((a, a), dtype=bool)
        sets = [np.array([pos[int(x)] for x in s.members]) for s in anchor_sets]
        for n, sn in enumerate(sets):
            for m, sm in enumerate(sets):
                if n == m:
                    continue
                need[np.ix_(sn, sm)] = True
    np.fill_diagonal(need, False)
    return need


def build_anpo(
    domain: SecretDomain,
    anchor_sets,
    epsilon: float,
    eps_bar_table: np.ndarray,
    margin_plan: SafetyMarginPlan,
    cost: CostMatrix,
    include_same_user: bool = True,
    exhausted: str = "error",
) -> AnpoProblem:
    """Assemble the anchor LP.

    ``exhausted`` selects the treatment of anchor pairs with nonpositive
    tightened exponent: ``"error"`` raises :class:`AnpoBudgetError` listing
    them, ``"clip"`` floors the exponent at zero and merges the rows.
    """
    if exhausted not in ("error", "clip"):
        raise ValueError("exhausted must be 'error' or 'clip'")
    union = anchor_union(anchor_sets)
    a = len(union)
    need = _required_pairs(anchor_sets, union, include_same_user)

    exponents = np.full((a, a), np.inf)
    exhausted_pairs = []
    for i in range(a):
        for j in range(a):
            if not need[i, j] or j < i:
                continue
            x, xp = int(union[i]), int(union[j])
            m = margin_plan.margin(x, xp)
            e = (epsilon - eps_bar_table[x, xp]) * domain.distances[x, xp] - m.xi
            if e <= 0 and exhausted == "error":
                exhausted_pairs.append((x, xp, float(eps_bar_table[x, xp]), m.xi))
            e = min(max(e, 0.0), EXPONENT_CAP)
            exponents[i, j] = e
            exponents[j, i] = e
    if exhausted_pairs:
        raise AnpoBudgetError(exhausted_pairs)

    classes, class_of = _merge_equal_rows(a, need, exponents)
    program = _assemble_program(domain, cost, union, need, exponents, classes, class_of)
    return AnpoProblem(
        anchors=union,
        n_outputs=len(domain.outputs),
        exponents=exponents,
        classes=classes,
        class_of=class_of,
        program=program,
        domain_size=domain.size,
        epsilon=epsilon,
    )


def _merge_equal_rows(a: int, need: np.ndarray, exponents: np.ndarray):
    """Union-find over zero-exponent pairs; each class shares one row."""
    parent = list(range(a))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(a):
        for j in range(i + 1, a):
            if need[i, j] and exponents[i, j] == 0.0:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(i) for i in range(a)})
    root_to_class = {r: c for c, r in enumerate(roots)}
    class_of = np.array([root_to_class[find(i)] for i in range(a)])
    classes = [[] for _ in roots]
    for i in range(a):
        classes[class_of[i]].append(i)
    return classes, class_of


def _assemble_program(domain, cost, union, need, exponents, classes, class_of):
    n_cls = len(classes)
    n_out = len(domain.outputs)
    n_vars = n_cls * n_out

    obj = np.zeros((n_cls, n_out))
    for c, members in enumerate(classes):
        for i in members:
            x = int(union[i])
            obj[c] += domain.priors[x] * cost.costs[x]

    # tightest member-pair exponent bounds each ordered class pair
    cls_exp = np.full((n_cls, n_cls), np.inf)
    for i in range(len(union)):
        for j in range(len(union)):
            ci, cj = class_of[i], class_of[j]
            if ci == cj or not need[i, j]:
                continue
            if exponents[i, j] < cls_exp[ci, cj]:
                cls_exp[ci, cj] = exponents[i, j]

    rows, cols, data, b_ub = [], [], [], []
    row = 0
    for ci in range(n_cls):
        for cj in range(n_cls):
            if ci == cj or not np.isfinite(cls_exp[ci, cj]):
                continue
            coef = math.exp(cls_exp[ci, cj])
            for y in range(n_out):
                rows.extend((row, row))
                cols.extend((ci * n_out + y, cj * n_out + y))
                data.extend((1.0, -coef))
                b_ub.append(0.0)
                row += 1
    a_ub = None
    if row:
        a_ub = sparse.csr_matrix(
            (np.array(data), (np.array(rows), np.array(cols))), shape=(row, n_vars)
        )
    eq_rows = np.repeat(np.arange(n_cls), n_out)
    eq_cols = np.arange(n_vars)
    a_eq = sparse.csr_matrix(
        (np.ones(n_vars), (eq_rows, eq_cols)), shape=(n_cls, n_vars)
    )
    return lp.LinearProgram(
        n_vars=n_vars,
        c=obj.ravel(),
        a_ub=a_ub,
        b_ub=np.array(b_ub) if row else None,
        a_eq=a_eq,
        b_eq=np.ones(n_cls),
    )


def solve_anpo(problem: AnpoProblem) -> PerturbationMatrix:
    """Solve the assembled program and expand class rows back to anchors."""
    sol = lp.solve(problem.program)
    if not sol.is_optimal:
        raise RuntimeError(f"anchor LP not solved to optimality: {sol.status}")
    n_out = problem.n_outputs
    cls_rows = sol.x.reshape(-1, n_out)
    rows = cls_rows[problem.class_of]
    return PerturbationMatrix(rows=rows, row_index=problem.anchors.copy())


def anpo_objective(problem: AnpoProblem, matrix: PerturbationMatrix) -> float:
    """Expected anchor utility loss of a solved matrix under the program objective."""
    cls_rows = np.array([matrix.rows[members[0]] for members in problem.classes])
    return float(problem.program.c @ cls_rows.reshape(-1))


def relaxed_anpo(
    domain: SecretDomain,
    anchor_sets,
    epsilon: float,
    cost: CostMatrix,
    include_same_user: bool = True,
) -> float:
    """Optimal objective of the un-tightened anchor LP (utility lower bound)."""
    union = anchor_union(anchor_sets)
    need = _required_pairs(anchor_sets, union, include_same_user)
    a = len(union)
    exponents = np.full((a, a), np.inf)
    for i in range(a):
        for j in range(a):
            if need[i, j]:
                e = epsilon * domain.distances[int(union[i]), int(union[j])]
                exponents[i, j] = min(e, EXPONENT_CAP)
    classes = [[i] for i in range(a)]
    class_of = np.arange(a)
    program = _assemble_program(domain, cost, union, need, exponents, classes, class_of)
    sol = lp.solve(program)
    if not sol.is_optimal:
        raise RuntimeError(f"relaxed anchor LP not solved: {sol.status}")
    return float(sol.objective)


def surrogate_of(domain: SecretDomain, x_n: int, anchor_set: AnchorSet) -> int:
    """Nearest anchor to the true record, distance ties broken by lower index."""
    members = anchor_set.members
    d = domain.distances[x_n][members]
    best = int(np.lexsort((members, d))[0])
    return int(members[best])


@dataclass
class UserPerturber:
    """Client-side state: the user's anchors, their rows, and the surrogate."""

    anchor_set: AnchorSet
    rows: np.ndarray  # rows for the user's own anchors, in member order
    surrogate: int

    @property
    def surrogate_row(self) -> np.ndarray:
        pos = int(np.searchsorted(self.anchor_set.members, self.surrogate))
        return self.rows[pos]


def make_perturber(
    domain: SecretDomain, x_n: int, anchor_set: AnchorSet, matrix: PerturbationMatrix
) -> UserPerturber:
    rows = np.vstack([matrix.row_of(int(x)) for x in anchor_set.members])
    return UserPerturber(
        anchor_set=anchor_set,
        rows=rows,
        surrogate=surrogate_of(domain, x_n, anchor_set),
    )


def perturb(perturber: UserPerturber, rng: np.random.Generator) -> int:
    """Sample an output index from the surrogate perturbation vector."""
    row = perturber.surrogate_row
    total = row.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"surrogate row sums to {total!r}, not 1")
    return int(rng.choice(len(row), p=row / total))
