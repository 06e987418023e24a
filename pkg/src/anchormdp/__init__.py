"""Anchor-based scalable perturbation optimization under metric DP.

A library plus experiment CLI: a two-phase mechanism where users disclose
probabilistically selected anchor records, the server optimizes
perturbation rows for the anchor union under margin-tightened ratio
constraints, and each user perturbs through their nearest anchor's row.
Baselines (exponential mechanism, Bayesian remapping, full and coarse-grid
LPs) and an evaluation harness ship alongside.
"""

from .anchors import AnchorPolicy, AnchorSet, epsilon_bar, epsilon_bar_table, sample_anchor_set, selection_prob
from .anpo import (
    AnpoBudgetError,
    AnpoProblem,
    UserPerturber,
    build_anpo,
    make_perturber,
    perturb,
    relaxed_anpo,
    solve_anpo,
    surrogate_of,
)
from .baselines import GridPartition, RemapTable, bayesian_remap, coarse_lp, em_matrix, full_lp
from .domain import (
    CostMatrix,
    DomainError,
    PerturbationMatrix,
    SecretDomain,
    build_cost_model,
    build_domain,
    load_nodes,
)
from .evaluation import (
    budget_allocation,
    clustering_coefficient,
    empirical_violation_rate,
    expected_utility_loss,
    lp_size_stats,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .margins import (
    CandidateMarginSet,
    MarginError,
    SafetyMarginPlan,
    build_margin_plan,
    build_margin_tables,
    estimated_margin,
    exact_margin_xi,
    precompute_candidates,
    success_prob_h,
    surrogate_prob,
)

__version__ = "0.1.0"
