"""Masked optimal transport: entropic masked Wasserstein and Gromov-Wasserstein
solvers, exact references, and graph-topology-induced fine-tuning regularizers."""

from .core import (
    SolveReport,
    SolverConfig,
    as_mask,
    as_prob_vec,
    cosine_cost,
    masked_logsumexp,
    normalize_cost,
    sq_euclidean_cost,
    uniform,
    validate_feasibility_inputs,
)
from .errors import (
    DimensionMismatch,
    EmptyMask,
    Infeasible,
    InfeasiblePlan,
    InvalidDelta,
    InvalidInput,
    MaskedOTError,
    NegativeCost,
    NotConverged,
    NumericalUnderflow,
    ShapeMismatch,
    TooLarge,
    ZeroRow,
    ZeroRowOrColumn,
)
from .gromov import GwLossDecomposition, MgwdSolution, SquaredLoss, gw_objective, pseudo_cost, solve_mgwd
from .gtot import (
    BoundParams,
    GraphTopology,
    MaskSpec,
    build_mask,
    combined_objective,
    generalization_bound,
    gtot_regularizer,
    mgwd_regularizer,
    smooth_value,
)
from .oracle import exact_mwd, naive_gw_objective, permutation_gw_search
from .sinkhorn import DualPotentials, MwdSolution, dual_objective, mwd_gradient_wrt_cost, solve_mwd, solve_mwd_vanilla

__version__ = "0.1.0"
