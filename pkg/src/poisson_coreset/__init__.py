"""Coresets and constrained fitting for Poisson regression with p-th-root link."""
from .conditioning import (
    ConditionedBasis,
    RankDeficientError,
    SensitivityScores,
    conditioned_basis,
    l1_basis,
    rho_estimate,
    sensitivity_scores,
    sketch_qr_basis_p2,
)
from .coreset import Coreset, build_coreset, build_uniform, coreset_error, theoretical_size
from .datagen import SyntheticSpec, circle_sensitivity_demo, generate_circle, generate_f2
from .envelopes import lambda_star, lambert_w0, round_labels
from .hull import (
    HullBudgetExceeded,
    HullResult,
    compute_hull,
    constraint_margin,
    eps_kernel,
    extreme_points_exact,
    normalize_unit_ball,
)
from .model import (
    Dataset,
    DomainError,
    Infeasible,
    load_csv,
    membership_D,
    point_loss,
    save_csv,
    shift_params,
    total_loss,
)
from .optimizer import FitResult, OptimizerConfig, feasible_start, minimize, shift_gap_check

__version__ = "0.1.0"
