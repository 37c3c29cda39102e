"""Causal decomposition of health disparities under allowable-covariate partitions."""

__version__ = "0.1.0"

from .joint import FiniteJoint, VariableSpec, joint_from_cells
from .partition import (
    AllowabilityPartition,
    RaceRole,
    RoleBindings,
    SelectionRole,
    Standardization,
    preset,
    validate,
)
from .cohort import CohortTable
from .gformula import (
    DecompositionEstimate,
    check_positivity,
    counterfactual_mean_exact,
    decompose_exact,
    decompose_montecarlo,
    observed_disparity_exact,
)
from .estimator import (
    BootstrapConfig,
    ModelConfig,
    decompose_weighted,
    decompose_weighted_exact,
)
from .dgp import ScmConfig, discretize_to_joint, generate, reference_config, true_counterfactual

__all__ = [
    "AllowabilityPartition",
    "BootstrapConfig",
    "CohortTable",
    "DecompositionEstimate",
    "FiniteJoint",
    "ModelConfig",
    "RaceRole",
    "RoleBindings",
    "ScmConfig",
    "SelectionRole",
    "Standardization",
    "VariableSpec",
    "check_positivity",
    "counterfactual_mean_exact",
    "decompose_exact",
    "decompose_montecarlo",
    "decompose_weighted",
    "decompose_weighted_exact",
    "discretize_to_joint",
    "generate",
    "joint_from_cells",
    "observed_disparity_exact",
    "preset",
    "reference_config",
    "true_counterfactual",
    "validate",
]
