"""Adaptive-connectivity pruning toolkit.

Scores the dependence between filters of adjacent network layers with a
hash-based estimator, plans per-layer pruning limits from activation
quality curves, and emits keep/prune masks with compression accounting.
"""

__version__ = "0.1.0"

from .errors import AcpError, FormatError, ValidationError
from .estimator import (
    CollisionTable,
    Estimate,
    HashConfig,
    PhiSpec,
    build_collision_table,
    derive_seed,
    estimate_acmi,
    estimate_ami,
    g_fn,
    h1_quantize,
    h2_bucket,
)
from .oracles import (
    AmiBounds,
    exact_ami_bounds_discrete,
    exact_ami_discrete,
    exact_cmi_discrete,
)
from .pruning import (
    GroupScheme,
    PruneConfig,
    PruneMask,
    PruneReport,
    prune_network,
    score_layer_pair,
    threshold_prune,
)
from .sensitivity import (
    FilterPartition,
    SensitivityScores,
    compute_sensitivity,
    partition_by_sensitivity,
)
from .limit_planner import (
    PrunePlan,
    QualityCurve,
    assign_gammas,
    build_quality_curves,
    feasible_tau_range,
    train_linear_classifier,
)
from .tensor_io import (
    ActivationSet,
    NetworkManifest,
    Tensor,
    WeightKernel,
    average_spatial,
    compression_percent,
    csr_memory,
    read_bundle,
    read_tensor,
    write_bundle,
    write_tensor,
)

__all__ = [
    "AcpError",
    "FormatError",
    "ValidationError",
    "CollisionTable",
    "Estimate",
    "HashConfig",
    "PhiSpec",
    "build_collision_table",
    "derive_seed",
    "estimate_acmi",
    "estimate_ami",
    "g_fn",
    "h1_quantize",
    "h2_bucket",
    "AmiBounds",
    "exact_ami_bounds_discrete",
    "exact_ami_discrete",
    "exact_cmi_discrete",
    "GroupScheme",
    "PruneConfig",
    "PruneMask",
    "PruneReport",
    "prune_network",
    "score_layer_pair",
    "threshold_prune",
    "FilterPartition",
    "SensitivityScores",
    "compute_sensitivity",
    "partition_by_sensitivity",
    "PrunePlan",
    "QualityCurve",
    "assign_gammas",
    "build_quality_curves",
    "feasible_tau_range",
    "train_linear_classifier",
    "ActivationSet",
    "NetworkManifest",
    "Tensor",
    "WeightKernel",
    "average_spatial",
    "compression_percent",
    "csr_memory",
    "read_bundle",
    "read_tensor",
    "write_bundle",
    "write_tensor",
]
