"""PyTorch bridge for the acp pruning toolkit.

Exports trained models' weights and spatially averaged activations into
the toolkit's NPZ + manifest bundle format, and applies emitted mask
files back onto checkpoints.  The two packages share only the documented
file schemas.
"""

__version__ = "0.1.0"

from .export import ExportReport, export
from .masks import apply_masks, balanced_assignment, filter_level_keep

__all__ = [
    "ExportReport",
    "export",
    "apply_masks",
    "balanced_assignment",
    "filter_level_keep",
]
