"""Per-filter sensitivity from the downstream weight kernel.

A filter's sensitivity is the sum of its normalized magnitude
contributions to every filter of the next layer: with W~ the downstream
kernel averaged (in absolute value) over its spatial extent,

    lambda_i = sum_c W~(c, i) / sum_p W~(c, p).

Each downstream row contributes exactly 1 across the layer, so the
sensitivities of a layer sum to the downstream filter count.  High-lambda
filters are protected from pruning.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor_io import WeightKernel


@dataclass
class SensitivityScores:
    """Sensitivities of the filters feeding one downstream layer."""

    layer_index: int
    lam: np.ndarray           # (n_filters,) non-negative
    normalizers: np.ndarray   # (n_downstream,) row sums of the averaged kernel
    skipped_rows: list[int] = field(default_factory=list)

    @property
    def n_filters(self) -> int:
        return len(self.lam)


@dataclass(frozen=True)
class FilterPartition:
    """Disjoint protected/prunable split of a layer's filter indices."""

    protected: frozenset[int]
    prunable: frozenset[int]
    protect_fraction: float

    def __post_init__(self):
        if self.protected & self.prunable:
            raise ValidationError("protected and prunable sets overlap")


def compute_sensitivity(downstream: WeightKernel) -> SensitivityScores:
    """Sensitivity of layer l+1 filters from the layer l+2 kernel.

    Downstream rows whose averaged magnitudes are all zero cannot be
    normalized; they are skipped from the sum and reported in
    ``skipped_rows``.
    """
    w = downstream.tensor
    if w.ndim == 4:
        w_avg = np.abs(w).mean(axis=(2, 3))
    else:
        w_avg = np.abs(w)
    if w_avg.size == 0:
        raise ValidationError("downstream kernel is empty")
    normalizers = w_avg.sum(axis=1)
    live = normalizers > 0.0
    if not live.any():
        raise ValidationError("all downstream filters have zero weight mass")
    skipped = [int(i) for i in np.nonzero(~live)[0]]
    lam = (w_avg[live] / normalizers[live, np.newaxis]).sum(axis=0)
    return SensitivityScores(layer_index=downstream.layer_index - 1, lam=lam,
                             normalizers=normalizers, skipped_rows=skipped)


def partition_by_sensitivity(scores: SensitivityScores | np.ndarray,
                             protect_fraction: float = 0.1) -> FilterPartition:
    """Protect the top ceil(fraction * N) filters by sensitivity.

    Ties are broken toward the lower filter index so the split is
    deterministic and invariant to any positive monotone rescaling of the
    sensitivities.
    """
    if not 0.0 <= protect_fraction < 1.0:
        raise ValidationError("protect_fraction must lie in [0, 1)")
    lam = scores.lam if isinstance(scores, SensitivityScores) else np.asarray(scores)
    n = len(lam)
    if n == 0:
        raise ValidationError("no filters to partition")
    n_protect = ceil(protect_fraction * n)
    # stable sort on descending value keeps lower indices first among ties
    order = np.argsort(-np.asarray(lam, dtype=np.float64), kind="stable")
    protected = frozenset(int(i) for i in order[:n_protect])
    prunable = frozenset(range(n)) - protected
    return FilterPartition(protected=protected, prunable=prunable,
                           protect_fraction=protect_fraction)


def write_lambda_histogram(path, scores: SensitivityScores, bins: int = 20) -> None:
    """Emit a (value, count) CSV histogram of one layer's sensitivities."""
    counts, edges = np.histogram(scores.lam, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2.0
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "count"])
        for value, count in zip(centers, counts):
            writer.writerow([repr(float(value)), int(count)])
