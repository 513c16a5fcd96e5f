"""Sensitivity scoring and protected/prunable partition tests."""

import csv

import numpy as np
import pytest

from acp.errors import ValidationError
from acp.sensitivity import (
    compute_sensitivity,
    partition_by_sensitivity,
    write_lambda_histogram,
)
from acp.tensor_io import WeightKernel


def _scores(matrix):
    return compute_sensitivity(WeightKernel(layer_index=2, tensor=np.asarray(matrix)))


class TestComputeSensitivity:
    def test_uniform_matrix(self):
        assert _scores([[1.0, 1.0], [1.0, 1.0]]).lam.tolist() == [1.0, 1.0]

    def test_diagonal_normalizes_per_row(self):
        assert _scores([[2.0, 0.0], [0.0, 2.0]]).lam.tolist() == [1.0, 1.0]

    def test_worked_example(self):
        s = _scores([[3.0, 1.0], [1.0, 1.0]])
        assert s.lam.tolist() == [1.25, 0.75]
        assert s.lam.sum() == 2.0

    def test_sum_equals_downstream_count(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n_out = rng.integers(2, 12)
            n_in = rng.integers(2, 12)
            w = rng.normal(size=(n_out, n_in, 3, 3))
            s = compute_sensitivity(WeightKernel(2, w))
            assert s.lam.sum() == pytest.approx(n_out, abs=1e-9)
            assert np.all(s.lam >= 0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        for trial in range(100):
            w = rng.normal(size=(5, 7))
            kappa = float(rng.uniform(0.01, 100.0))
            a = compute_sensitivity(WeightKernel(2, w)).lam
            b = compute_sensitivity(WeightKernel(2, kappa * w)).lam
            assert np.all(np.abs(a - b) < 1e-12)

    def test_spatial_averaging_uses_magnitudes(self):
        w = np.zeros((1, 2, 1, 2))
        w[0, 0] = [[1.0, -3.0]]   # mean |.| = 2
        w[0, 1] = [[2.0, 2.0]]    # mean |.| = 2
        s = compute_sensitivity(WeightKernel(2, w))
        assert s.lam.tolist() == [0.5, 0.5]

    def test_zero_row_skipped_with_warning(self):
        s = _scores([[0.0, 0.0], [1.0, 3.0]])
        assert s.skipped_rows == [0]
        assert s.lam.sum() == pytest.approx(1.0)

    def test_all_zero_rows_error(self):
        with pytest.raises(ValidationError):
            _scores([[0.0, 0.0], [0.0, 0.0]])


class TestPartition:
    def test_argmax_protected(self):
        s = _scores([[3.0, 1.0], [1.0, 1.0]])
        p = partition_by_sensitivity(s, 0.5)
        assert p.protected == {0}
        assert p.prunable == {1}

    def test_zero_fraction(self):
        s = _scores([[3.0, 1.0], [1.0, 1.0]])
        p = partition_by_sensitivity(s, 0.0)
        assert p.protected == frozenset()
        assert p.prunable == {0, 1}

    def test_ties_break_by_index(self):
        p = partition_by_sensitivity(np.ones(8), 0.25)
        assert p.protected == {0, 1}

    def test_fraction_range(self):
        with pytest.raises(ValidationError):
            partition_by_sensitivity(np.ones(4), 1.0)
        with pytest.raises(ValidationError):
            partition_by_sensitivity(np.ones(4), -0.1)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        lam = rng.uniform(0.1, 5.0, size=16)
        base = partition_by_sensitivity(lam, 0.3)
        for transform in (np.exp, np.sqrt, lambda v: 3.0 * v + 1.0):
            other = partition_by_sensitivity(transform(lam), 0.3)
            assert other.protected == base.protected

    def test_covers_all_filters(self):
        rng = np.random.default_rng(3)
        lam = rng.uniform(size=11)
        p = partition_by_sensitivity(lam, 0.4)
        assert p.protected | p.prunable == set(range(11))
        assert not p.protected & p.prunable


def test_histogram_csv(tmp_path):
    s = _scores([[3.0, 1.0], [1.0, 1.0]])
    path = tmp_path / "lam.csv"
    write_lambda_histogram(path, s, bins=4)
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert sum(int(r["count"]) for r in rows) == 2
