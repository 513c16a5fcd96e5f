"""Classifier, quality-curve, and limit-assignment tests."""

import numpy as np
import pytest

from acp.errors import ValidationError
from acp.limit_planner import (
    PrunePlan,
    QualityCurve,
    assign_gammas,
    build_quality_curves,
    feasible_tau_range,
    load_curves_csv,
    load_plan,
    measure_quality,
    save_curves_csv,
    save_plan,
    train_linear_classifier,
)
from acp.tensor_io import ActivationSet
from acp.toynet import forward, random_mlp, synth_dataset, teacher_dataset

GRID = tuple(range(1, 100, 5))


class TestClassifier:
    def test_separable_blobs(self):
        ds = synth_dataset(num_classes=2, m=500, d=6, separation=5.0, seed=0)
        clf = train_linear_classifier(ds.features, ds.labels, seed=1)
        assert clf.accuracy(ds.features, ds.labels) >= 0.99

    def test_shuffled_labels_are_chance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2000, 8))
        y = rng.integers(0, 10, size=2000)
        clf = train_linear_classifier(x[:1000], y[:1000], seed=3)
        held_out = clf.accuracy(x[1000:], y[1000:])
        assert abs(held_out - 0.1) < 0.05

    def test_seed_reproducibility(self):
        ds = synth_dataset(num_classes=3, m=300, d=5, separation=2.0, seed=4)
        a = train_linear_classifier(ds.features, ds.labels, seed=5)
        b = train_linear_classifier(ds.features, ds.labels, seed=5)
        assert np.array_equal(a.weights, b.weights)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            train_linear_classifier(np.zeros((10, 2)), np.zeros(10, dtype=int))

    def test_non_finite_rejected(self):
        x = np.zeros((10, 2))
        x[0, 0] = np.inf
        with pytest.raises(ValidationError):
            train_linear_classifier(x, np.arange(10) % 2)


class TestMeasureQuality:
    def test_unpruned_equals_clean_accuracy(self):
        spec = random_mlp([5, 10, 4], seed=6)
        ds = teacher_dataset(spec, 300, seed=7)
        acts, _ = forward(spec, ds.features)
        clf = train_linear_classifier(acts[1].samples, ds.labels, seed=8)
        probe = ActivationSet(1, acts[1].samples, class_labels=ds.labels)
        alpha = measure_quality(1, 0.0, clf, probe)
        assert alpha == clf.accuracy(acts[1].samples, ds.labels)

    def test_fully_pruned_layer_is_chance_level(self):
        spec = random_mlp([5, 10, 4], seed=9)
        ds = teacher_dataset(spec, 400, seed=10)
        acts, _ = forward(spec, ds.features)
        clf = train_linear_classifier(acts[1].samples, ds.labels, seed=11)
        dead = ActivationSet(1, np.zeros_like(acts[1].samples),
                             class_labels=ds.labels)
        alpha = measure_quality(1, 100.0, clf, dead)
        # constant features predict one class; accuracy equals its share
        shares = np.bincount(ds.labels, minlength=4) / len(ds.labels)
        assert alpha <= shares.max() + 1e-9

    def test_dimension_mismatch(self):
        spec = random_mlp([5, 10, 4], seed=12)
        ds = teacher_dataset(spec, 100, seed=13)
        acts, _ = forward(spec, ds.features)
        clf = train_linear_classifier(acts[1].samples, ds.labels, seed=14)
        wrong = ActivationSet(1, np.zeros((100, 3)), class_labels=ds.labels)
        with pytest.raises(ValidationError):
            measure_quality(1, 0.0, clf, wrong)

    def test_layer_mismatch(self):
        spec = random_mlp([5, 10, 4], seed=15)
        ds = teacher_dataset(spec, 100, seed=16)
        acts, _ = forward(spec, ds.features)
        clf = train_linear_classifier(acts[1].samples, ds.labels, seed=17)
        probe = ActivationSet(2, acts[1].samples, class_labels=ds.labels)
        with pytest.raises(ValidationError):
            measure_quality(1, 0.0, clf, probe)


class TestQualityCurves:
    def test_alpha_trend_non_increasing(self):
        from scipy.stats import spearmanr

        spec = random_mlp([8, 16, 16, 10], seed=18)
        ds = teacher_dataset(spec, 600, seed=19)
        curves = build_quality_curves(spec, ds, groups=4, seed=20)
        for curve in curves:
            rho = spearmanr(curve.c_values, curve.alpha_values).statistic
            assert rho <= 0.1  # noise guard; acceptance checks the median

    def test_magnitude_criterion_runs(self):
        spec = random_mlp([6, 8, 4], seed=21)
        ds = teacher_dataset(spec, 200, seed=22)
        curves = build_quality_curves(spec, ds, groups=4, criterion="magnitude",
                                      c_grid=(1, 51, 96), seed=23)
        assert len(curves) == 1
        assert len(curves[0].alpha_values) == 3

    def test_unknown_criterion(self):
        spec = random_mlp([6, 8, 4], seed=24)
        ds = teacher_dataset(spec, 50, seed=25)
        with pytest.raises(ValidationError):
            build_quality_curves(spec, ds, criterion="entropy")

    def test_curve_validation(self):
        with pytest.raises(ValidationError):
            QualityCurve(1, [1, 6], [0.5])
        with pytest.raises(ValidationError):
            QualityCurve(1, [1, 6], [0.5, 1.5])
        with pytest.raises(ValidationError):
            QualityCurve(1, [6, 1], [0.5, 0.5])


def _flat_curve(layer, alpha, grid=GRID):
    return QualityCurve(layer, list(grid), [alpha] * len(grid))


class TestAssignGammas:
    def test_member_layer_takes_max_above_chance(self):
        curve = _flat_curve(1, 0.5)
        plan = assign_gammas([curve], tau=0.96, num_classes=10)
        assert plan.gamma[1] == pytest.approx(0.96)
        assert 1 in plan.members_of_m

    def test_drop_below_chance_caps_gamma(self):
        alphas = [0.9 if c <= 46 else 0.05 for c in GRID]
        curve = QualityCurve(1, list(GRID), alphas)
        plan = assign_gammas([curve], tau=0.46, num_classes=10)
        assert plan.gamma[1] == pytest.approx(0.46)

    def test_tau_zero_all_zero(self):
        curves = [_flat_curve(1, 0.9), _flat_curve(2, 0.4)]
        plan = assign_gammas(curves, tau=0.0, num_classes=10)
        assert all(v == 0.0 for v in plan.gamma.values())

    def test_infeasible_tau_reports_range(self):
        curves = [_flat_curve(1, 0.9), _flat_curve(2, 0.4)]
        with pytest.raises(ValidationError, match="achievable"):
            assign_gammas(curves, tau=5.0, num_classes=10)

    def test_total_within_grid_step(self):
        rng = np.random.default_rng(26)
        for trial in range(20):
            curves = []
            for layer in range(1, 5):
                alphas = np.sort(rng.uniform(0.05, 0.95, len(GRID)))[::-1].tolist()
                curves.append(QualityCurve(layer, list(GRID), alphas))
            lo, hi = feasible_tau_range(curves, num_classes=10)
            tau = float(rng.uniform(lo, hi))
            plan = assign_gammas(curves, tau, num_classes=10)
            total = sum(plan.gamma.values())
            assert abs(total - tau) <= 0.05 + 1e-9

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(27)
        curves = []
        for layer in range(1, 5):
            alphas = np.sort(rng.uniform(0.05, 0.95, len(GRID)))[::-1].tolist()
            curves.append(QualityCurve(layer, list(GRID), alphas))
        lo_t, hi_t = feasible_tau_range(curves, num_classes=10)
        lo = assign_gammas(curves, lo_t + 0.3 * (hi_t - lo_t), num_classes=10)
        hi = assign_gammas(curves, lo_t + 0.8 * (hi_t - lo_t), num_classes=10)
        for layer in lo.gamma:
            assert hi.gamma[layer] >= lo.gamma[layer] - 1e-12

    def test_membership_invariant_under_uniform_rescaling(self):
        rng = np.random.default_rng(28)
        curves = []
        for layer in range(1, 5):
            alphas = rng.uniform(0.2, 0.9, len(GRID)).tolist()
            curves.append(QualityCurve(layer, list(GRID), alphas))
        scaled_curves = [QualityCurve(c.layer_index, c.c_values,
                                      [a * 0.5 for a in c.alpha_values])
                         for c in curves]
        base = assign_gammas(curves, feasible_tau_range(curves, 10)[0],
                             num_classes=10)
        scaled = assign_gammas(scaled_curves,
                               feasible_tau_range(scaled_curves, 10)[0],
                               num_classes=10)
        assert base.members_of_m == scaled.members_of_m

    def test_percentile_mode(self):
        curves = [_flat_curve(1, 0.9), _flat_curve(2, 0.5), _flat_curve(3, 0.2)]
        tau = feasible_tau_range(curves, 10, mode="percentile")[0]
        plan = assign_gammas(curves, tau=tau, num_classes=10, mode="percentile")
        assert 1 in plan.members_of_m


class TestPlanIo:
    def test_plan_round_trip(self, tmp_path):
        plan = PrunePlan(gamma={1: 0.5, 2: 0.25}, tau=0.75,
                         members_of_m=frozenset({1}), alpha_threshold=0.4)
        p = tmp_path / "plan.json"
        save_plan(p, plan)
        back = load_plan(p)
        assert back.gamma == plan.gamma
        assert back.members_of_m == plan.members_of_m
        assert back.gamma_vector(4) == [0.0, 0.5, 0.25, 0.0]

    def test_curves_csv_round_trip(self, tmp_path):
        curves = [QualityCurve(1, [1.0, 6.0], [0.5, 0.4]),
                  QualityCurve(2, [1.0, 6.0], [0.9, 0.8])]
        p = tmp_path / "curves.csv"
        save_curves_csv(p, curves)
        back = load_curves_csv(p)
        assert len(back) == 2
        assert back[0].alpha_values == [0.5, 0.4]
        assert back[1].layer_index == 2
