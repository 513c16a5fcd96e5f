"""MLP evaluator and synthetic dataset tests."""

import numpy as np
import pytest

from acp.errors import ValidationError
from acp.limit_planner import train_linear_classifier
from acp.tensor_io import WeightKernel, load_manifest, read_bundle
from acp.toynet import (
    MlpSpec,
    export_bundle,
    forward,
    random_mlp,
    synth_dataset,
    teacher_dataset,
)


def _identity_mlp(n, layers=2):
    kernels = [WeightKernel(i + 1, np.eye(n)) for i in range(layers)]
    return MlpSpec(layer_sizes=[n] * (layers + 1), weights=kernels)


def _naive_forward(spec, x, masks=None):
    acts = [x]
    cur = x
    for idx, kernel in enumerate(spec.weights):
        layer = idx + 1
        w = kernel.tensor.copy()
        if masks and layer in masks:
            w = w * masks[layer]
        nxt = np.zeros((cur.shape[0], w.shape[0]))
        for s in range(cur.shape[0]):
            for o in range(w.shape[0]):
                nxt[s, o] = float(np.dot(w[o], cur[s]))
        if layer < len(spec.weights):
            nxt = np.maximum(nxt, 0.0)
        acts.append(nxt)
        cur = nxt
    return acts, cur


class TestForward:
    def test_identity_passthrough(self):
        spec = _identity_mlp(3)
        x = np.abs(np.random.default_rng(0).normal(size=(5, 3)))
        _, logits = forward(spec, x)
        assert np.allclose(logits, x)

    def test_full_mask_zeroes_layer(self):
        spec = _identity_mlp(3)
        x = np.ones((4, 3))
        acts, logits = forward(spec, x, masks={1: np.zeros((3, 3), dtype=bool)})
        assert np.all(acts[1].samples == 0.0)
        assert np.all(logits == 0.0)

    def test_matches_naive_loop(self):
        spec = random_mlp([4, 6, 5, 3], seed=1)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 4))
        masks = {2: rng.random((5, 6)) < 0.6}
        acts, logits = forward(spec, x, masks=masks)
        ref_acts, ref_logits = _naive_forward(spec, x, masks)
        assert np.allclose(logits, ref_logits)
        for got, ref in zip(acts, ref_acts):
            assert np.allclose(got.samples, ref)

    def test_mask_equals_manual_zeroing(self):
        spec = random_mlp([4, 6, 3], seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(10, 4))
        keep = rng.random((6, 4)) < 0.5
        _, masked_logits = forward(spec, x, masks={1: keep})
        zeroed = MlpSpec(
            layer_sizes=spec.layer_sizes,
            weights=[WeightKernel(1, spec.weights[0].tensor * keep),
                     spec.weights[1]])
        _, manual_logits = forward(zeroed, x)
        assert np.array_equal(masked_logits, manual_logits)

    def test_input_width_checked(self):
        spec = _identity_mlp(3)
        with pytest.raises(ValidationError):
            forward(spec, np.zeros((2, 4)))

    def test_mask_shape_checked(self):
        spec = _identity_mlp(3)
        with pytest.raises(ValidationError):
            forward(spec, np.zeros((2, 3)), masks={1: np.ones((2, 2), dtype=bool)})


class TestSynthDataset:
    def test_balanced_counts(self):
        ds = synth_dataset(num_classes=3, m=10, d=4, separation=1.0, seed=0)
        counts = np.bincount(ds.labels, minlength=3)
        assert counts.max() - counts.min() <= 1

    def test_zero_separation_is_chance(self):
        ds = synth_dataset(num_classes=4, m=800, d=6, separation=0.0, seed=1)
        clf = train_linear_classifier(ds.features[:400], ds.labels[:400], seed=2)
        acc = clf.accuracy(ds.features[400:], ds.labels[400:])
        assert abs(acc - 0.25) < 0.12

    def test_wide_separation_is_separable(self):
        ds = synth_dataset(num_classes=3, m=600, d=5, separation=10.0, seed=3)
        clf = train_linear_classifier(ds.features, ds.labels, seed=4)
        assert clf.accuracy(ds.features, ds.labels) >= 0.99

    def test_seed_determinism(self):
        a = synth_dataset(3, 50, 4, 2.0, seed=5)
        b = synth_dataset(3, 50, 4, 2.0, seed=5)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_needs_enough_samples(self):
        with pytest.raises(ValidationError):
            synth_dataset(num_classes=5, m=3, d=2, separation=1.0)


class TestTeacherDataset:
    def test_deterministic(self):
        spec = random_mlp([5, 8, 4], seed=6)
        a = teacher_dataset(spec, 100, seed=7)
        b = teacher_dataset(spec, 100, seed=7)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_labels_in_range(self):
        spec = random_mlp([5, 8, 4], seed=8)
        ds = teacher_dataset(spec, 200, seed=9)
        assert ds.labels.min() >= 0
        assert ds.labels.max() < 4


class TestExportBundle:
    def test_round_trip_shapes(self, tmp_path):
        spec = random_mlp([4, 6, 3], seed=10)
        ds = teacher_dataset(spec, 50, seed=11)
        bundle_path = tmp_path / "net.npz"
        manifest_path = tmp_path / "net.json"
        export_bundle(spec, ds, bundle_path, manifest_path)
        manifest = load_manifest(manifest_path)
        bundle = read_bundle(bundle_path)
        for layer in manifest.layers:
            w = bundle[layer.weight_entry]
            a = bundle[layer.activation_entry]
            assert w.shape == (layer.out_filters, layer.in_filters)
            assert a.shape == (50, layer.out_filters)
        assert manifest.num_classes == 3
        assert bundle[manifest.labels_entry].shape == (50,)
        assert bundle[manifest.inputs_entry].shape == (50, 4)

    def test_re_export_is_bit_identical(self, tmp_path):
        spec = random_mlp([4, 6, 3], seed=12)
        ds = teacher_dataset(spec, 40, seed=13)
        p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
        export_bundle(spec, ds, p1, tmp_path / "a.json")
        export_bundle(spec, ds, p2, tmp_path / "b.json")
        assert p1.read_bytes() == p2.read_bytes()


def test_mlp_spec_shape_validation():
    with pytest.raises(ValidationError):
        MlpSpec(layer_sizes=[3, 4], weights=[WeightKernel(1, np.ones((5, 3)))])
    with pytest.raises(ValidationError):
        MlpSpec(layer_sizes=[3, 4, 2], weights=[WeightKernel(1, np.ones((4, 3)))])
