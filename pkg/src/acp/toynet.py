"""Minimal MLP evaluator and synthetic data for end-to-end runs.

Keeps the pipeline testable without any deep-learning framework: networks
are plain weight matrices with rectified-linear hidden layers, datasets
are Gaussian blobs, and "pre-trained" fixtures are random teacher
networks whose own argmax outputs define the labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .tensor_io import (
    ActivationSet,
    LayerSpec,
    NetworkManifest,
    WeightKernel,
    save_manifest,
    write_bundle,
)


@dataclass
class MlpSpec:
    """A dense feed-forward network: rectifier on hidden layers, linear output."""

    layer_sizes: list[int]
    weights: list[WeightKernel]
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ValidationError("need one weight matrix per layer transition")
        for idx, kernel in enumerate(self.weights):
            expect = (self.layer_sizes[idx + 1], self.layer_sizes[idx])
            if kernel.tensor.shape != expect:
                raise ValidationError(
                    f"weight {idx} has shape {kernel.tensor.shape}, expected {expect}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def random_mlp(layer_sizes: list[int], seed: int = 0) -> MlpSpec:
    """Gaussian-initialized network with 1/sqrt(fan_in) scaling."""
    rng = np.random.default_rng(seed)
    weights = []
    for idx, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
        w = rng.normal(scale=1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
        weights.append(WeightKernel(layer_index=idx + 1, tensor=w))
    return MlpSpec(layer_sizes=list(layer_sizes), weights=weights, seed=seed)


def _resolve_mask(mask, fan_out: int, fan_in: int) -> np.ndarray | None:
    if mask is None:
        return None
    keep = mask.filter_keep() if hasattr(mask, "filter_keep") else np.asarray(mask)
    if keep.shape != (fan_out, fan_in):
        raise ValidationError(
            f"mask shape {keep.shape} does not match weights ({fan_out}, {fan_in})")
    return keep.astype(bool)


def forward(spec: MlpSpec, inputs: np.ndarray,
            masks: dict[int, object] | None = None
            ) -> tuple[list[ActivationSet], np.ndarray]:
    """Evaluate the network, recording post-rectifier activations per layer.

    ``masks`` maps a layer index (1-based transition target) to a keep
    matrix or PruneMask; masked weight entries contribute exactly zero.
    The final transition is linear and its outputs are the logits.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ValidationError(
            f"inputs must be (m, {spec.layer_sizes[0]}), got {x.shape}")
    acts: list[ActivationSet] = [ActivationSet(layer_index=0, samples=x)]
    current = x
    for idx, kernel in enumerate(spec.weights):
        layer = idx + 1
        w = kernel.tensor
        keep = _resolve_mask(None if masks is None else masks.get(layer),
                             w.shape[0], w.shape[1])
        if keep is not None:
            w = w * keep
        z = current @ w.T
        if layer < spec.n_layers:
            current = np.maximum(z, 0.0)
            acts.append(ActivationSet(layer_index=layer, samples=current))
        else:
            current = z
            acts.append(ActivationSet(layer_index=layer, samples=current))
    return acts, current


@dataclass
class SynthDataset:
    """Feature matrix with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    seed: int = 0


def synth_dataset(num_classes: int, m: int, d: int, separation: float,
                  seed: int = 0) -> SynthDataset:
    """Gaussian blobs with class means placed on coordinate axes.

    Class c has mean separation * e_{c mod d}; zero separation makes the
    classes indistinguishable.
    """
    if m < num_classes:
        raise ValidationError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    base, extra = divmod(m, num_classes)
    counts = np.full(num_classes, base, dtype=np.int64)
    counts[:extra] += 1
    labels = np.repeat(np.arange(num_classes), counts)
    features = rng.normal(size=(m, d))
    for c in range(num_classes):
        features[labels == c, c % d] += separation
    order = rng.permutation(m)
    return SynthDataset(features=features[order], labels=labels[order],
                        num_classes=num_classes, seed=seed)


def teacher_dataset(spec: MlpSpec, m: int, seed: int = 0) -> SynthDataset:
    """Gaussian inputs labeled by the network's own argmax outputs.

    Unlike the blob generator the class counts here follow the teacher's
    decision regions, so they need not be balanced.
    """
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(m, spec.layer_sizes[0]))
    _, logits = forward(spec, features)
    return SynthDataset(features=features,
                        labels=np.argmax(logits, axis=1).astype(np.int64),
                        num_classes=spec.layer_sizes[-1], seed=seed)


def export_bundle(spec: MlpSpec, dataset: SynthDataset, bundle_path,
                  manifest_path) -> NetworkManifest:
    """Serialize weights plus activations on the dataset to NPZ + manifest.

    Labels are stored as float64 (the bundle format only carries floats)
    and the manifest records the entry name and class count.
    """
    acts, _ = forward(spec, dataset.features)
    entries: dict[str, np.ndarray] = {}
    layers: list[LayerSpec] = []
    for idx, kernel in enumerate(spec.weights):
        layer = idx + 1
        name = f"layer{layer}"
        entries[f"{name}.weight"] = kernel.tensor.astype(np.float64)
        entries[f"{name}.act"] = acts[layer].samples.astype(np.float64)
        layers.append(LayerSpec(
            name=name,
            weight_entry=f"{name}.weight",
            activation_entry=f"{name}.act",
            type="dense",
            out_filters=kernel.tensor.shape[0],
            in_filters=kernel.tensor.shape[1],
        ))
    entries["labels"] = dataset.labels.astype(np.float64)
    entries["inputs"] = dataset.features.astype(np.float64)
    manifest = NetworkManifest(layers=layers, labels_entry="labels",
                               num_classes=dataset.num_classes,
                               inputs_entry="inputs")
    write_bundle(bundle_path, entries)
    save_manifest(manifest_path, manifest)
    return manifest
