"""Automatic per-layer pruning limits from activation-quality curves.

For each layer a linear max-margin classifier is trained on clean
activations and re-evaluated on activations collected after the layer is
probe-pruned to each compression level c; the resulting accuracy curve
alpha(c) drives the limit assignment.  Layers whose peak accuracy sits in
the top band may be pruned as far as accuracy stays above chance; the
remaining layers share a single accuracy threshold chosen so the summed
limits hit the requested network-wide total.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .estimator import HashConfig, derive_seed
from .pruning import GroupScheme, PruneMask, group_activations, score_layer_pair
from .tensor_io import ActivationSet
from .toynet import MlpSpec, SynthDataset, forward

DEFAULT_C_GRID = tuple(range(1, 100, 5))  # 1, 6, 11, ..., 96


@dataclass
class LinearClassifier:
    """One-vs-rest linear hinge classifier with internal standardization."""

    weights: np.ndarray       # (n_classes, d + 1); last column is the bias
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    @property
    def n_features(self) -> int:
        return self.weights.shape[1] - 1

    def _augment(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValidationError(
                f"features must be (m, {self.n_features}), got {x.shape}")
        x = (x - self.feature_mean) / self.feature_scale
        return np.hstack([x, np.ones((x.shape[0], 1))])

    def decision(self, features: np.ndarray) -> np.ndarray:
        return self._augment(features) @ self.weights.T

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision(features), axis=1)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(features) == np.asarray(labels)))


def train_linear_classifier(features, labels, epochs: int = 20,
                            reg: float = 1e-4, seed: int = 0,
                            batch_size: int = 32) -> LinearClassifier:
    """Stochastic subgradient descent on the multiclass hinge loss.

    Deterministic given the seed: shuffling, batching, and the decaying
    step size depend only on it.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2:
        raise ValidationError("features must be a 2-D matrix")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features must be finite")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValidationError("need at least two classes")
    n_classes = int(classes.max()) + 1
    m, d = x.shape

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale < 1e-12, 1.0, scale)
    xa = np.hstack([(x - mean) / scale, np.ones((m, 1))])

    target = -np.ones((m, n_classes))
    target[np.arange(m), y] = 1.0

    rng = np.random.default_rng(seed)
    w = np.zeros((n_classes, d + 1))
    step = 0
    eta0 = 1.0
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            xb = xa[idx]
            tb = target[idx]
            step += 1
            eta = eta0 / (1.0 + eta0 * reg * step)
            margin = 1.0 - tb * (xb @ w.T)
            viol = (margin > 0.0).astype(np.float64)
            grad = -(viol * tb).T @ xb / len(idx) + reg * w
            w -= eta * grad
    return LinearClassifier(weights=w, feature_mean=mean, feature_scale=scale)


def measure_quality(layer_index: int, c: float, classifier: LinearClassifier,
                    pruned_acts: ActivationSet) -> float:
    """Accuracy of the fixed classifier on the pruned layer's activations."""
    if pruned_acts.class_labels is None:
        raise ValidationError("pruned activations carry no labels")
    if pruned_acts.layer_index != layer_index:
        raise ValidationError(
            f"activations are for layer {pruned_acts.layer_index}, expected {layer_index}")
    return classifier.accuracy(pruned_acts.samples, pruned_acts.class_labels)


@dataclass
class QualityCurve:
    """Accuracy alpha at each probed compression level c for one layer."""

    layer_index: int
    c_values: list[float]
    alpha_values: list[float]

    def __post_init__(self):
        if len(self.c_values) != len(self.alpha_values):
            raise ValidationError("c and alpha lists must have equal length")
        if any(not 0.0 <= a <= 1.0 for a in self.alpha_values):
            raise ValidationError("alpha values must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.c_values, self.c_values[1:])):
            raise ValidationError("c grid must be strictly ascending")

    @property
    def peak(self) -> float:
        return max(self.alpha_values)

    def largest_c_above(self, threshold: float, strict: bool) -> float:
        """Largest grid c whose alpha clears the threshold, 0 if none."""
        best = 0.0
        for c, a in zip(self.c_values, self.alpha_values):
            if (a > threshold) if strict else (a >= threshold):
                best = max(best, c)
        return best


def build_quality_curves(spec: MlpSpec, dataset: SynthDataset,
                         layers: list[int] | None = None,
                         c_grid=DEFAULT_C_GRID,
                         groups: int = 8,
                         criterion: str = "acmi",
                         cfg: HashConfig = HashConfig(),
                         epochs: int = 20, reg: float = 1e-4,
                         seed: int = 0) -> list[QualityCurve]:
    """Probe-prune each layer over the c grid and record classifier accuracy.

    The probe ranks a layer's incoming group pairs once (ascending
    dependence score, or mean weight magnitude with criterion="magnitude")
    and prunes the lowest-ranked c% at every grid point.
    """
    if criterion not in ("acmi", "magnitude"):
        raise ValidationError(f"unknown probe criterion {criterion!r}")
    if layers is None:
        layers = list(range(1, spec.n_layers))  # hidden transitions only
    acts, _ = forward(spec, dataset.features)
    curves = []
    for layer in layers:
        if not 1 <= layer <= spec.n_layers - 1:
            raise ValidationError(f"layer {layer} has no prunable incoming pair")
        kernel = spec.weights[layer - 1]
        n_tgt, n_src = kernel.tensor.shape
        scheme_src = GroupScheme(layer - 1, n_src, min(groups, n_src))
        scheme_tgt = GroupScheme(layer, n_tgt, min(groups, n_tgt))
        a_src = group_activations(acts[layer - 1].samples, scheme_src)
        a_tgt = group_activations(acts[layer].samples, scheme_tgt)
        if criterion == "acmi":
            conn = score_layer_pair(
                a_src, a_tgt, None, None, phi="constant_one",
                cfg=replace(cfg, seed=derive_seed(cfg.seed, layer)),
                layer_pair=(layer - 1, layer))
            flat_rank = np.argsort(conn.scores, axis=None, kind="stable")
        else:
            w_abs = np.abs(kernel.tensor)
            blk = np.add.reduceat(np.add.reduceat(w_abs, scheme_tgt.boundaries, axis=0),
                                  scheme_src.boundaries, axis=1)
            flat_rank = np.argsort(blk, axis=None, kind="stable")
        n_pairs = scheme_tgt.n_groups * scheme_src.n_groups

        classifier = train_linear_classifier(
            acts[layer].samples, dataset.labels, epochs=epochs, reg=reg,
            seed=derive_seed(seed, layer))
        alphas = []
        for c in c_grid:
            k = int(round(c / 100.0 * n_pairs))
            keep = np.ones(n_pairs, dtype=bool)
            keep[flat_rank[:k]] = False
            mask = PruneMask(layer_pair=(layer - 1, layer),
                             keep=keep.reshape(scheme_tgt.n_groups, scheme_src.n_groups),
                             scheme_source=scheme_src, scheme_target=scheme_tgt)
            pruned_acts, _ = forward(spec, dataset.features, masks={layer: mask})
            probe = ActivationSet(layer_index=layer,
                                  samples=pruned_acts[layer].samples,
                                  class_labels=dataset.labels)
            alphas.append(measure_quality(layer, c, classifier, probe))
        curves.append(QualityCurve(layer_index=layer, c_values=list(c_grid),
                                   alpha_values=alphas))
    return curves


@dataclass
class PrunePlan:
    """Per-layer upper pruning limits summing (near) a network-wide target."""

    gamma: dict[int, float]
    tau: float
    members_of_m: frozenset[int] = frozenset()
    alpha_threshold: float = 0.0

    def gamma_vector(self, n_layers: int) -> list[float]:
        """Length-n vector with zeros for layers not in the plan."""
        return [float(self.gamma.get(i, 0.0)) for i in range(n_layers)]

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "alpha_threshold": self.alpha_threshold,
            "members_of_M": sorted(self.members_of_m),
            "gamma": {str(k): v for k, v in sorted(self.gamma.items())},
        }


def _total_gamma(curves, members, gamma_m, threshold) -> float:
    total = sum(gamma_m.values())
    for curve in curves:
        if curve.layer_index not in members:
            total += curve.largest_c_above(threshold, strict=False) / 100.0
    return total


def _top_band_members(curves, num_classes, top_band, mode):
    peaks = np.array([c.peak for c in curves])
    if mode == "range":
        cut = peaks.min() + (1.0 - top_band) * (peaks.max() - peaks.min())
    else:
        cut = float(np.quantile(peaks, 1.0 - top_band))
    members = frozenset(c.layer_index for c, p in zip(curves, peaks) if p >= cut)
    chance = 1.0 / num_classes
    gamma_m = {c.layer_index: c.largest_c_above(chance, strict=True) / 100.0
               for c in curves if c.layer_index in members}
    return members, gamma_m


def feasible_tau_range(curves: list["QualityCurve"], num_classes: int,
                       top_band: float = 0.8, mode: str = "range"
                       ) -> tuple[float, float]:
    """Smallest and largest positive totals a plan can reach (tau=0 aside)."""
    members, gamma_m = _top_band_members(curves, num_classes, top_band, mode)
    return (_total_gamma(curves, members, gamma_m, 2.0),
            _total_gamma(curves, members, gamma_m, 0.0))


def achievable_totals(curves: list["QualityCurve"], num_classes: int,
                      top_band: float = 0.8, mode: str = "range") -> list[float]:
    """Every total the shared-threshold family can reach, ascending.

    The threshold only matters at the observed accuracy values, so the set
    is finite; a requested tau within one grid step of some entry is
    guaranteed reachable.
    """
    members, gamma_m = _top_band_members(curves, num_classes, top_band, mode)
    candidates = {0.0, 2.0}
    for curve in curves:
        if curve.layer_index not in members:
            candidates.update(curve.alpha_values)
    totals = {_total_gamma(curves, members, gamma_m, th) for th in candidates}
    return sorted(totals)


def assign_gammas(curves: list[QualityCurve], tau: float, num_classes: int,
                  top_band: float = 0.8, mode: str = "range") -> PrunePlan:
    """Assign per-layer limits from quality curves subject to a total.

    Layers whose peak accuracy falls in the top band (by default the top
    80% of the peak range; mode="percentile" uses the peak distribution
    instead) get the largest c that stays above chance.  The remaining
    layers share an accuracy threshold found by bisection so the summed
    limits land within one grid step of tau.
    """
    if not curves:
        raise ValidationError("no quality curves supplied")
    if num_classes < 2:
        raise ValidationError("num_classes must be >= 2")
    if mode not in ("range", "percentile"):
        raise ValidationError(f"unknown top-band mode {mode!r}")
    if tau < 0:
        raise ValidationError("tau must be >= 0")

    layer_ids = [c.layer_index for c in curves]
    if len(set(layer_ids)) != len(layer_ids):
        raise ValidationError("duplicate layer curves")
    steps = [(c.c_values[1] - c.c_values[0]) / 100.0
             for c in curves if len(c.c_values) > 1]
    grid_step = min(steps) if steps else 0.05

    if tau == 0.0:
        return PrunePlan(gamma={i: 0.0 for i in layer_ids}, tau=0.0,
                         members_of_m=frozenset(), alpha_threshold=float("inf"))

    members, gamma_m = _top_band_members(curves, num_classes, top_band, mode)
    lo_total = _total_gamma(curves, members, gamma_m, 2.0)
    hi_total = _total_gamma(curves, members, gamma_m, 0.0)
    if not lo_total - grid_step <= tau <= hi_total + grid_step:
        raise ValidationError(
            f"tau={tau} infeasible; achievable total range is "
            f"[{lo_total:.4f}, {hi_total:.4f}] (plus tau=0)")

    lo_th, hi_th = 0.0, 1.0 + 1e-9
    for _ in range(60):
        mid = (lo_th + hi_th) / 2.0
        if _total_gamma(curves, members, gamma_m, mid) > tau:
            lo_th = mid
        else:
            hi_th = mid
    cands = [(abs(_total_gamma(curves, members, gamma_m, th) - tau), th)
             for th in (hi_th, lo_th)]
    _, threshold = min(cands, key=lambda t: (t[0], -t[1]))

    gamma = dict(gamma_m)
    for curve in curves:
        if curve.layer_index not in members:
            gamma[curve.layer_index] = curve.largest_c_above(threshold, strict=False) / 100.0
    return PrunePlan(gamma=gamma, tau=tau, members_of_m=members,
                     alpha_threshold=threshold)


def save_plan(path, plan: PrunePlan) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n")


def load_plan(path) -> PrunePlan:
    raw = json.loads(Path(path).read_text())
    return PrunePlan(gamma={int(k): float(v) for k, v in raw["gamma"].items()},
                     tau=float(raw["tau"]),
                     members_of_m=frozenset(raw.get("members_of_M", [])),
                     alpha_threshold=float(raw.get("alpha_threshold", 0.0)))


def save_curves_csv(path, curves: list[QualityCurve]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "c", "alpha"])
        for curve in curves:
            for c, a in zip(curve.c_values, curve.alpha_values):
                writer.writerow([curve.layer_index, repr(float(c)), repr(float(a))])


def load_curves_csv(path) -> list[QualityCurve]:
    rows: dict[int, list[tuple[float, float]]] = {}
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(int(row["layer"]), []).append(
                (float(row["c"]), float(row["alpha"])))
    curves = []
    for layer in sorted(rows):
        pts = sorted(rows[layer])
        curves.append(QualityCurve(layer_index=layer,
                                   c_values=[p[0] for p in pts],
                                   alpha_values=[p[1] for p in pts]))
    return curves
