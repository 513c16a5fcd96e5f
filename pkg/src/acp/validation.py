"""Estimator validation experiments: error scaling and run-time curves.

All experiments draw from a standard multivariate normal with identity
covariance, so the variables are jointly independent and the true
conditional dependence is zero; squared estimates are therefore squared
errors.  Quantizer widths are swept because the error regime depends
strongly on how densely the buckets are populated: the sample-count sweep
uses sub-unit widths, while the dimension sweep needs coarse cells to
keep the low-dimensional estimates in the dense regime.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .estimator import HashConfig, PhiSpec, derive_seed, estimate_acmi
from .pruning import GroupScheme, group_activations, score_layer_pair

SAMPLE_GRID = (500, 1000, 5000, 10000, 15000, 20000, 25000)
DIMENSION_GRID = (3, 10, 20, 30, 50)
GROUP_GRID = (16, 32, 64, 128, 256)

SAMPLE_SWEEP_EPSILONS = (0.1, 0.25, 0.5)
SAMPLE_SWEEP_DEFAULT_EPSILON = 0.5
DIMENSION_SWEEP_EPSILONS = (3.0, 4.0, 5.0)
DIMENSION_SWEEP_DEFAULT_EPSILON = 4.0


@dataclass
class CurvePoint:
    """Per-trial values plus quartile summary at one sweep position."""

    x: float
    values: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    @property
    def q25(self) -> float:
        return float(np.quantile(self.values, 0.25))

    @property
    def q75(self) -> float:
        return float(np.quantile(self.values, 0.75))


@dataclass
class Curve:
    """A named sweep with one CurvePoint per grid position."""

    name: str
    x_label: str
    points: list[CurvePoint]

    def medians(self) -> dict[float, float]:
        return {p.x: p.median for p in self.points}


def _null_estimate(n: int, d_x: int, d_y: int, d_z: int, phi: PhiSpec,
                   cfg: HashConfig, seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d_x))
    y = rng.normal(size=(n, d_y))
    z = rng.normal(size=(n, d_z)) if d_z else None
    sub = replace(cfg, seed=derive_seed(cfg.seed, seed))
    return estimate_acmi(x, y, z, phi=phi, cfg=sub).value


def mse_vs_samples(cfg: HashConfig | None = None, trials: int = 10,
                   seed: int = 0, sample_grid=SAMPLE_GRID,
                   include_act_phi: bool = True) -> list[Curve]:
    """Squared error of the null estimate as the sample count grows.

    X and Y are 1-D and Z is 2-D.  One curve per phi choice: constant
    scaling plus (optionally) the Gaussian activation-norm variant.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    base = cfg if cfg is not None else HashConfig(
        epsilon=SAMPLE_SWEEP_DEFAULT_EPSILON, seed=seed)
    phis = [("phi_one", PhiSpec())]
    if include_act_phi:
        phis.append(("phi_gauss_act", PhiSpec("gauss_weight_act_norm", pair_weight=1.0)))
    curves = []
    for label, phi in phis:
        points = []
        for n in sample_grid:
            vals = [_null_estimate(n, 1, 1, 2, phi, base,
                                   derive_seed(seed, n, t)) ** 2
                    for t in range(trials)]
            points.append(CurvePoint(x=float(n), values=vals))
        curves.append(Curve(name=label, x_label="n_samples", points=points))
    return curves


def mse_vs_dimension(cfg: HashConfig | None = None, trials: int = 10,
                     seed: int = 0, n_samples: int = 5000,
                     dimension_grid=DIMENSION_GRID,
                     include_act_phi: bool = True) -> list[Curve]:
    """Squared error of the null estimate as dimensionality grows.

    X, Y, Z all have dimension d at a fixed sample count.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    base = cfg if cfg is not None else HashConfig(
        epsilon=DIMENSION_SWEEP_DEFAULT_EPSILON, seed=seed)
    phis = [("phi_one", PhiSpec())]
    if include_act_phi:
        phis.append(("phi_gauss_act", PhiSpec("gauss_weight_act_norm", pair_weight=1.0)))
    curves = []
    for label, phi in phis:
        points = []
        for d in dimension_grid:
            vals = [_null_estimate(n_samples, d, d, d, phi, base,
                                   derive_seed(seed, d, t)) ** 2
                    for t in range(trials)]
            points.append(CurvePoint(x=float(d), values=vals))
        curves.append(Curve(name=label, x_label="dimension", points=points))
    return curves


def runtime_vs_groups(n_filters: int = 256, n_samples: int = 2000,
                      group_grid=GROUP_GRID, trials: int = 10,
                      cfg: HashConfig | None = None, seed: int = 0,
                      phi_variants=("constant_one",)) -> list[Curve]:
    """Wall-clock seconds to score one full layer pair at each group count.

    The fixture is a pair of equally wide layers with Gaussian
    activations; weight-based phi variants use uniform pair weights.
    """
    if n_filters < max(group_grid):
        raise ValidationError("fixture needs at least as many filters as groups")
    base = cfg if cfg is not None else HashConfig(epsilon=0.5, seed=seed)
    _warmup(base)
    rng = np.random.default_rng(seed)
    acts_src = rng.normal(size=(n_samples, n_filters))
    acts_tgt = rng.normal(size=(n_samples, n_filters))
    curves = []
    for variant in phi_variants:
        points = []
        for g in group_grid:
            scheme = GroupScheme(0, n_filters, g)
            a_src = group_activations(acts_src, scheme)
            a_tgt = group_activations(acts_tgt, scheme)
            weights = np.full((g, g), 0.5) if variant != "constant_one" else None
            secs = []
            for t in range(trials):
                t0 = time.perf_counter()
                score_layer_pair(a_src, a_tgt, None, weights, phi=variant,
                                 cfg=replace(base, seed=derive_seed(seed, g, t)))
                secs.append(time.perf_counter() - t0)
            points.append(CurvePoint(x=float(g), values=secs))
        curves.append(Curve(name=f"phi_{variant}", x_label="groups", points=points))
    return curves


def _warmup(cfg: HashConfig) -> None:
    """One throwaway estimate so jit compilation never lands in a timing."""
    rng = np.random.default_rng(0)
    estimate_acmi(rng.normal(size=(4096, 1)), rng.normal(size=(4096, 1)),
                  rng.normal(size=(4096, 2)), cfg=cfg)


def estimator_time_exponent(cfg: HashConfig | None = None, seed: int = 0,
                            sample_grid=(1000, 10000, 100000, 1000000),
                            repeats: int = 3) -> float:
    """Least-squares slope of log(time) vs log(N) for the null estimate."""
    base = cfg if cfg is not None else HashConfig(epsilon=0.5, seed=seed)
    _warmup(base)
    times = []
    for n in sample_grid:
        rng = np.random.default_rng(derive_seed(seed, n))
        x = rng.normal(size=(n, 1))
        y = rng.normal(size=(n, 1))
        z = rng.normal(size=(n, 2))
        best = min(_timed_estimate(x, y, z, base) for _ in range(repeats))
        times.append(best)
    logs_n = np.log(np.asarray(sample_grid, dtype=np.float64))
    logs_t = np.log(np.asarray(times))
    slope = np.polyfit(logs_n, logs_t, 1)[0]
    return float(slope)


def _timed_estimate(x, y, z, cfg) -> float:
    t0 = time.perf_counter()
    estimate_acmi(x, y, z, cfg=cfg)
    return time.perf_counter() - t0


def write_curves_csv(path, curves: list[Curve]) -> None:
    """One row per (curve, x): columns x, median, q25, q75."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["curve", "x", "median", "q25", "q75"])
        for curve in curves:
            for p in curve.points:
                writer.writerow([curve.name, repr(p.x), repr(p.median),
                                 repr(p.q25), repr(p.q75)])


def read_curves_csv(path) -> dict[str, list[tuple[float, float, float, float]]]:
    out: dict[str, list[tuple[float, float, float, float]]] = {}
    with Path(path).open() as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["curve"], []).append(
                (float(row["x"]), float(row["median"]),
                 float(row["q25"]), float(row["q75"])))
    return out


def plot_curves_svg(path, curves: list[Curve], title: str = "",
                    log_x: bool = True) -> None:
    """Render median curves with quartile bands to an SVG (needs matplotlib)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ValidationError("SVG plots require matplotlib") from exc
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        xs = [p.x for p in curve.points]
        ax.plot(xs, [p.median for p in curve.points], marker="o", label=curve.name)
        ax.fill_between(xs, [p.q25 for p in curve.points],
                        [p.q75 for p in curve.points], alpha=0.2)
    if log_x:
        ax.set_xscale("log")
    ax.set_xlabel(curves[0].x_label if curves else "x")
    ax.set_ylabel("median")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
