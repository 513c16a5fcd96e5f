"""Connectivity scoring and threshold pruning between adjacent layers.

Filters are partitioned into sequential balanced groups; for every
prunable target group the dependence on each source group is scored with
the hash estimator, conditioned on the remaining source groups.  Pairs
scoring at or below the threshold are pruned in ascending-score order
until the layer's pruning limit is reached.  Protected (highly sensitive)
groups keep all incoming connections.
"""

from __future__ import annotations

import base64
import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .estimator import (
    HashConfig,
    PhiSpec,
    derive_seed,
    estimate_acmi,
    phi_requires_weight,
)
from .sensitivity import FilterPartition, compute_sensitivity, partition_by_sensitivity
from .tensor_io import (
    ActivationSet,
    NetworkManifest,
    WeightKernel,
    compression_percent,
    csr_memory,
)


@dataclass(frozen=True)
class GroupScheme:
    """Sequential split of a layer's filters into balanced contiguous blocks."""

    layer_index: int
    n_filters: int
    n_groups: int

    def __post_init__(self):
        if not 1 <= self.n_groups <= self.n_filters:
            raise ValidationError(
                f"n_groups must lie in [1, {self.n_filters}], got {self.n_groups}")

    @cached_property
    def assignment(self) -> np.ndarray:
        """Filter index -> group index; block sizes differ by at most one."""
        sizes = np.full(self.n_groups, self.n_filters // self.n_groups, dtype=np.int64)
        sizes[: self.n_filters % self.n_groups] += 1
        return np.repeat(np.arange(self.n_groups), sizes)

    @cached_property
    def boundaries(self) -> np.ndarray:
        """Start offset of each block (usable with np.add.reduceat)."""
        counts = np.bincount(self.assignment, minlength=self.n_groups)
        return np.concatenate(([0], np.cumsum(counts)[:-1]))

    def members(self, group: int) -> np.ndarray:
        return np.nonzero(self.assignment == group)[0]


def group_activations(acts: ActivationSet | np.ndarray, scheme: GroupScheme) -> np.ndarray:
    """Aggregate per-filter activations to per-group means, per sample."""
    samples = acts.samples if isinstance(acts, ActivationSet) else np.asarray(acts)
    if samples.ndim != 2 or samples.shape[1] != scheme.n_filters:
        raise ValidationError(
            f"activations have {samples.shape[1] if samples.ndim == 2 else '?'} "
            f"filters, scheme expects {scheme.n_filters}")
    sums = np.add.reduceat(samples, scheme.boundaries, axis=1)
    counts = np.bincount(scheme.assignment, minlength=scheme.n_groups)
    return sums / counts[np.newaxis, :]


@dataclass
class ConnectivityMatrix:
    """Dependence scores between groups of a layer pair.

    ``scores[i, j]`` is the score of target group i on source group j;
    rows of protected groups are never scored and hold NaN.
    """

    layer_pair: tuple[int, int]
    scores: np.ndarray          # (G_target, G_source), NaN where not scored
    scored: np.ndarray          # boolean, same shape
    phi_variant: str
    config: HashConfig

    @property
    def n_scored(self) -> int:
        return int(self.scored.sum())


@dataclass
class PruneMask:
    """Keep/prune decisions at group level for one layer pair."""

    layer_pair: tuple[int, int]
    keep: np.ndarray            # (G_target, G_source) boolean
    scheme_source: GroupScheme
    scheme_target: GroupScheme
    n_scored: int = 0
    n_pruned: int = 0

    def filter_keep(self) -> np.ndarray:
        """Expand to a (target_filters, source_filters) boolean matrix."""
        rows = self.scheme_target.assignment
        cols = self.scheme_source.assignment
        return self.keep[np.ix_(rows, cols)]

    @property
    def pruned_fraction(self) -> float:
        return self.n_pruned / self.n_scored if self.n_scored else 0.0


def _standardize_columns(m: np.ndarray) -> np.ndarray:
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (m - mean) / std


def score_layer_pair(acts_source: np.ndarray, acts_target: np.ndarray,
                     partition: FilterPartition | None,
                     phi_weights: np.ndarray | None,
                     phi: PhiSpec | str = "constant_one",
                     cfg: HashConfig = HashConfig(),
                     layer_pair: tuple[int, int] = (0, 1),
                     threads: int = 1) -> ConnectivityMatrix:
    """Score every (target group, source group) pair of one layer pair.

    For target group i and source group j the estimate conditions on all
    source groups except j; a single-group source layer therefore reduces
    to the unconditional score.  Each pair runs under a sub-seed derived
    from (cfg.seed, i, j) so results are reproducible for any thread count.
    """
    a_src = np.asarray(acts_source, dtype=np.float64)
    a_tgt = np.asarray(acts_target, dtype=np.float64)
    if a_src.ndim != 2 or a_tgt.ndim != 2 or a_src.shape[0] != a_tgt.shape[0]:
        raise ValidationError("grouped activations must be matrices with equal rows")
    g_src = a_src.shape[1]
    g_tgt = a_tgt.shape[1]
    variant = phi.variant if isinstance(phi, PhiSpec) else phi
    base_weight = phi.pair_weight if isinstance(phi, PhiSpec) else None
    needs_weight = phi_requires_weight(variant)
    if needs_weight and phi_weights is None and base_weight is None:
        raise ValidationError(f"phi variant {variant!r} requires pair weights")
    if phi_weights is not None:
        phi_weights = np.asarray(phi_weights, dtype=np.float64)
        if phi_weights.shape != (g_tgt, g_src):
            raise ValidationError("phi_weights shape must be (G_target, G_source)")
        if phi_weights.min() < 0.0 or phi_weights.max() > 1.0:
            raise ValidationError("phi weights must lie in [0, 1]")

    uses_act = variant in ("act_norm", "weight_times_act_norm", "gauss_weight_act_norm")
    if uses_act:
        src_in, tgt_in = a_src, a_tgt
    else:
        # column-wise standardization commutes with column selection
        src_in, tgt_in = _standardize_columns(a_src), _standardize_columns(a_tgt)

    prunable = range(g_tgt) if partition is None else sorted(partition.prunable)
    scores = np.full((g_tgt, g_src), np.nan)
    scored = np.zeros((g_tgt, g_src), dtype=bool)

    def one_pair(task):
        i, j = task
        x = src_in[:, j:j + 1]
        y = tgt_in[:, i:i + 1]
        z = (np.concatenate((src_in[:, :j], src_in[:, j + 1:]), axis=1)
             if g_src > 1 else None)
        if needs_weight and phi_weights is not None:
            pw = float(phi_weights[i, j])
        else:
            pw = base_weight
        spec = PhiSpec(variant=variant, pair_weight=pw)
        sub = replace(cfg, seed=derive_seed(cfg.seed, i, j))
        return estimate_acmi(x, y, z, phi=spec, cfg=sub,
                             standardize=uses_act).value

    tasks = [(i, j) for i in prunable for j in range(g_src)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one_pair, tasks))
    else:
        values = [one_pair(t) for t in tasks]
    for (i, j), v in zip(tasks, values):
        scores[i, j] = v
        scored[i, j] = True
    return ConnectivityMatrix(layer_pair=layer_pair, scores=scores, scored=scored,
                              phi_variant=variant, config=cfg)


def threshold_prune(conn: ConnectivityMatrix, delta: float, gamma: float,
                    scheme_source: GroupScheme | None = None,
                    scheme_target: GroupScheme | None = None) -> PruneMask:
    """Prune scored pairs with score <= delta, lowest scores first, until
    the pruned fraction of scored pairs would exceed gamma.

    Ties are broken lexicographically on (target, source) group indices so
    the result is deterministic and independent of evaluation order.
    """
    if delta < 0:
        raise ValidationError("delta must be >= 0")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must lie in [0, 1]")
    g_tgt, g_src = conn.scores.shape
    if scheme_source is None:
        scheme_source = GroupScheme(conn.layer_pair[0], g_src, g_src)
    if scheme_target is None:
        scheme_target = GroupScheme(conn.layer_pair[1], g_tgt, g_tgt)
    keep = np.ones((g_tgt, g_src), dtype=bool)
    n_scored = conn.n_scored
    cand_i, cand_j = np.nonzero(conn.scored & (conn.scores <= delta))
    cand_s = conn.scores[cand_i, cand_j]
    order = np.lexsort((cand_j, cand_i, cand_s))
    cap = int(np.floor(gamma * n_scored + 1e-9))
    chosen = order[: min(cap, len(order))]
    keep[cand_i[chosen], cand_j[chosen]] = False
    return PruneMask(layer_pair=conn.layer_pair, keep=keep,
                     scheme_source=scheme_source, scheme_target=scheme_target,
                     n_scored=n_scored, n_pruned=len(chosen))


@dataclass
class PruneConfig:
    """Settings for a whole-network pruning run."""

    delta: float = 0.0
    gamma: list[float] = field(default_factory=list)   # one entry per layer
    groups: int | list[int] = 64
    phi_variant: str = "gauss_weight"
    protect_fractions: dict[int, float] = field(default_factory=dict)
    hash_config: HashConfig = field(default_factory=HashConfig)
    per_layer_delta: dict[int, float] = field(default_factory=dict)
    threads: int = 1
    value_width: int = 4
    index_width: int = 4

    def groups_for(self, layer: int, n_filters: int) -> int:
        g = self.groups[layer] if isinstance(self.groups, list) else self.groups
        return max(1, min(int(g), n_filters))

    def delta_for(self, layer: int) -> float:
        return self.per_layer_delta.get(layer, self.delta)


@dataclass
class PruneReport:
    """Per-layer pruning outcomes plus network-wide accounting."""

    layers: list[dict]
    totals: dict

    def to_dict(self) -> dict:
        return {"layers": self.layers, "totals": self.totals}


def pair_phi_weights(kernel: WeightKernel, scheme_target: GroupScheme,
                     scheme_source: GroupScheme) -> np.ndarray:
    """Mean |W| between each group pair, min-max rescaled to [0, 1].

    A constant kernel carries no ordering information and maps to all-ones.
    """
    w = kernel.tensor
    w_abs = np.abs(w).mean(axis=(2, 3)) if w.ndim == 4 else np.abs(w)
    row_sum = np.add.reduceat(w_abs, scheme_target.boundaries, axis=0)
    blk_sum = np.add.reduceat(row_sum, scheme_source.boundaries, axis=1)
    rows = np.bincount(scheme_target.assignment, minlength=scheme_target.n_groups)
    cols = np.bincount(scheme_source.assignment, minlength=scheme_source.n_groups)
    means = blk_sum / np.outer(rows, cols)
    lo, hi = means.min(), means.max()
    if hi - lo < 1e-15:
        return np.ones_like(means)
    return (means - lo) / (hi - lo)


def group_level_partition(filter_lam: np.ndarray, scheme: GroupScheme,
                          protect_fraction: float) -> FilterPartition:
    """Aggregate filter sensitivities to group means and partition groups."""
    sums = np.add.reduceat(np.asarray(filter_lam, dtype=np.float64),
                           scheme.boundaries)
    counts = np.bincount(scheme.assignment, minlength=scheme.n_groups)
    return partition_by_sensitivity(sums / counts, protect_fraction)


def prune_network(manifest: NetworkManifest,
                  weights: dict[int, WeightKernel],
                  activations: dict[int, ActivationSet],
                  config: PruneConfig) -> tuple[list[PruneMask], PruneReport]:
    """Run the full pruning loop over every adjacent layer pair.

    ``gamma`` entries of zero leave a pair untouched (no scoring); the
    first and last layers are conventionally zero.  Protection needs a
    downstream kernel, so the final pair never protects.
    """
    n_layers = len(manifest.layers)
    if len(config.gamma) != n_layers:
        raise ValidationError(
            f"gamma must list one entry per layer ({n_layers}), got {len(config.gamma)}")
    for idx in range(n_layers):
        if idx not in weights:
            raise ValidationError(f"missing weights for layer {manifest.layers[idx].name!r}")
        if idx not in activations:
            raise ValidationError(
                f"missing activations for layer {manifest.layers[idx].name!r}")

    masks: list[PruneMask] = []
    layer_rows: list[dict] = []
    for l in range(n_layers - 1):
        target = l + 1
        n_src = manifest.layers[l].out_filters
        n_tgt = manifest.layers[target].out_filters
        scheme_src = GroupScheme(l, n_src, config.groups_for(l, n_src))
        scheme_tgt = GroupScheme(target, n_tgt, config.groups_for(target, n_tgt))
        gamma_t = float(config.gamma[target])
        delta_t = config.delta_for(target)
        if gamma_t <= 0.0:
            mask = PruneMask(layer_pair=(l, target),
                             keep=np.ones((scheme_tgt.n_groups, scheme_src.n_groups), dtype=bool),
                             scheme_source=scheme_src, scheme_target=scheme_tgt)
        else:
            partition = None
            frac = config.protect_fractions.get(target, 0.0)
            if frac > 0.0 and (target + 1) in weights:
                sens = compute_sensitivity(weights[target + 1])
                partition = group_level_partition(sens.lam, scheme_tgt, frac)
            a_src = group_activations(activations[l], scheme_src)
            a_tgt = group_activations(activations[target], scheme_tgt)
            phi_w = pair_phi_weights(weights[target], scheme_tgt, scheme_src)
            conn = score_layer_pair(
                a_src, a_tgt, partition, phi_w, phi=config.phi_variant,
                cfg=replace(config.hash_config,
                            seed=derive_seed(config.hash_config.seed, target)),
                layer_pair=(l, target), threads=config.threads)
            mask = threshold_prune(conn, delta_t, gamma_t, scheme_src, scheme_tgt)
        masks.append(mask)
        layer_rows.append({
            "layer_pair": [l, target],
            "target_layer": manifest.layers[target].name,
            "n_scored": mask.n_scored,
            "n_pruned": mask.n_pruned,
            "pruned_fraction": mask.pruned_fraction,
            "delta_used": delta_t,
            "gamma_used": gamma_t,
        })

    kernels = [weights[i] for i in range(n_layers)]
    aligned = [None] + [m.filter_keep() for m in masks]
    comp = compression_percent(aligned, kernels)
    stats = [csr_memory(np.ones((k.out_filters, k.in_filters), dtype=bool) if m is None else m,
                        k, config.value_width, config.index_width)
             for m, k in zip(aligned, kernels)]
    for row, keep, kernel in zip(layer_rows, aligned[1:], kernels[1:]):
        row["compression_percent"] = compression_percent([keep], [kernel])
    totals = {
        "compression_percent": comp,
        "csr_bytes": int(sum(s.bytes for s in stats)),
        "csr_value_bytes": int(sum(s.value_bytes for s in stats)),
        "csr_index_bytes": int(sum(s.index_bytes for s in stats)),
        "value_width": config.value_width,
        "index_width": config.index_width,
        "bytes_formula": "bytes = value_width*nnz + index_width*(nnz + rows + 1)",
    }
    for row, stat in zip(layer_rows, stats[1:]):
        row["csr_bytes"] = int(stat.bytes)
    return masks, PruneReport(layers=layer_rows, totals=totals)


def _scheme_dict(s: GroupScheme) -> dict:
    return {"layer_index": s.layer_index, "n_filters": s.n_filters,
            "n_groups": s.n_groups}


def save_masks(path, masks: list[PruneMask], seed: int | None = None,
               expansion_dir: str | None = None) -> None:
    """Write masks as JSON (keep matrices as base64 row-major bits).

    With ``expansion_dir`` set, each mask's filter-level expansion is also
    saved as an NPY file (path recorded relative to the JSON file).
    """
    path = Path(path)
    out = {"version": 1, "masks": []}
    if seed is not None:
        out["seed"] = seed
    for m in masks:
        entry = {
            "layer_pair": list(m.layer_pair),
            "shape": list(m.keep.shape),
            "keep_matrix": base64.b64encode(
                np.packbits(m.keep.astype(np.uint8).reshape(-1)).tobytes()).decode("ascii"),
            "group_scheme": {"source": _scheme_dict(m.scheme_source),
                             "target": _scheme_dict(m.scheme_target)},
            "n_scored": m.n_scored,
            "n_pruned": m.n_pruned,
        }
        if expansion_dir is not None:
            exp_dir = Path(expansion_dir)
            exp_dir.mkdir(parents=True, exist_ok=True)
            npy_name = f"mask_{m.layer_pair[0]}_{m.layer_pair[1]}.npy"
            np.save(exp_dir / npy_name, m.filter_keep())
            full = (exp_dir / npy_name).resolve()
            try:
                ref = str(full.relative_to(path.resolve().parent))
            except ValueError:
                ref = str(full)
            entry["filter_level_expansion"] = ref
        out["masks"].append(entry)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


def load_masks(path) -> list[PruneMask]:
    raw = json.loads(Path(path).read_text())
    masks = []
    for entry in raw["masks"]:
        shape = tuple(entry["shape"])
        bits = np.frombuffer(base64.b64decode(entry["keep_matrix"]), dtype=np.uint8)
        keep = np.unpackbits(bits, count=shape[0] * shape[1]).reshape(shape).astype(bool)
        masks.append(PruneMask(
            layer_pair=tuple(entry["layer_pair"]),
            keep=keep,
            scheme_source=GroupScheme(**entry["group_scheme"]["source"]),
            scheme_target=GroupScheme(**entry["group_scheme"]["target"]),
            n_scored=entry.get("n_scored", 0),
            n_pruned=entry.get("n_pruned", 0),
        ))
    return masks


def save_report(path, report: PruneReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_report_csv(path, report: PruneReport) -> None:
    """Per-layer compression CSV for plotting."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "target_layer", "n_scored", "n_pruned",
                         "pruned_fraction", "compression_percent", "csr_bytes"])
        for row in report.layers:
            writer.writerow([row["layer_pair"][1], row["target_layer"],
                             row["n_scored"], row["n_pruned"],
                             repr(row["pruned_fraction"]),
                             repr(row["compression_percent"]), row["csr_bytes"]])
