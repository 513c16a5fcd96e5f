"""Command-line pipeline: estimate, oracle, prune, validate.

Exit codes: 0 success, 1 usage, 2 I/O or format failure, 3 validation
failure.  All subcommands are deterministic given --seed; --threads only
changes scheduling, never output bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .estimator import HashConfig, PhiSpec, estimate_acmi, phi_requires_weight
from .limit_planner import (
    QualityCurve,
    assign_gammas,
    build_quality_curves,
    load_curves_csv,
    load_plan,
    save_curves_csv,
    save_plan,
)
from .oracles import exact_cmi_discrete
from .pruning import PruneConfig, prune_network, save_masks, save_report, write_report_csv
from .tensor_io import (
    ActivationSet,
    WeightKernel,
    load_manifest,
    read_bundle,
    read_tensor,
)
from .toynet import MlpSpec
from . import validation


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise FormatError(f"{path}: config file must hold a JSON object")
    return raw


def _pick(args, config: dict, name: str, default):
    """Flag value if given, else config-file value, else default."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    if name in config:
        return config[name]
    return default


def _hash_config(args, config) -> HashConfig:
    return HashConfig(
        epsilon=_pick(args, config, "epsilon", None),
        c_h=int(_pick(args, config, "c_h", 4)),
        seed=int(_pick(args, config, "seed", 0)),
    )


def _cmd_estimate(args) -> int:
    config = _load_config_file(args.config)
    x = read_tensor(args.x).array
    y = read_tensor(args.y).array
    z = read_tensor(args.z).array if args.z else None
    variant = _pick(args, config, "phi", "constant_one")
    pair_weight = _pick(args, config, "pair_weight", None)
    if phi_requires_weight(variant) and pair_weight is None:
        raise ValidationError(f"phi variant {variant!r} requires --pair-weight")
    phi = PhiSpec(variant=variant,
                  pair_weight=None if pair_weight is None else float(pair_weight))
    est = estimate_acmi(x, y, z, phi=phi, cfg=_hash_config(args, config))
    print(json.dumps(est.as_dict(), sort_keys=True))
    return 0


def _cmd_oracle(args) -> int:
    pmf = read_tensor(args.pmf).array
    phi = read_tensor(args.phi).array if args.phi else None
    value = exact_cmi_discrete(pmf, phi)
    print(json.dumps({"value": value}, sort_keys=True))
    return 0


def _mlp_from_bundle(manifest, weights) -> MlpSpec:
    for layer in manifest.layers:
        if layer.type != "dense":
            raise ValidationError(
                f"layer {layer.name!r}: automatic limit planning needs an "
                "all-dense manifest (or precomputed --curves)")
    sizes = [manifest.layers[0].in_filters] + [l.out_filters for l in manifest.layers]
    kernels = [WeightKernel(layer_index=i + 1, tensor=weights[i].tensor)
               for i in range(len(manifest.layers))]
    return MlpSpec(layer_sizes=sizes, weights=kernels)


def _plan_gammas(args, config, manifest, bundle, weights, out_dir) -> list[float]:
    n_layers = len(manifest.layers)
    if args.plan:
        plan = load_plan(args.plan)
        return plan.gamma_vector(n_layers)
    tau = float(args.tau)
    if manifest.num_classes is None:
        raise ValidationError("manifest needs num_classes for limit planning")
    if args.curves:
        curves = load_curves_csv(args.curves)
    else:
        if manifest.inputs_entry is None or manifest.labels_entry is None:
            raise ValidationError(
                "limit planning needs inputs_entry and labels_entry in the "
                "manifest (or precomputed --curves)")
        spec = _mlp_from_bundle(manifest, weights)
        from .toynet import SynthDataset
        dataset = SynthDataset(
            features=bundle[manifest.inputs_entry].array,
            labels=bundle[manifest.labels_entry].array.astype(np.int64),
            num_classes=int(manifest.num_classes))
        seed = int(_pick(args, config, "seed", 0))
        toy_curves = build_quality_curves(
            spec, dataset, cfg=HashConfig(seed=seed), seed=seed,
            groups=int(_pick(args, config, "groups", 8)))
        # probe layers are MLP transitions; manifest rows sit one lower
        curves = [QualityCurve(c.layer_index - 1, c.c_values, c.alpha_values)
                  for c in toy_curves]
        save_curves_csv(out_dir / "curves.csv", curves)
    plan = assign_gammas(curves, tau, int(manifest.num_classes))
    save_plan(out_dir / "plan.json", plan)
    return plan.gamma_vector(n_layers)


def _parse_protect(raw: str | None) -> dict[int, float]:
    if not raw:
        return {}
    out = {}
    for item in raw.split(","):
        layer, _, frac = item.partition(":")
        out[int(layer)] = float(frac) if frac else 0.1
    return out


def _cmd_prune(args) -> int:
    config = _load_config_file(args.config)
    if (args.plan is None) == (args.tau is None):
        raise ValidationError("exactly one of --plan or --tau is required")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(args.manifest)
    bundle = read_bundle(args.bundle)
    weights: dict[int, WeightKernel] = {}
    activations: dict[int, ActivationSet] = {}
    for idx, layer in enumerate(manifest.layers):
        for entry in (layer.weight_entry, layer.activation_entry):
            if entry not in bundle:
                raise ValidationError(
                    f"layer {layer.name!r}: bundle is missing entry {entry!r}")
        weights[idx] = WeightKernel(layer_index=idx, tensor=bundle[layer.weight_entry].array)
        activations[idx] = ActivationSet(layer_index=idx,
                                         samples=bundle[layer.activation_entry].array)
        if weights[idx].out_filters != layer.out_filters:
            raise ValidationError(
                f"layer {layer.name!r}: kernel has {weights[idx].out_filters} "
                f"filters, manifest says {layer.out_filters}")

    gamma = _plan_gammas(args, config, manifest, bundle, weights, out_dir)
    seed = int(_pick(args, config, "seed", 0))
    prune_cfg = PruneConfig(
        delta=float(_pick(args, config, "delta", 0.0)),
        gamma=gamma,
        groups=int(_pick(args, config, "groups", 64)),
        phi_variant=_pick(args, config, "phi", "gauss_weight"),
        protect_fractions=_parse_protect(_pick(args, config, "protect", None)),
        hash_config=_hash_config(args, config),
        threads=int(_pick(args, config, "threads", 1)),
    )
    masks, report = prune_network(manifest, weights, activations, prune_cfg)
    save_masks(out_dir / "masks.json", masks, seed=seed,
               expansion_dir=str(out_dir / "masks"))
    save_report(out_dir / "report.json", report)
    write_report_csv(out_dir / "report.csv", report)
    print(json.dumps({"out": str(out_dir), "totals": report.totals}, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    config = _load_config_file(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(_pick(args, config, "seed", 0))
    trials = int(_pick(args, config, "trials", 10))
    eps = _pick(args, config, "epsilon", None)

    if args.experiment == "mse-n":
        headline = validation.mse_vs_samples(
            cfg=HashConfig(epsilon=eps or validation.SAMPLE_SWEEP_DEFAULT_EPSILON, seed=seed),
            trials=trials, seed=seed, include_act_phi=False)
        sweep = list(headline)
        for e in validation.SAMPLE_SWEEP_EPSILONS:
            for curve in validation.mse_vs_samples(
                    cfg=HashConfig(epsilon=e, seed=seed), trials=trials, seed=seed):
                curve.name = f"{curve.name}_eps{e}"
                sweep.append(curve)
        validation.write_curves_csv(out_dir / "mse_n.csv", headline)
        validation.write_curves_csv(out_dir / "mse_n_sweep.csv", sweep)
        curves = sweep
    elif args.experiment == "mse-d":
        headline = validation.mse_vs_dimension(
            cfg=HashConfig(epsilon=eps or validation.DIMENSION_SWEEP_DEFAULT_EPSILON,
                           seed=seed),
            trials=trials, seed=seed, include_act_phi=False)
        sweep = list(headline)
        for e in validation.DIMENSION_SWEEP_EPSILONS:
            for curve in validation.mse_vs_dimension(
                    cfg=HashConfig(epsilon=e, seed=seed), trials=trials, seed=seed):
                curve.name = f"{curve.name}_eps{e}"
                sweep.append(curve)
        validation.write_curves_csv(out_dir / "mse_d.csv", headline)
        validation.write_curves_csv(out_dir / "mse_d_sweep.csv", sweep)
        curves = sweep
    else:  # runtime
        curves = validation.runtime_vs_groups(
            trials=trials, seed=seed,
            phi_variants=("constant_one", "weight"))
        validation.write_curves_csv(out_dir / "runtime.csv", curves[:1])
        validation.write_curves_csv(out_dir / "runtime_sweep.csv", curves)

    if args.svg:
        validation.plot_curves_svg(out_dir / f"{args.experiment}.svg", curves,
                                   title=args.experiment)
    print(json.dumps({"out": str(out_dir), "experiment": args.experiment},
                     sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_est = sub.add_parser("estimate", help="score dependence between tensor dumps")
    p_est.add_argument("--x", required=True)
    p_est.add_argument("--y", required=True)
    p_est.add_argument("--z")
    p_est.add_argument("--phi")
    p_est.add_argument("--pair-weight", dest="pair_weight", type=float)
    p_est.add_argument("--epsilon", type=float)
    p_est.add_argument("--c-h", dest="c_h", type=int)
    p_est.add_argument("--seed", type=int)
    p_est.add_argument("--config")
    p_est.set_defaults(func=_cmd_estimate)

    p_or = sub.add_parser("oracle", help="exact score of a discrete pmf table")
    p_or.add_argument("--pmf", required=True)
    p_or.add_argument("--phi")
    p_or.set_defaults(func=_cmd_oracle)

    p_pr = sub.add_parser("prune", help="score, threshold, and emit masks")
    p_pr.add_argument("--bundle", required=True)
    p_pr.add_argument("--manifest", required=True)
    p_pr.add_argument("--plan")
    p_pr.add_argument("--tau", type=float)
    p_pr.add_argument("--curves")
    p_pr.add_argument("--delta", type=float)
    p_pr.add_argument("--phi")
    p_pr.add_argument("--groups", type=int)
    p_pr.add_argument("--protect")
    p_pr.add_argument("--epsilon", type=float)
    p_pr.add_argument("--c-h", dest="c_h", type=int)
    p_pr.add_argument("--seed", type=int)
    p_pr.add_argument("--threads", type=int)
    p_pr.add_argument("--out", required=True)
    p_pr.add_argument("--config")
    p_pr.set_defaults(func=_cmd_prune)

    p_val = sub.add_parser("validate", help="estimator validation curves")
    p_val.add_argument("--experiment", required=True,
                       choices=["mse-n", "mse-d", "runtime"])
    p_val.add_argument("--out", required=True)
    p_val.add_argument("--trials", type=int)
    p_val.add_argument("--seed", type=int)
    p_val.add_argument("--epsilon", type=float)
    p_val.add_argument("--svg", action="store_true")
    p_val.add_argument("--config")
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
