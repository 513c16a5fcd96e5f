"""Export a trained torch model's weights and activations to a bundle.

Conv2d and Linear modules are discovered in forward-call order via hooks;
activations are averaged over spatial positions so every (sample, filter)
pair yields one scalar.  Layers that cannot join the sequential chain
(shortcut/downsample convs, flatten-expanded classifiers, grouped convs,
reused modules) are reported as skipped, never silently dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .bundle import write_bundle, write_manifest


@dataclass
class ExportReport:
    """What made it into the bundle and what was left out (with reasons)."""

    layers: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    n_samples: int = 0


def _spatial_mean(out: torch.Tensor) -> torch.Tensor:
    if out.dim() < 2:
        raise ValueError("layer output needs (batch, channels, ...) shape")
    if out.dim() == 2:
        return out
    return out.flatten(2).mean(dim=2)


def _trace(model: nn.Module, samples: torch.Tensor, batch_size: int):
    """Run the samples through the model, capturing per-layer activations.

    Returns the module call order and, per module, the stacked spatially
    averaged activations.
    """
    order: list[tuple[str, nn.Module]] = []
    seen: set[str] = set()
    chunks: dict[str, list[torch.Tensor]] = {}
    pass_counts: dict[str, int] = {}
    reused: set[str] = set()
    hooks = []

    def make_hook(name, module):
        def hook(_mod, _inp, out):
            if name not in seen:
                seen.add(name)
                order.append((name, module))
            pass_counts[name] = pass_counts.get(name, 0) + 1
            chunks.setdefault(name, []).append(_spatial_mean(out.detach()))
        return hook

    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.Linear)):
            hooks.append(module.register_forward_hook(make_hook(name, module)))
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, samples.shape[0], batch_size):
                pass_counts.clear()
                model(samples[start:start + batch_size])
                reused.update(n for n, c in pass_counts.items() if c > 1)
    finally:
        for h in hooks:
            h.remove()
        if was_training:
            model.train()
    acts = {name: torch.cat(parts, dim=0) for name, parts in chunks.items()
            if name not in reused}
    return order, acts, reused


def _layer_shape(module: nn.Module) -> tuple[int, int, str] | None:
    if isinstance(module, nn.Conv2d):
        if module.groups != 1:
            return None
        return module.out_channels, module.in_channels, "conv"
    if isinstance(module, nn.Linear):
        return module.out_features, module.in_features, "dense"
    return None


def export(model: nn.Module, samples, bundle_path, manifest_path,
           labels=None, num_classes: int | None = None,
           batch_size: int = 64) -> ExportReport:
    """Write the model's sequential conv/dense chain as NPZ + manifest.

    A layer joins the chain only when its input width matches the previous
    exported layer's output width; everything else (residual shortcut
    convs, flattened classifier heads, grouped convolutions) lands in the
    report's ``skipped`` list.  Weights keep their checkpoint values
    bit-exactly.  Activations are each exported module's own forward
    output on ``samples``, spatially averaged; functional nonlinearities
    applied outside the module are not part of the capture.
    """
    samples_t = torch.as_tensor(np.asarray(samples))
    calls, acts, reused = _trace(model, samples_t, batch_size)
    report = ExportReport(n_samples=int(samples_t.shape[0]))

    entries: dict[str, np.ndarray] = {}
    layers: list[dict] = []
    prev_out: int | None = None
    for name, module in calls:
        shape = _layer_shape(module)
        if shape is None:
            report.skipped.append(
                (name, f"unsupported layer type {type(module).__name__}"))
            continue
        out_f, in_f, kind = shape
        if name in reused:
            report.skipped.append((name, "module called more than once"))
            continue
        if prev_out is not None and in_f != prev_out:
            report.skipped.append(
                (name, f"input width {in_f} does not continue the chain "
                       f"(previous layer emits {prev_out}); off the "
                       "sequential main path"))
            continue
        weight = module.weight.detach().cpu().numpy()
        entries[f"{name}.weight"] = weight.astype(np.float32, copy=False)
        entries[f"{name}.act"] = acts[name].cpu().numpy().astype(np.float32)
        layers.append({
            "name": name,
            "weight_entry": f"{name}.weight",
            "activation_entry": f"{name}.act",
            "type": kind,
            "out_filters": out_f,
            "in_filters": in_f,
        })
        report.layers.append(name)
        prev_out = out_f

    labels_entry = None
    if labels is not None:
        entries["labels"] = np.asarray(labels).astype(np.float64)
        labels_entry = "labels"
    write_bundle(bundle_path, entries)
    write_manifest(manifest_path, layers, labels_entry=labels_entry,
                   num_classes=num_classes)
    return report
