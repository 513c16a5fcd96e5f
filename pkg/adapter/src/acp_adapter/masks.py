"""Apply emitted pruning masks back onto a torch checkpoint.

Masks arrive as the toolkit's JSON schema: per layer pair, a base64
bit-packed keep matrix at group level plus the group scheme (balanced
sequential blocks).  A pruned (target group, source group) pair zeroes
every kernel entry between its member filters; untouched entries keep
their values bit-exactly.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from .bundle import read_manifest


def balanced_assignment(n_filters: int, n_groups: int) -> np.ndarray:
    """Filter -> group map for sequential blocks differing by at most one."""
    sizes = np.full(n_groups, n_filters // n_groups, dtype=np.int64)
    sizes[: n_filters % n_groups] += 1
    return np.repeat(np.arange(n_groups), sizes)


def _decode_keep(entry: dict) -> np.ndarray:
    shape = tuple(entry["shape"])
    bits = np.frombuffer(base64.b64decode(entry["keep_matrix"]), dtype=np.uint8)
    return np.unpackbits(bits, count=shape[0] * shape[1]).reshape(shape).astype(bool)


def filter_level_keep(entry: dict, masks_dir: Path) -> np.ndarray:
    """Expand one mask entry to (target_filters, source_filters) booleans.

    Prefers the saved filter-level NPY when present; otherwise re-derives
    the expansion from the recorded group scheme.
    """
    ref = entry.get("filter_level_expansion")
    scheme_t = entry["group_scheme"]["target"]
    scheme_s = entry["group_scheme"]["source"]
    expect = (scheme_t["n_filters"], scheme_s["n_filters"])
    if ref:
        path = Path(ref)
        if not path.is_absolute():
            path = masks_dir / path
        if path.exists():
            keep = np.load(path).astype(bool)
            if keep.shape != expect:
                raise ValueError(
                    f"expansion {path} has shape {keep.shape}, expected {expect}")
            return keep
    keep_groups = _decode_keep(entry)
    rows = balanced_assignment(scheme_t["n_filters"], scheme_t["n_groups"])
    cols = balanced_assignment(scheme_s["n_filters"], scheme_s["n_groups"])
    return keep_groups[np.ix_(rows, cols)]


def load_mask_entries(masks_path) -> list[dict]:
    raw = json.loads(Path(masks_path).read_text())
    return raw["masks"]


def apply_masks(state_dict: dict, masks_path, manifest_path) -> dict:
    """Return a new state dict with masked kernel entries zeroed.

    Mask layer pairs are resolved through the manifest (the pair's target
    index names the kernel).  A mask that cannot be resolved against the
    checkpoint aborts instead of being skipped.
    """
    manifest = read_manifest(manifest_path)
    layer_names = [layer["name"] for layer in manifest["layers"]]
    masks_dir = Path(masks_path).resolve().parent
    out = {key: value.clone() if isinstance(value, torch.Tensor) else value
           for key, value in state_dict.items()}
    for entry in load_mask_entries(masks_path):
        target_idx = entry["layer_pair"][1]
        if not 0 <= target_idx < len(layer_names):
            raise KeyError(f"mask references layer index {target_idx}, but the "
                           f"manifest lists {len(layer_names)} layers")
        param_name = f"{layer_names[target_idx]}.weight"
        if param_name not in out:
            raise KeyError(f"checkpoint has no parameter {param_name!r}")
        keep = filter_level_keep(entry, masks_dir)
        weight = out[param_name]
        if weight.shape[:2] != keep.shape:
            raise ValueError(
                f"{param_name}: kernel grid {tuple(weight.shape[:2])} does not "
                f"match mask {keep.shape}")
        keep_t = torch.from_numpy(keep.astype(np.bool_))
        extra = weight.dim() - 2
        out[param_name] = weight * keep_t.reshape(keep.shape + (1,) * extra).to(weight.dtype)
    return out
