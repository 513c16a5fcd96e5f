"""Deterministic NPZ/manifest writing matching the pruning toolkit's schema.

The toolkit consumes NPZ archives of little-endian C-order float32/float64
NPY entries plus a JSON manifest listing layers in order:
{"layers": [{name, weight_entry, activation_entry, type, out_filters,
in_filters}], "labels_entry"?, "num_classes"?}.  Zip metadata is pinned so
identical payloads give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format


def write_bundle(path, entries: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in entries:
            arr = np.ascontiguousarray(entries[name])
            if arr.dtype not in (np.dtype("<f4"), np.dtype("<f8")):
                raise ValueError(f"entry {name!r}: bundle entries must be "
                                 f"little-endian float32/float64, got {arr.dtype}")
            buf = io.BytesIO()
            npy_format.write_array(buf, arr)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def write_manifest(path, layers: list[dict], labels_entry: str | None = None,
                   num_classes: int | None = None) -> None:
    out: dict = {"layers": layers}
    if labels_entry is not None:
        out["labels_entry"] = labels_entry
    if num_classes is not None:
        out["num_classes"] = num_classes
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
