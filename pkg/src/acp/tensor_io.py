"""Tensor ingestion, bundle I/O, and storage/compression accounting.

The interchange format is NPY v1.0/v2.0 (single arrays) and NPZ archives
of NPY entries, restricted to little-endian C-order float32/float64.
Anything else is rejected rather than converted silently.  A network
manifest (JSON) names the layers in order and maps them to bundle entries.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .errors import FormatError, ValidationError

_ALLOWED_DTYPES = (np.dtype("<f4"), np.dtype("<f8"))


@dataclass(frozen=True)
class Tensor:
    """A validated dense array: finite values, C-order, float32/float64."""

    array: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.array.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.array.dtype

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the payload."""
        return self.array.reshape(-1)


@dataclass
class ActivationSet:
    """Per-sample scalar activations for every filter of one layer."""

    layer_index: int
    samples: np.ndarray                      # (m, n_filters)
    class_labels: np.ndarray | None = None   # (m,) ints, optional

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValidationError("activation samples must be a 2-D matrix")
        if self.class_labels is not None:
            labels = np.asarray(self.class_labels)
            if labels.shape != (self.samples.shape[0],):
                raise ValidationError("labels must have one entry per sample")
            if labels.size and labels.min() < 0:
                raise ValidationError("labels must be non-negative")
            self.class_labels = labels.astype(np.int64)

    @property
    def n_filters(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass
class WeightKernel:
    """A conv (out, in, kh, kw) or dense (out, in) weight tensor."""

    layer_index: int
    tensor: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.tensor.ndim not in (2, 4):
            raise ValidationError("weight kernel must be 2-D or 4-D")

    @property
    def out_filters(self) -> int:
        return self.tensor.shape[0]

    @property
    def in_filters(self) -> int:
        return self.tensor.shape[1]

    @property
    def kernel_area(self) -> int:
        if self.tensor.ndim == 2:
            return 1
        return self.tensor.shape[2] * self.tensor.shape[3]


@dataclass(frozen=True)
class CsrStats:
    """Storage cost of one weight matrix kept in compressed-sparse-row form."""

    rows: int
    cols: int
    nnz: int
    bytes: int
    value_width: int = 4
    index_width: int = 4

    @property
    def value_bytes(self) -> int:
        return self.value_width * self.nnz

    @property
    def index_bytes(self) -> int:
        return self.index_width * (self.nnz + self.rows + 1)


def _validate_loaded(arr: np.ndarray, origin: str) -> Tensor:
    if arr.dtype not in _ALLOWED_DTYPES:
        if arr.dtype.kind == "f" and arr.dtype.byteorder == ">":
            raise FormatError(f"{origin}: big-endian floats are not accepted")
        raise FormatError(
            f"{origin}: dtype {arr.dtype} not accepted (need little-endian float32/float64)")
    if arr.ndim >= 2 and np.isfortran(arr):
        raise FormatError(f"{origin}: Fortran-order arrays are not accepted")
    finite = np.isfinite(arr.reshape(-1))
    if not finite.all():
        idx = int(np.argmin(finite))
        raise ValidationError(f"{origin}: non-finite element at flat index {idx}")
    return Tensor(array=arr)


def read_tensor(path, entry: str | None = None) -> Tensor:
    """Read one tensor from an NPY file or a named entry of an NPZ archive."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        loaded = np.load(path, allow_pickle=False)
    except (ValueError, zipfile.BadZipFile, OSError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: malformed NPY/NPZ ({exc})") from exc
    if isinstance(loaded, np.lib.npyio.NpzFile):
        with loaded:
            if entry is None:
                raise ValidationError(f"{path}: NPZ archive requires an entry name")
            if entry not in loaded.files:
                raise ValidationError(f"{path}: no entry named {entry!r}")
            arr = loaded[entry]
        return _validate_loaded(arr, f"{path}:{entry}")
    if entry is not None:
        raise ValidationError(f"{path}: entry names only apply to NPZ archives")
    return _validate_loaded(loaded, str(path))


def read_bundle(path) -> dict[str, Tensor]:
    """Read every entry of an NPZ archive into a name -> Tensor mapping."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        loaded = np.load(path, allow_pickle=False)
    except (ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: malformed NPZ ({exc})") from exc
    if not isinstance(loaded, np.lib.npyio.NpzFile):
        raise FormatError(f"{path}: expected an NPZ archive")
    with loaded:
        return {name: _validate_loaded(loaded[name], f"{path}:{name}")
                for name in loaded.files}


def write_tensor(path, tensor: Tensor | np.ndarray) -> None:
    arr = tensor.array if isinstance(tensor, Tensor) else np.asarray(tensor)
    np.save(Path(path), np.ascontiguousarray(arr))


def write_bundle(path, entries: dict[str, np.ndarray | Tensor]) -> None:
    """Write an NPZ archive with deterministic bytes (fixed zip metadata)."""
    path = Path(path)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in entries:
            arr = entries[name]
            arr = arr.array if isinstance(arr, Tensor) else np.asarray(arr)
            buf = io.BytesIO()
            npy_format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def average_spatial(t: Tensor | np.ndarray, layer_index: int = 0,
                    class_labels=None) -> ActivationSet:
    """Collapse trailing spatial axes of (sample, filter, ...) to their mean."""
    arr = t.array if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if arr.ndim < 2:
        raise ValidationError("need at least (sample, filter) axes")
    if arr.ndim == 2:
        samples = arr.astype(np.float64)
    else:
        samples = arr.reshape(arr.shape[0], arr.shape[1], -1).mean(axis=2)
    return ActivationSet(layer_index=layer_index, samples=samples,
                         class_labels=class_labels)


def _filter_keep_matrix(mask, out_filters: int, in_filters: int) -> np.ndarray:
    if hasattr(mask, "filter_keep"):
        keep = mask.filter_keep()
    else:
        keep = np.asarray(mask)
    if keep.shape != (out_filters, in_filters):
        raise ValidationError(
            f"mask shape {keep.shape} does not match kernel grid "
            f"({out_filters}, {in_filters})")
    return keep.astype(bool)


def csr_memory(mask, weights: WeightKernel, value_width: int = 4,
               index_width: int = 4) -> CsrStats:
    """Bytes to store the masked kernel as CSR.

    The kernel is viewed as an (out_filters) x (in_filters * kernel_area)
    matrix; every entry whose (out, in) filter pair is retained counts as
    stored.  bytes = value_width*nnz + index_width*(nnz + rows + 1).
    """
    if value_width not in (4, 8) or index_width not in (4, 8):
        raise ValidationError("value/index widths must be 4 or 8 bytes")
    keep = _filter_keep_matrix(mask, weights.out_filters, weights.in_filters)
    area = weights.kernel_area
    rows = weights.out_filters
    cols = weights.in_filters * area
    nnz = int(keep.sum()) * area
    total = value_width * nnz + index_width * nnz + index_width * (rows + 1)
    return CsrStats(rows=rows, cols=cols, nnz=nnz, bytes=total,
                    value_width=value_width, index_width=index_width)


def compression_percent(masks, kernels) -> float:
    """Pruned prunable parameters as a percentage of all prunable parameters.

    ``masks`` aligns with ``kernels``; a ``None`` mask means the kernel is
    fully retained.  A kernel entry counts as pruned iff its (out, in)
    filter pair is masked.
    """
    if len(masks) != len(kernels):
        raise ValidationError("masks and kernels must align per layer")
    pruned = 0
    total = 0
    for mask, kernel in zip(masks, kernels):
        area = kernel.kernel_area
        n_pairs = kernel.out_filters * kernel.in_filters
        total += n_pairs * area
        if mask is None:
            continue
        keep = _filter_keep_matrix(mask, kernel.out_filters, kernel.in_filters)
        pruned += (n_pairs - int(keep.sum())) * area
    if total == 0:
        raise ValidationError("no prunable parameters")
    return 100.0 * pruned / total


@dataclass(frozen=True)
class LayerSpec:
    """One manifest row: a named layer bound to its bundle entries."""

    name: str
    weight_entry: str
    activation_entry: str
    type: str
    out_filters: int
    in_filters: int

    def __post_init__(self):
        if self.type not in ("conv", "dense"):
            raise ValidationError(f"layer type must be conv|dense, got {self.type!r}")


@dataclass
class NetworkManifest:
    """Ordered layer list plus optional dataset metadata for a bundle."""

    layers: list[LayerSpec]
    labels_entry: str | None = None
    num_classes: int | None = None
    inputs_entry: str | None = None

    def __post_init__(self):
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.in_filters != prev.out_filters:
                raise ValidationError(
                    f"layer {cur.name!r}: in_filters {cur.in_filters} does not "
                    f"match previous out_filters {prev.out_filters}")

    def to_dict(self) -> dict:
        out = {"layers": [vars(layer) for layer in self.layers]}
        for key in ("labels_entry", "num_classes", "inputs_entry"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def load_manifest(path) -> NetworkManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        layers = [LayerSpec(**entry) for entry in raw["layers"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: manifest missing required fields ({exc})") from exc
    return NetworkManifest(layers=layers,
                           labels_entry=raw.get("labels_entry"),
                           num_classes=raw.get("num_classes"),
                           inputs_entry=raw.get("inputs_entry"))


def save_manifest(path, manifest: NetworkManifest) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
