"""Hash-based estimation of adaptive (conditional) mutual information.

Samples of each variable are quantized onto a grid (floor quantizer with a
shared random offset), the quantized vectors are mapped into a fixed number
of buckets by a seeded integer hash, and the dependence score is computed
from joint and marginal bucket-collision counts.  The score applies a
non-negative scaling function ``phi`` to every bucket triple, so magnitude
information from network weights (or activation norms) can reweight the
probabilistic measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import ValidationError

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)

PHI_VARIANTS = (
    "constant_one",
    "weight",
    "weight_squared",
    "gauss_weight",
    "act_norm",
    "weight_times_act_norm",
    "gauss_weight_act_norm",
)

_WEIGHT_VARIANTS = frozenset(
    {"weight", "weight_squared", "gauss_weight", "weight_times_act_norm",
     "gauss_weight_act_norm"}
)
_ACT_VARIANTS = frozenset(
    {"act_norm", "weight_times_act_norm", "gauss_weight_act_norm"}
)


def phi_requires_weight(variant: str) -> bool:
    """True for scaling-function variants that need a per-pair weight."""
    return variant in _WEIGHT_VARIANTS


def g_fn(t):
    """Convex divergence kernel (t-1)^2 / (2(t+1)); zero at t=1, 1/2 at t=0.

    Accepts scalars or arrays; t must be non-negative (t=0 is the limit
    reached when a joint ratio vanishes).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValidationError("g_fn requires t >= 0")
    out = (t_arr - 1.0) ** 2 / (2.0 * (t_arr + 1.0))
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(out)
    return out


def _mix64(h: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer over uint64 arrays (wrapping arithmetic)."""
    h = h ^ (h >> np.uint64(30))
    h = h * _MIX_A
    h = h ^ (h >> np.uint64(27))
    h = h * _MIX_B
    h = h ^ (h >> np.uint64(31))
    return h


def derive_seed(master_seed: int, *parts: int) -> int:
    """Deterministic sub-seed from a master seed and integer identifiers.

    Used to give every estimation call (e.g. one per group pair) its own
    seed so results do not depend on scheduling order.
    """
    with np.errstate(over="ignore"):
        h = np.array([master_seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
        h = _mix64(h ^ _GOLDEN)
        for p in parts:
            v = np.array([int(p) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
            h = _mix64(h ^ (v * _GOLDEN))
    return int(h[0])


@dataclass(frozen=True)
class HashConfig:
    """Quantizer and bucket-hash parameters.

    ``epsilon`` is the quantizer cell width; ``None`` selects the default
    N**(-1/(2*total_dim)) on internally standardized inputs.  ``b_offset``
    is the shared quantizer offset in [0, epsilon]; ``None`` draws it from
    the seeded stream once per estimation call.  The bucket count is
    ``c_h * N``.
    """

    epsilon: float | None = None
    b_offset: float | None = None
    c_h: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if self.c_h < 1:
            raise ValidationError("c_h must be a positive integer")
        if self.b_offset is not None:
            if self.epsilon is None:
                raise ValidationError("b_offset requires an explicit epsilon")
            if not 0.0 <= self.b_offset <= self.epsilon:
                raise ValidationError("b_offset must lie in [0, epsilon]")

    def resolved(self, n_samples: int, total_dim: int) -> "HashConfig":
        """Fill in epsilon and b_offset for a concrete sample set."""
        eps = self.epsilon
        if eps is None:
            eps = float(n_samples) ** (-1.0 / (2.0 * max(total_dim, 1)))
        b = self.b_offset
        if b is None:
            b = eps * float(np.random.default_rng(self.seed).random())
        return replace(self, epsilon=eps, b_offset=b)


def h1_quantize(x, cfg: HashConfig) -> np.ndarray:
    """Component-wise floor quantizer floor((x_i + b) / epsilon)."""
    if cfg.epsilon is None:
        raise ValidationError("h1_quantize requires a concrete epsilon")
    b = cfg.b_offset if cfg.b_offset is not None else 0.0
    x_arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x_arr)):
        raise ValidationError("h1_quantize requires finite inputs")
    return np.floor((x_arr + b) / cfg.epsilon).astype(np.int64)


def _column_salts(n_cols: int, seed: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        idx = np.arange(1, n_cols + 1, dtype=np.uint64)
        base = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        return _mix64(idx * _GOLDEN + base)


def _mix64_inplace(h: np.ndarray, tmp: np.ndarray) -> np.ndarray:
    """In-place SplitMix64 finalizer; identical output to ``_mix64``."""
    np.right_shift(h, np.uint64(30), out=tmp)
    np.bitwise_xor(h, tmp, out=h)
    np.multiply(h, _MIX_A, out=h)
    np.right_shift(h, np.uint64(27), out=tmp)
    np.bitwise_xor(h, tmp, out=h)
    np.multiply(h, _MIX_B, out=h)
    np.right_shift(h, np.uint64(31), out=tmp)
    np.bitwise_xor(h, tmp, out=h)
    return h


def _hash_rows(q: np.ndarray, n_buckets: int, seed: int) -> np.ndarray:
    """Map each row of a quantized integer matrix to a bucket in [1, n_buckets].

    Per-column salts keep the combiner position-sensitive while the whole
    reduction stays vectorized over rows.  The hot path works in place on
    two scratch buffers; values match the reference one-liner
    mix(init ^ xor_c mix(q_c * GOLDEN ^ salt_c)).
    """
    if n_buckets < 1:
        raise ValidationError("n_buckets must be >= 1")
    n, d = q.shape
    with np.errstate(over="ignore"):
        init = _mix64(np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _GOLDEN],
                               dtype=np.uint64))[0]
        if d:
            work = q.astype(np.uint64)
            tmp = np.empty_like(work)
            np.multiply(work, _GOLDEN, out=work)
            np.bitwise_xor(work, _column_salts(d, seed)[np.newaxis, :], out=work)
            _mix64_inplace(work, tmp)
            acc = np.bitwise_xor.reduce(work, axis=1)
            np.bitwise_xor(acc, init, out=acc)
        else:
            acc = np.full(n, init, dtype=np.uint64)
        _mix64_inplace(acc, np.empty_like(acc))
    return (acc % np.uint64(n_buckets)).astype(np.int64) + 1


def h2_bucket(q, n_buckets: int, seed: int) -> int:
    """Seeded integer hash of one quantized vector into [1, n_buckets]."""
    q_arr = np.asarray(q, dtype=np.int64).reshape(1, -1)
    return int(_hash_rows(q_arr, n_buckets, seed)[0])


@dataclass(frozen=True)
class PhiSpec:
    """Scaling-function choice for the estimator.

    Weight-based variants need ``pair_weight`` (a per-pair scalar rescaled
    to [0, 1]); activation-norm variants are evaluated per bucket triple
    from the mean L2 norm of the raw (x, y) samples that landed there.
    """

    variant: str = "constant_one"
    pair_weight: float | None = None

    def __post_init__(self):
        if self.variant not in PHI_VARIANTS:
            raise ValidationError(f"unknown phi variant {self.variant!r}")
        if self.variant in _WEIGHT_VARIANTS:
            if self.pair_weight is None:
                raise ValidationError(
                    f"phi variant {self.variant!r} requires pair_weight")
            if not 0.0 <= self.pair_weight <= 1.0:
                raise ValidationError("pair_weight must lie in [0, 1]")

    @property
    def uses_act_norm(self) -> bool:
        return self.variant in _ACT_VARIANTS

    def scale_factor(self) -> float:
        """Call-constant phi value for variants without bucket dependence."""
        w = self.pair_weight
        if self.variant == "constant_one":
            return 1.0
        if self.variant == "weight":
            return float(w)
        if self.variant == "weight_squared":
            return float(w) ** 2
        if self.variant == "gauss_weight":
            return math.exp(-float(w) ** 2 / 2.0)
        raise ValidationError(
            f"phi variant {self.variant!r} is bucket-dependent")

    def bucket_values(self, mean_norms: np.ndarray) -> np.ndarray:
        """Per-bucket phi values from mean activation norms."""
        a = np.asarray(mean_norms, dtype=np.float64)
        if self.variant == "act_norm":
            return a
        w = float(self.pair_weight)
        if self.variant == "weight_times_act_norm":
            return w * a
        if self.variant == "gauss_weight_act_norm":
            return np.exp(-(w ** 2) * a ** 2 / 2.0)
        raise ValidationError(
            f"phi variant {self.variant!r} is call-constant")


@dataclass
class CollisionTable:
    """Joint and marginal bucket-collision counts for one sample set.

    Stores the realized joint triples plus the three marginal tables as
    sorted key/count arrays; ``joint_to_*`` align each realized triple with
    its marginal entries.  Dict views are materialized lazily.
    """

    total: int
    joint_keys: np.ndarray      # (K, 3) bucket ids
    joint_counts: np.ndarray    # (K,)
    xz_keys: np.ndarray         # (Kxz, 2)
    xz_counts: np.ndarray
    yz_keys: np.ndarray         # (Kyz, 2)
    yz_counts: np.ndarray
    z_keys: np.ndarray          # (Kz,)
    z_counts: np.ndarray
    joint_to_xz: np.ndarray = field(repr=False, default=None)
    joint_to_yz: np.ndarray = field(repr=False, default=None)
    joint_to_z: np.ndarray = field(repr=False, default=None)

    @cached_property
    def joint(self) -> dict:
        return {tuple(k): int(c) for k, c in zip(self.joint_keys, self.joint_counts)}

    @cached_property
    def xz(self) -> dict:
        return {tuple(k): int(c) for k, c in zip(self.xz_keys, self.xz_counts)}

    @cached_property
    def yz(self) -> dict:
        return {tuple(k): int(c) for k, c in zip(self.yz_keys, self.yz_counts)}

    @cached_property
    def z(self) -> dict:
        return {int(k): int(c) for k, c in zip(self.z_keys, self.z_counts)}

    def validate(self) -> None:
        n = self.total
        for counts in (self.joint_counts, self.xz_counts, self.yz_counts, self.z_counts):
            if int(counts.sum()) != n:
                raise ValidationError("collision counts do not sum to N")
        n_ik = self.xz_counts[self.joint_to_xz]
        n_jk = self.yz_counts[self.joint_to_yz]
        n_k = self.z_counts[self.joint_to_z]
        if np.any(self.joint_counts > np.minimum(n_ik, n_jk)):
            raise ValidationError("joint count exceeds a marginal count")
        if np.any(n_ik > n_k) or np.any(n_jk > n_k):
            raise ValidationError("pair count exceeds conditioning count")


def _as_matrix(a, name: str) -> np.ndarray:
    if a is None:
        raise ValidationError(f"{name} must not be None")
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 1-D or 2-D")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def _standardize(m: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per column; constant columns are centered only."""
    if m.size == 0:
        return m
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (m - mean) / std


def _quantize(s: np.ndarray, cfg: HashConfig) -> np.ndarray:
    """floor((s + b) / epsilon) with minimal temporaries."""
    buf = s + cfg.b_offset
    np.divide(buf, cfg.epsilon, out=buf)
    np.floor(buf, out=buf)
    return buf.astype(np.int64)


if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _fused_bucketize(s, b, eps, salts, init, n_buckets,
                         golden, mix_a, mix_b):  # pragma: no cover - jitted
        n, d = s.shape
        out = np.empty(n, dtype=np.int64)
        for r in range(n):
            acc = np.uint64(0)
            for c in range(d):
                q = np.int64(np.floor((s[r, c] + b) / eps))
                h = np.uint64(q) * golden ^ salts[c]
                h ^= h >> np.uint64(30)
                h *= mix_a
                h ^= h >> np.uint64(27)
                h *= mix_b
                h ^= h >> np.uint64(31)
                acc ^= h
            acc ^= init
            acc ^= acc >> np.uint64(30)
            acc *= mix_a
            acc ^= acc >> np.uint64(27)
            acc *= mix_b
            acc ^= acc >> np.uint64(31)
            out[r] = np.int64(acc % np.uint64(n_buckets)) + 1
        return out


def _bucketize(s: np.ndarray, cfg: HashConfig, n_buckets: int) -> np.ndarray:
    """Quantize a float matrix and hash each row; fused kernel when available.

    Both paths produce bit-identical buckets; the fused path just avoids
    the intermediate quantized/mixed matrices.
    """
    n, d = s.shape
    if numba is not None and d > 0 and s.size >= 4096:
        with np.errstate(over="ignore"):
            init = _mix64(np.array(
                [np.uint64(cfg.seed & 0xFFFFFFFFFFFFFFFF) ^ _GOLDEN],
                dtype=np.uint64))[0]
            salts = _column_salts(d, cfg.seed)
        return _fused_bucketize(np.ascontiguousarray(s), cfg.b_offset,
                                cfg.epsilon, salts, init, n_buckets,
                                _GOLDEN, _MIX_A, _MIX_B)
    return _hash_rows(_quantize(s, cfg), n_buckets, cfg.seed)


def _rank(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values, inverse = np.unique(codes, return_inverse=True)
    return values, inverse


def _count_buckets(bx, by, bz, n: int):
    """Build the collision table plus sample->entry inverse maps."""
    ux, rx = _rank(bx)
    uy, ry = _rank(by)
    uz, rz = _rank(bz)
    n_ux, n_uy, n_uz = len(ux), len(uy), len(uz)
    if n_ux * n_uy * n_uz > 2 ** 62:
        raise ValidationError("bucket key space too large to combine")

    z_counts = np.bincount(rz, minlength=n_uz).astype(np.int64)

    xz_code = rx * n_uz + rz
    xz_u, xz_inv, xz_counts = np.unique(xz_code, return_inverse=True, return_counts=True)
    yz_code = ry * n_uz + rz
    yz_u, yz_inv, yz_counts = np.unique(yz_code, return_inverse=True, return_counts=True)
    j_code = (rx * n_uy + ry) * n_uz + rz
    j_u, j_inv, j_counts = np.unique(j_code, return_inverse=True, return_counts=True)

    # decompose the sorted joint codes back into rank triples
    j_rx = j_u // (n_uy * n_uz)
    rem = j_u % (n_uy * n_uz)
    j_ry = rem // n_uz
    j_rz = rem % n_uz

    joint_to_xz = np.searchsorted(xz_u, j_rx * n_uz + j_rz)
    joint_to_yz = np.searchsorted(yz_u, j_ry * n_uz + j_rz)

    table = CollisionTable(
        total=n,
        joint_keys=np.column_stack((ux[j_rx], uy[j_ry], uz[j_rz])),
        joint_counts=j_counts.astype(np.int64),
        xz_keys=np.column_stack((ux[xz_u // n_uz], uz[xz_u % n_uz])),
        xz_counts=xz_counts.astype(np.int64),
        yz_keys=np.column_stack((uy[yz_u // n_uz], uz[yz_u % n_uz])),
        yz_counts=yz_counts.astype(np.int64),
        z_keys=uz,
        z_counts=z_counts,
        joint_to_xz=joint_to_xz,
        joint_to_yz=joint_to_yz,
        joint_to_z=j_rz,
    )
    return table, j_inv, rz


def _prepare(x, y, z, cfg: HashConfig, standardize: bool):
    xm = _as_matrix(x, "X")
    ym = _as_matrix(y, "Y")
    if z is None:
        zm = np.empty((xm.shape[0], 0), dtype=np.float64)
    else:
        zm = np.asarray(z, dtype=np.float64)
        if zm.ndim == 1:
            zm = zm.reshape(-1, 1)
        if zm.ndim != 2:
            raise ValidationError("Z must be 1-D or 2-D")
        if not np.all(np.isfinite(zm)):
            raise ValidationError("Z contains non-finite values")
    n = xm.shape[0]
    if ym.shape[0] != n or zm.shape[0] != n:
        raise ValidationError("X, Y, Z must have equal row counts")
    if n < 1:
        raise ValidationError("empty input")
    total_dim = xm.shape[1] + ym.shape[1] + zm.shape[1]
    resolved = cfg.resolved(n, total_dim)
    sx, sy, sz = (xm, ym, zm)
    if standardize:
        sx, sy, sz = _standardize(xm), _standardize(ym), _standardize(zm)
    f = resolved.c_h * n
    bx = _bucketize(sx, resolved, f)
    by = _bucketize(sy, resolved, f)
    bz = _bucketize(sz, resolved, f)
    return xm, ym, resolved, bx, by, bz, n


def build_collision_table(x, y, z, cfg: HashConfig, standardize: bool = True) -> CollisionTable:
    """Count joint and marginal bucket collisions for samples of X, Y, Z.

    Z may be None or zero-width, which collapses the conditioning to a
    single bucket (the unconditional case).
    """
    _, _, _, bx, by, bz, n = _prepare(x, y, z, cfg, standardize)
    table, _, _ = _count_buckets(bx, by, bz, n)
    return table


@dataclass(frozen=True)
class Estimate:
    """Result of one estimation call."""

    value: float
    n_samples: int
    config: HashConfig
    phi: PhiSpec

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "n": self.n_samples,
            "config": {
                "epsilon": self.config.epsilon,
                "b_offset": self.config.b_offset,
                "c_h": self.config.c_h,
                "seed": self.config.seed,
            },
            "phi": {"variant": self.phi.variant, "pair_weight": self.phi.pair_weight},
        }


def estimate_acmi(x, y, z, phi: PhiSpec = PhiSpec(), cfg: HashConfig = HashConfig(),
                  standardize: bool = True) -> Estimate:
    """Estimate the scaled conditional dependence of X and Y given Z.

    The score is the plug-in divergence of the bucketed empirical measure:
    over every bucket triple (i, j, k) whose conditional marginal counts
    N_ik and N_jk are positive, it accumulates

        phi(i,j,k) * (r_ik r_jk / r_k) * g(r_ijk r_k / (r_ik r_jk)),

    where unrealized triples (N_ijk = 0) enter through the g(0) = 1/2 limit.
    Non-negative for non-negative phi; exactly zero when, conditioned on
    each occupied bucket of Z, X is constant.
    """
    xm, ym, resolved, bx, by, bz, n = _prepare(x, y, z, cfg, standardize)
    if n < 2:
        raise ValidationError("need at least 2 samples")
    table, joint_inv, z_inv = _count_buckets(bx, by, bz, n)

    n_tot = float(n)
    n_ijk = table.joint_counts.astype(np.float64)
    n_ik = table.xz_counts[table.joint_to_xz].astype(np.float64)
    n_jk = table.yz_counts[table.joint_to_yz].astype(np.float64)
    n_k = table.z_counts[table.joint_to_z].astype(np.float64)

    coef = n_ik * n_jk / (n_k * n_tot)
    ratio = n_ijk * n_k / (n_ik * n_jk)
    g_vals = (ratio - 1.0) ** 2 / (2.0 * (ratio + 1.0))

    # coefficient mass of unrealized (i, j) pairs per conditioning bucket
    s_k = np.bincount(table.joint_to_z, weights=n_ik * n_jk,
                      minlength=len(table.z_counts))
    zc = table.z_counts.astype(np.float64)
    zero_mass = (zc ** 2 - s_k) / (zc * n_tot)
    g_zero = 0.5

    if phi.uses_act_norm:
        norms = np.sqrt((xm ** 2).sum(axis=1) + (ym ** 2).sum(axis=1))
        triple_mean = np.bincount(joint_inv, weights=norms) / n_ijk
        phi_triple = phi.bucket_values(triple_mean)
        # unrealized triples fall back to the conditioning bucket's mean norm
        z_mean = np.bincount(z_inv, weights=norms) / zc
        phi_zero = phi.bucket_values(z_mean)
        value = float(np.dot(phi_triple, coef * g_vals)
                      + g_zero * np.dot(phi_zero, zero_mass))
    else:
        scale = phi.scale_factor()
        value = scale * float(np.dot(coef, g_vals) + g_zero * zero_mass.sum())

    return Estimate(value=value, n_samples=n, config=resolved, phi=phi)


def estimate_ami(x, y, phi: PhiSpec = PhiSpec(), cfg: HashConfig = HashConfig(),
                 standardize: bool = True) -> Estimate:
    """Unconditional variant: all samples share a single conditioning bucket."""
    return estimate_acmi(x, y, None, phi=phi, cfg=cfg, standardize=standardize)
