"""Bi-level Gaussian ensemble: parameters, derived scalings, and data generation.

The ensemble has d = floor(n^p) isotropic Gaussian features per point. The
first s = floor(n^r) features are favored with weight lambda_F = a*d/s,
a = n^-q; the rest carry lambda_U = (1-a)*d/(d-s). Labels are 1-sparse:
class of a point is the argmax over its first k = c_k*floor(n^t) unweighted
features. Unfavored features are never materialized whole; they stream in
blocks from counter-based random streams (see rng).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal, localcontext

import numpy as np

from . import rng
from .errors import IndexOutOfRange, InvalidParams

__all__ = [
    "BilevelParams",
    "DerivedScaling",
    "TrainingSet",
    "TestPoint",
    "UnfavoredSpec",
    "floor_power",
    "derive_scaling",
    "generate_training",
    "stream_unfavored_blocks",
    "sample_test_points",
    "centered_one_hot",
]


def floor_power(n: int, exponent: float) -> int:
    """floor(n**exponent) evaluated in 50-digit decimal arithmetic.

    Floats alone misround boundary cases (1000**(1/3) -> 9.999...); the
    decimal path keeps exact cases like 100**0.5 = 10 exact and is
    platform-independent. The exponent is taken at its exact binary value.
    """
    with localcontext() as ctx:
        ctx.prec = 50
        val = Decimal(n) ** Decimal(exponent)
        return int(val.to_integral_value(rounding=ROUND_FLOOR))


@dataclass(frozen=True)
class BilevelParams:
    """Scaling knobs (n, p, q, r, t, c_k) for the bi-level ensemble.

    Validity: p > 1, 0 <= r < 1, 0 < q < p - r, 0 <= t < r, c_k >= 1, and
    the derived class count k = c_k*floor(n^t) must satisfy 2 <= k <= s so
    label-defining features are favored. Violations raise InvalidParams.
    """

    n: int
    p: float
    q: float
    r: float
    t: float
    c_k: int = 1

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise InvalidParams(f"n must be a positive integer, got {self.n!r}")
        if not self.p > 1:
            raise InvalidParams(f"require p > 1, got p={self.p}")
        if not 0 <= self.r < 1:
            raise InvalidParams(f"require 0 <= r < 1, got r={self.r}")
        if not 0 < self.q < self.p - self.r:
            raise InvalidParams(f"require 0 < q < p - r, got q={self.q} with p-r={self.p - self.r}")
        if not 0 <= self.t < self.r:
            raise InvalidParams(f"require 0 <= t < r, got t={self.t} with r={self.r}")
        if not (isinstance(self.c_k, (int, np.integer)) and self.c_k >= 1):
            raise InvalidParams(f"c_k must be a positive integer, got {self.c_k!r}")
        # Derived class-count constraints are part of validity: reject early.
        s = floor_power(self.n, self.r)
        k = self.c_k * floor_power(self.n, self.t)
        if k < 2:
            raise InvalidParams(f"derived k={k} < 2 (t={self.t}, c_k={self.c_k}, n={self.n})")
        if k > s:
            raise InvalidParams(f"derived k={k} exceeds s={s}: label features must be favored")


@dataclass(frozen=True)
class DerivedScaling:
    """Integer sizes and feature weights derived from BilevelParams."""

    n: int
    d: int
    s: int
    k: int
    a: float
    lambda_f: float
    lambda_u: float
    mu: float

    @classmethod
    def from_counts(cls, n: int, d: int, s: int, k: int, a: float) -> "DerivedScaling":
        """Direct construction from raw counts; trusts its inputs.

        Test and benchmark plumbing for hand-built instances that need not
        arise from exponent parameterizations. d == s means no unfavored
        features (lambda_u = 0).
        """
        lambda_f = a * d / s
        lambda_u = (1.0 - a) * d / (d - s) if d > s else 0.0
        # mu = n^{q+r-1} = s / (a*n) for exponent-derived instances.
        return cls(n=n, d=d, s=s, k=k, a=a, lambda_f=lambda_f, lambda_u=lambda_u,
                   mu=s / (a * n))


def derive_scaling(params: BilevelParams) -> DerivedScaling:
    """Compute (d, s, k, a, lambda_F, lambda_U, mu) from validated params."""
    n = params.n
    d = floor_power(n, params.p)
    s = floor_power(n, params.r)
    k = params.c_k * floor_power(n, params.t)
    # BilevelParams already rejects k < 2 and k > s; re-check cheap relations
    # that involve d so failures surface before any array arithmetic.
    if not d > n:
        raise InvalidParams(f"derived d={d} must exceed n={n} (p={params.p})")
    if not n > s:
        raise InvalidParams(f"derived s={s} must be below n={n} (r={params.r})")
    a = float(n) ** (-params.q)
    lambda_f = a * d / s
    lambda_u = (1.0 - a) * d / (d - s)
    mu = float(n) ** (params.q + params.r - 1.0)
    return DerivedScaling(n=n, d=d, s=s, k=k, a=a, lambda_f=lambda_f,
                          lambda_u=lambda_u, mu=mu)


@dataclass(frozen=True)
class UnfavoredSpec:
    """Descriptor regenerating unfavored columns z_{s+1}..z_d on demand.

    Any entry is a pure function of (seed, feature index, row index): column
    j (0-based, s <= j < d) lives in canonical chunk (j - s) // CANONICAL_CHUNK
    of the KIND_UNFAVORED stream, at word offset ((j - s) % CANONICAL_CHUNK)*n.
    """

    seed: int
    n: int
    s: int
    d: int
    block_size: int = rng.CANONICAL_CHUNK

    def chunk_columns(self, chunk: int, lo: int, hi: int) -> np.ndarray:
        """Columns [lo, hi) of canonical chunk `chunk`, as an n x (hi-lo) block."""
        start = (chunk * rng.CANONICAL_CHUNK + lo) * self.n
        z = rng.normals(self.seed, rng.KIND_UNFAVORED, chunk, start, (hi - lo) * self.n)
        return z.reshape(hi - lo, self.n).T


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Materialized favored block plus streamable unfavored spec and labels."""

    favored: np.ndarray  # n x s, unweighted standard normals
    unfavored_spec: UnfavoredSpec
    labels: np.ndarray  # (n,) class indices in [0, k)
    y_centered: np.ndarray  # n x k, one-hot minus 1/k


def centered_one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    """One-hot targets minus 1/k, entries exactly in {1 - 1/k, -1/k}."""
    n = labels.shape[0]
    y = np.full((n, k), -1.0 / k)
    y[np.arange(n), labels] += 1.0
    return y


def generate_training(params: BilevelParams, scaling: DerivedScaling,
                      seed: int) -> TrainingSet:
    """Draw the favored block and labels; describe unfavored columns by spec.

    Deterministic given seed. Labels are argmax over the first k unweighted
    favored columns (ties, a measure-zero event, break to the lowest index).
    """
    n, s, k = scaling.n, scaling.s, scaling.k
    favored = np.empty((n, s), order="F")
    for j in range(s):
        favored[:, j] = rng.normals(seed, rng.KIND_FAVORED, j, 0, n)
    labels = np.argmax(favored[:, :k], axis=1)
    spec = UnfavoredSpec(seed=seed, n=n, s=s, d=scaling.d)
    return TrainingSet(favored=favored, unfavored_spec=spec, labels=labels,
                       y_centered=centered_one_hot(labels, k))


def iter_unfavored(spec: UnfavoredSpec, start: int, stop: int, block_size: int | None = None):
    """Yield (column_start, n x width block) covering columns [start, stop).

    Blocks have at most block_size columns and never cross canonical chunk
    boundaries, so the emitted values are independent of block_size.
    """
    if block_size is None:
        block_size = spec.block_size
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if start < spec.s or stop > spec.d or start > stop:
        raise IndexOutOfRange(
            f"unfavored columns are [{spec.s}, {spec.d}), requested [{start}, {stop})")
    pos = start
    width = rng.CANONICAL_CHUNK
    while pos < stop:
        chunk, lo = divmod(pos - spec.s, width)
        hi = min(lo + block_size, width, lo + (stop - pos))
        yield pos, spec.chunk_columns(chunk, lo, hi)
        pos += hi - lo


def stream_unfavored_blocks(spec: UnfavoredSpec, start: int, stop: int,
                            block_size: int | None = None):
    """Iterator of n x B unfavored feature blocks for columns [start, stop).

    Column indices are 0-based: the unfavored range is s..d-1. Values are a
    pure function of (seed, feature index, row index); requesting overlapping
    ranges or different block sizes yields bit-identical shared columns.
    """
    for _, block in iter_unfavored(spec, start, stop, block_size):
        yield block


@dataclass(frozen=True)
class TestPoint:
    """One isotropic Gaussian test point, materialized lazily.

    label_part holds the k unweighted label-defining coordinates; the rest
    of the d coordinates regenerate on demand from (seed, index). true_label
    is the argmax of label_part with lowest-index tie-break.
    """

    label_part: np.ndarray
    true_label: int
    seed: int
    index: int

    def head(self, s: int) -> np.ndarray:
        """Coordinates 0..s-1 (the favored ones; label_part is the prefix)."""
        return rng.normals(self.seed, rng.KIND_TEST_HEAD, self.index, 0, s)


def sample_test_points(params: BilevelParams, scaling: DerivedScaling,
                       seed: int, count: int) -> list[TestPoint]:
    """Draw `count` test points; labels assigned by argmax of the first k coords."""
    points = []
    for idx in range(count):
        label_part = rng.normals(seed, rng.KIND_TEST_HEAD, idx, 0, scaling.k)
        points.append(TestPoint(label_part=label_part,
                                true_label=int(np.argmax(label_part)),
                                seed=seed, index=idx))
    return points


def test_tail_block(seed: int, test_indices: np.ndarray, s: int, chunk: int,
                    lo: int, hi: int) -> np.ndarray:
    """Test-point coordinates for unfavored columns [lo, hi) of one chunk.

    Returns a len(test_indices) x (hi - lo) block. Tail coordinates of test
    point tau live in the KIND_TEST_TAIL stream of the chunk at word offset
    tau*CANONICAL_CHUNK, so contiguous index ranges draw in one shot.
    """
    m = len(test_indices)
    width = hi - lo
    first = int(test_indices[0]) if m else 0
    contiguous = m and np.array_equal(np.asarray(test_indices),
                                      np.arange(first, first + m))
    if contiguous and width == rng.CANONICAL_CHUNK:
        w = rng.normals(seed, rng.KIND_TEST_TAIL, chunk,
                        first * rng.CANONICAL_CHUNK, m * rng.CANONICAL_CHUNK)
        return w.reshape(m, rng.CANONICAL_CHUNK)
    rows = [rng.normals(seed, rng.KIND_TEST_TAIL, chunk,
                        int(tau) * rng.CANONICAL_CHUNK + lo, width)
            for tau in test_indices]
    return np.stack(rows) if rows else np.empty((0, width))
