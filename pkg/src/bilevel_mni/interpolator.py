"""Gram assembly, kernel-trick scoring, averaging baseline, leave-out updates.

The minimum-norm interpolating score functions are f_m = (X^w)^T A^{-1} y_m
with A = X^w (X^w)^T. Nothing d-dimensional is ever materialized outside the
dense test oracles: the Gram matrix accumulates over streamed unfavored
blocks, and test scores use the kernel identity
f_m^T x^w = y_m^T A^{-1} (X^w x^w).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.blas import dsyrk

from . import rng
from .ensemble import DerivedScaling, TestPoint, TrainingSet, iter_unfavored, test_tail_block
from .errors import CapExceeded, FactorizationFailure, InvalidSubset

__all__ = [
    "GramSolver",
    "LeaveOutSolver",
    "ScoreVector",
    "HatSpectrum",
    "build_gram",
    "build_gram_and_kernel",
    "solve",
    "kernel_vectors",
    "score_test_point",
    "score_test_points",
    "averaging_classifier_score",
    "leave_out",
    "hat_spectrum_report",
    "dense_design",
    "dense_coefficients",
    "dense_kernel_vector",
]

DENSE_CAP_ENTRIES = 1_000_000  # default cap on d for dense (test-only) paths


def _symmetrize_upper(m: np.ndarray) -> np.ndarray:
    """Full symmetric matrix from an upper-triangular accumulation."""
    return np.triu(m) + np.triu(m, 1).T


@dataclass(frozen=True, eq=False)
class GramSolver:
    """The n x n Gram matrix A, its Cholesky factor, and the unfavored part.

    a_unfavored (lambda_U * sum_{j>s} z_j z_j^T) is retained because leave-out
    re-accumulation and the contamination diagnostics both consume it.
    """

    a: np.ndarray
    a_unfavored: np.ndarray
    factor: tuple
    jitter_applied: float


@dataclass(frozen=True)
class ScoreVector:
    """Per-class scores for one test point; argmax with lowest-index ties."""

    scores: np.ndarray
    predicted_label: int
    empty_classes: tuple = ()


@dataclass(frozen=True, eq=False)
class LeaveOutSolver:
    """Leave-T-out Gram matrix and the hat matrix H_{T,S} = W_T^T A_{-S}^{-1} W_T."""

    removed: tuple
    superset: tuple
    a_minus_t: np.ndarray
    factor_minus_t: tuple
    hat: np.ndarray


def _factor_with_jitter(a: np.ndarray):
    """Cholesky with one jitter retry of 1e-10 * trace(A)/n on the diagonal."""
    try:
        return cho_factor(a, lower=False), 0.0
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(a) / a.shape[0]
        bumped = a + jitter * np.eye(a.shape[0])
        try:
            return cho_factor(bumped, lower=False), jitter
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailure(
                f"Gram factorization failed after jitter {jitter:.3e}") from exc


def _assemble(training: TrainingSet, scaling: DerivedScaling,
              test_points: list[TestPoint] | None, block_size: int | None):
    """One streaming pass: unfavored Gram part, plus kernel vectors if asked.

    Accumulation runs in canonical ascending chunk order at the canonical
    chunk width regardless of block_size, so results are bit-stable.
    """
    spec = training.unfavored_spec
    n, s, d = spec.n, spec.s, spec.d
    lam_u = scaling.lambda_u
    a_unf = np.zeros((n, n))
    v = None
    idx = None
    if test_points is not None:
        idx = np.array([p.index for p in test_points], dtype=np.int64)
        seeds = {p.seed for p in test_points}
        if len(seeds) > 1:
            raise ValueError("test points in one batch must share a seed")
        v = np.zeros((n, len(test_points)))
        test_seed = seeds.pop() if seeds else 0
    for col0, z in iter_unfavored(spec, s, d, rng.CANONICAL_CHUNK):
        a_unf = dsyrk(lam_u, z, beta=1.0, c=a_unf, trans=0, lower=0,
                      overwrite_c=1)
        if v is not None and len(idx):
            chunk, lo = divmod(col0 - s, rng.CANONICAL_CHUNK)
            tails = test_tail_block(test_seed, idx, s, chunk, lo, lo + z.shape[1])
            v += lam_u * (z @ tails.T)
    a_unf = _symmetrize_upper(a_unf)
    if v is not None and len(idx):
        heads = np.stack([p.head(s) for p in test_points])  # m x s
        v += scaling.lambda_f * (training.favored @ heads.T)
    return a_unf, v


def build_gram(training: TrainingSet, scaling: DerivedScaling,
               block_size: int | None = None) -> GramSolver:
    """Assemble A = lambda_F Z_fav Z_fav^T + lambda_U sum_{j>s} z_j z_j^T and factor it."""
    a_unf, _ = _assemble(training, scaling, None, block_size)
    return _finish_gram(training, scaling, a_unf)


def build_gram_and_kernel(training: TrainingSet, scaling: DerivedScaling,
                          test_points: list[TestPoint],
                          block_size: int | None = None):
    """Fused assembly: Gram plus kernel vectors X^w x^w for a test batch.

    Streams each unfavored chunk once for both accumulations. The arithmetic
    per accumulation is identical to the unfused paths, so results match
    build_gram / kernel_vectors bit for bit.
    """
    a_unf, v = _assemble(training, scaling, test_points, block_size)
    return _finish_gram(training, scaling, a_unf), v


def _finish_gram(training: TrainingSet, scaling: DerivedScaling,
                 a_unf: np.ndarray) -> GramSolver:
    fav = training.favored
    a = a_unf + scaling.lambda_f * (fav @ fav.T) if fav.shape[1] else a_unf.copy()
    a = 0.5 * (a + a.T)
    factor, jitter = _factor_with_jitter(a)
    if jitter:
        a = a + jitter * np.eye(a.shape[0])
    return GramSolver(a=a, a_unfavored=a_unf, factor=factor, jitter_applied=jitter)


def solve(gram: GramSolver, v: np.ndarray) -> np.ndarray:
    """Apply A^{-1} through the cached Cholesky factor."""
    return cho_solve(gram.factor, v)


def kernel_vectors(training: TrainingSet, scaling: DerivedScaling,
                   test_points: list[TestPoint],
                   block_size: int | None = None) -> np.ndarray:
    """v_tau = X^w x_tau^w for a batch of test points, one n x m matrix.

    One favored matvec plus streamed unfavored blocks; no d-vector is formed.
    """
    _, v = _assemble(training, scaling, test_points, block_size)
    # _assemble always accumulates the unfavored Gram part; for pure scoring
    # that work is unavoidable anyway since the same blocks feed both GEMMs.
    return v


def _mni_score_matrix(gram: GramSolver, training: TrainingSet,
                      v: np.ndarray) -> np.ndarray:
    u = solve(gram, training.y_centered)  # n x k
    return v.T @ u


def _averaging_score_matrix(training: TrainingSet, scaling: DerivedScaling,
                            v: np.ndarray) -> np.ndarray:
    k = training.y_centered.shape[1]
    onehot = training.y_centered + 1.0 / k  # exact one-hot by construction
    return v.T @ onehot


def score_test_point(gram: GramSolver, training: TrainingSet,
                     scaling: DerivedScaling, x_test: TestPoint) -> ScoreVector:
    """MNI scores y_m^T A^{-1} (X^w x^w) for one test point."""
    v = kernel_vectors(training, scaling, [x_test])
    scores = _mni_score_matrix(gram, training, v)[0]
    return ScoreVector(scores=scores, predicted_label=int(np.argmax(scores)))


def score_test_points(gram: GramSolver, training: TrainingSet,
                      scaling: DerivedScaling,
                      test_points: list[TestPoint]) -> list[ScoreVector]:
    """Batch MNI scoring; one streaming pass for the whole batch."""
    v = kernel_vectors(training, scaling, test_points)
    s = _mni_score_matrix(gram, training, v)
    return [ScoreVector(scores=row, predicted_label=int(np.argmax(row))) for row in s]


def averaging_classifier_score(training: TrainingSet, scaling: DerivedScaling,
                               x_test: TestPoint,
                               v: np.ndarray | None = None) -> ScoreVector:
    """Averaging baseline: score_m = sum_{i: l_i = m} <x_i^w, x_test^w>.

    Classes with no positive examples keep score 0 and are flagged.
    """
    if v is None:
        v = kernel_vectors(training, scaling, [x_test])
    scores = _averaging_score_matrix(training, scaling, v)[0]
    k = training.y_centered.shape[1]
    present = np.bincount(training.labels, minlength=k) > 0
    empty = tuple(int(m) for m in np.flatnonzero(~present))
    return ScoreVector(scores=scores, predicted_label=int(np.argmax(scores)),
                       empty_classes=empty)


def leave_out(gram: GramSolver, training: TrainingSet, scaling: DerivedScaling,
              removed: tuple | list, superset: tuple | list | None = None) -> LeaveOutSolver:
    """Leave-out solver for favored index sets T subset-of S.

    A_{-T} and A_{-S} are rebuilt by re-accumulation from the retained
    unfavored part plus the surviving favored columns (no factor downdating).
    H_{T,S} = W_T^T A_{-S}^{-1} W_T with W_T = sqrt(lambda_F) Z_T.
    """
    t = tuple(sorted(int(i) for i in removed))
    s_set = t if superset is None else tuple(sorted(int(i) for i in superset))
    s_fav = training.favored.shape[1]
    if not t:
        raise InvalidSubset("removed set T must be nonempty")
    if not set(t) <= set(s_set):
        raise InvalidSubset(f"T={t} must be a subset of S={s_set}")
    if not all(0 <= i < s_fav for i in s_set):
        raise InvalidSubset(f"indices must lie in the favored range [0, {s_fav})")

    def minus(drop: tuple) -> np.ndarray:
        keep = [j for j in range(s_fav) if j not in set(drop)]
        zk = training.favored[:, keep]
        return gram.a_unfavored + scaling.lambda_f * (zk @ zk.T)

    a_minus_t = minus(t)
    factor_t, _ = _factor_with_jitter(a_minus_t)
    a_minus_s = a_minus_t if s_set == t else minus(s_set)
    factor_s = factor_t if s_set == t else _factor_with_jitter(a_minus_s)[0]
    w_t = np.sqrt(scaling.lambda_f) * training.favored[:, list(t)]
    hat = w_t.T @ cho_solve(factor_s, w_t)
    hat = 0.5 * (hat + hat.T)
    return LeaveOutSolver(removed=t, superset=s_set, a_minus_t=a_minus_t,
                          factor_minus_t=factor_t, hat=hat)


@dataclass(frozen=True)
class HatSpectrum:
    """Flatness statistics of (I + H_{T,S})^{-1}."""

    eig_min: float
    eig_max: float
    max_over_min: float
    midpoint_over_target: float  # midpoint / min(mu, 1)


def hat_spectrum_report(solver: LeaveOutSolver, scaling: DerivedScaling) -> HatSpectrum:
    """Extremal eigenvalues of (I + H)^{-1} against the min{mu, 1} prediction."""
    h_eigs = np.linalg.eigvalsh(solver.hat)
    inv = 1.0 / (1.0 + h_eigs)
    lo, hi = float(inv.min()), float(inv.max())
    target = min(scaling.mu, 1.0)
    return HatSpectrum(eig_min=lo, eig_max=hi, max_over_min=hi / lo,
                       midpoint_over_target=0.5 * (lo + hi) / target)


# ---------------------------------------------------------------------------
# Dense oracles. Test-only: they materialize d-dimensional objects and are
# guarded by a hard cap on d.


def _check_cap(d: int, cap: int):
    if d > cap:
        raise CapExceeded(f"dense path needs d={d} <= cap {cap}")


def sqrt_weights(scaling: DerivedScaling) -> np.ndarray:
    """sqrt(lambda_j) for all d features."""
    w = np.full(scaling.d, np.sqrt(scaling.lambda_u))
    w[: scaling.s] = np.sqrt(scaling.lambda_f)
    return w


def dense_design(training: TrainingSet, scaling: DerivedScaling,
                 cap: int = DENSE_CAP_ENTRIES) -> np.ndarray:
    """The weighted design X^w as a dense n x d matrix."""
    _check_cap(scaling.d, cap)
    spec = training.unfavored_spec
    cols = [training.favored] + list(
        blk for _, blk in iter_unfavored(spec, scaling.s, scaling.d, None))
    x = np.concatenate(cols, axis=1)
    return x * sqrt_weights(scaling)


def dense_coefficients(gram: GramSolver, training: TrainingSet,
                       scaling: DerivedScaling,
                       cap: int = DENSE_CAP_ENTRIES) -> np.ndarray:
    """Explicit MNI coefficients f_m = (X^w)^T A^{-1} y_m, d x k."""
    xw = dense_design(training, scaling, cap)
    return xw.T @ solve(gram, training.y_centered)


def dense_test_coordinates(point: TestPoint, scaling: DerivedScaling,
                           cap: int = DENSE_CAP_ENTRIES) -> np.ndarray:
    """All d unweighted coordinates of a test point."""
    _check_cap(scaling.d, cap)
    s, d = scaling.s, scaling.d
    x = np.empty(d)
    x[:s] = point.head(s)
    pos = s
    width = rng.CANONICAL_CHUNK
    while pos < d:
        chunk, lo = divmod(pos - s, width)
        hi = min(width, lo + (d - pos))
        x[pos: pos + hi - lo] = test_tail_block(point.seed, np.array([point.index]),
                                                s, chunk, lo, hi)[0]
        pos += hi - lo
    return x


def dense_kernel_vector(training: TrainingSet, scaling: DerivedScaling,
                        x_dense: np.ndarray,
                        cap: int = DENSE_CAP_ENTRIES) -> np.ndarray:
    """v = X^w x^w for an explicit coordinate vector (oracle path)."""
    xw = dense_design(training, scaling, cap)
    return xw @ (sqrt_weights(scaling) * x_dense)
