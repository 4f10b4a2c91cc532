"""Analysis quantities for a fitted instance.

Relative survival lambda_F * h_{a,b}[a] with h_{a,b}[j] = z_j^T A^{-1}(y_a - y_b),
contamination split by feature group, normalized contaminations Z^(b), their
correlation structure, spectrum reports, and log-log scaling-exponent fits.

Unfavored-feature sums reuse the retained Gram part: for any u, u',
sum_{j>s} lambda_U^2 (z_j^T u)(z_j^T u') = lambda_U * u^T A_U u', which avoids
regenerating the streamed features for every diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from . import rng
from .ensemble import (BilevelParams, DerivedScaling, TrainingSet, derive_scaling,
                       generate_training, iter_unfavored, test_tail_block)
from .errors import CapExceeded, InsufficientGrid, ZeroContamination
from .interpolator import GramSolver, build_gram, leave_out, solve

__all__ = [
    "Fitted",
    "SurvivalContamination",
    "CorrelationReport",
    "SpectrumReport",
    "ExponentFit",
    "fit",
    "survival_contamination",
    "normalized_contamination_samples",
    "correlation_report",
    "spectrum_report",
    "fit_scaling_exponent",
    "normalized_survival",
    "unfavored_contamination",
]

DENSE_EIG_CAP = 2000
DEGENERATE_SURVIVAL_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class Fitted:
    """A fully fitted instance: data, Gram solver, and cached U = A^{-1} Y."""

    params: BilevelParams
    scaling: DerivedScaling
    training: TrainingSet
    gram: GramSolver
    u: np.ndarray  # n x k

    @cached_property
    def favored_h(self) -> np.ndarray:
        """s x k matrix of z_j^T A^{-1} y_m over favored features."""
        return self.training.favored.T @ self.u


def fit(params: BilevelParams, seed: int) -> Fitted:
    """Generate a training set and assemble its Gram solver."""
    scaling = derive_scaling(params)
    training = generate_training(params, scaling, seed)
    gram = build_gram(training, scaling)
    return Fitted(params=params, scaling=scaling, training=training, gram=gram,
                  u=solve(gram, training.y_centered))


@dataclass(frozen=True)
class SurvivalContamination:
    """Survival and contamination for one ordered class pair (alpha, beta)."""

    alpha: int
    beta: int
    survival: float  # lambda_F * h_{a,b}[a]
    survival_beta: float  # lambda_F * h_{b,a}[b]
    cn_label: float
    cn_favored: float
    cn_unfavored: float
    cn_total: float
    su_cn_ratio: float
    survival_variation: float | None
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)


def survival_contamination(fitted: Fitted, alpha: int, beta: int) -> SurvivalContamination:
    """Survival along the true direction and contamination along the rest.

    Computes u = A^{-1}(y_alpha - y_beta) once via the cached U; contamination
    sums run over the three feature groups (other label features, remaining
    favored, unfavored).
    """
    sc = fitted.scaling
    k, s = sc.k, sc.s
    if alpha == beta or not (0 <= alpha < k and 0 <= beta < k):
        raise ValueError(f"need distinct class indices in [0, {k}), got ({alpha}, {beta})")
    f = fitted.favored_h
    h_fav = f[:, alpha] - f[:, beta]  # h_{alpha,beta}[j] over favored j
    survival = sc.lambda_f * h_fav[alpha]
    survival_beta = -sc.lambda_f * h_fav[beta]
    mask = np.ones(k, dtype=bool)
    mask[[alpha, beta]] = False
    cn_label_sq = sc.lambda_f**2 * float(np.sum(h_fav[:k][mask] ** 2))
    cn_favored_sq = sc.lambda_f**2 * float(np.sum(h_fav[k:] ** 2))
    u_pair = fitted.u[:, alpha] - fitted.u[:, beta]
    cn_unfavored_sq = sc.lambda_u * float(u_pair @ (fitted.gram.a_unfavored @ u_pair))
    cn_unfavored_sq = max(cn_unfavored_sq, 0.0)
    cn_total = math.sqrt(cn_label_sq + cn_favored_sq + cn_unfavored_sq)
    degenerate = bool(abs(h_fav[alpha]) < DEGENERATE_SURVIVAL_FLOOR)
    variation = None if degenerate else float(
        abs((h_fav[alpha] + h_fav[beta]) / h_fav[alpha]))
    return SurvivalContamination(
        alpha=alpha, beta=beta, survival=float(survival),
        survival_beta=float(survival_beta),
        cn_label=math.sqrt(cn_label_sq), cn_favored=math.sqrt(cn_favored_sq),
        cn_unfavored=math.sqrt(cn_unfavored_sq), cn_total=cn_total,
        su_cn_ratio=float(survival / cn_total) if cn_total else math.inf,
        survival_variation=variation, degenerate=degenerate)


def normalized_contamination_samples(fitted: Fitted, alpha: int, test_seed: int,
                                     count: int) -> dict[int, np.ndarray]:
    """Monte Carlo draws of Z^(beta) for every beta != alpha.

    Z^(beta) = (1/CN_{a,b}) sum_{j not in {a,b}} lambda_j h_{b,a}[j] x_test[j]
    over fresh test coordinates; each marginal is standard normal by
    construction. Streams training chunks and test tails together.
    """
    sc = fitted.scaling
    k, s = sc.k, sc.s
    betas = [b for b in range(k) if b != alpha]
    cn = {}
    for b in betas:
        cn[b] = survival_contamination(fitted, alpha, b).cn_total
        if cn[b] == 0.0:
            raise ZeroContamination(f"CN for pair ({alpha}, {b}) is zero")
    f = fitted.favored_h
    # favored weights lambda_F * h_{b,a}[j], zeroed on the excluded pair
    w_fav = np.zeros((s, len(betas)))
    for col, b in enumerate(betas):
        w = sc.lambda_f * (f[:, b] - f[:, alpha])
        w[[alpha, b]] = 0.0
        w_fav[:, col] = w
    u_pairs = fitted.u[:, betas] - fitted.u[:, [alpha]]  # n x (k-1)
    heads = np.stack([rng.normals(test_seed, rng.KIND_TEST_HEAD, i, 0, s)
                      for i in range(count)])
    samples = heads @ w_fav
    spec = fitted.training.unfavored_spec
    indices = np.arange(count)
    for col0, z in iter_unfavored(spec, s, sc.d, rng.CANONICAL_CHUNK):
        chunk, lo = divmod(col0 - s, rng.CANONICAL_CHUNK)
        tails = test_tail_block(test_seed, indices, s, chunk, lo, lo + z.shape[1])
        samples += tails @ (sc.lambda_u * (z.T @ u_pairs))
    return {b: samples[:, col] / cn[b] for col, b in enumerate(betas)}


@dataclass(frozen=True, eq=False)
class CorrelationReport:
    """Z^(beta) correlation structure around an anchor class."""

    alpha: int
    betas: tuple
    correlations: np.ndarray  # (k-1) x (k-1), diagonal exactly 1
    halfspace_cosines: np.ndarray  # cos(L^1/2 f_alpha, L^1/2 f_beta) per beta

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "betas": list(self.betas),
                "correlations": self.correlations.tolist(),
                "halfspace_cosines": self.halfspace_cosines.tolist()}

    def offdiagonal(self) -> np.ndarray:
        m = len(self.betas)
        iu = np.triu_indices(m, 1)
        return self.correlations[iu]


def correlation_report(fitted: Fitted, alpha: int) -> CorrelationReport:
    """Exact pairwise E[Z^(b) Z^(b')] and halfspace cosines.

    The cross-moment restricts to shared coordinates j not in {a, b, b'}
    (disjoint coordinates contribute zero in expectation); denominators are
    the full contamination norms.
    """
    sc = fitted.scaling
    k = sc.k
    if k < 3:
        raise ValueError("pairwise correlations need k >= 3")
    betas = [b for b in range(k) if b != alpha]
    f = fitted.favored_h  # s x k
    b_unf = fitted.u.T @ (fitted.gram.a_unfavored @ fitted.u)  # k x k
    lam_f2, lam_u = sc.lambda_f**2, sc.lambda_u

    def pair_fav(b):
        h = f[:, b] - f[:, alpha]
        h[[alpha, b]] = 0.0  # excluded from CN and from every shared sum
        return h

    h_cols = {b: pair_fav(b) for b in betas}
    e = np.eye(k)
    cn = {}
    for b in betas:
        pair = e[:, b] - e[:, alpha]
        total = lam_f2 * float(h_cols[b] @ h_cols[b]) + lam_u * float(pair @ b_unf @ pair)
        if total <= 0.0:
            raise ZeroContamination(f"CN for pair ({alpha}, {b}) is zero")
        cn[b] = math.sqrt(total)
    m = len(betas)
    corr = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            b, bp = betas[i], betas[j]
            hb = h_cols[b].copy()
            hbp = h_cols[bp].copy()
            hb[[b, bp]] = 0.0  # shared coordinates exclude {alpha, b, b'}
            hbp[[b, bp]] = 0.0
            pair_b = e[:, b] - e[:, alpha]
            pair_bp = e[:, bp] - e[:, alpha]
            num = lam_f2 * float(hb @ hbp) + lam_u * float(pair_b @ b_unf @ pair_bp)
            corr[i, j] = corr[j, i] = num / (cn[b] * cn[bp])
    # halfspace cosines over all coordinates, no exclusions
    g = lam_f2 * (f.T @ f) + lam_u * b_unf
    denom = np.sqrt(np.diag(g))
    cosines = np.array([g[alpha, b] / (denom[alpha] * denom[b]) for b in betas])
    return CorrelationReport(alpha=alpha, betas=tuple(betas), correlations=corr,
                             halfspace_cosines=cosines)


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Eigenvalue summaries of A_U and the leave-k-out Gram A_{-k}."""

    eigs_unfavored: np.ndarray  # descending
    eigs_minus_k: np.ndarray  # descending
    flat_deviation_unfavored: float  # max_i |eig_i / n^p - 1|
    flat_deviation_minus_k: float  # over the flat block (indices > s-k)
    spike_midpoint_ratio: float  # spiked-block midpoint / ((1 + 1/mu) n^p)

    def to_dict(self) -> dict:
        return {"eigs_unfavored": self.eigs_unfavored.tolist(),
                "eigs_minus_k": self.eigs_minus_k.tolist(),
                "flat_deviation_unfavored": self.flat_deviation_unfavored,
                "flat_deviation_minus_k": self.flat_deviation_minus_k,
                "spike_midpoint_ratio": self.spike_midpoint_ratio}


def spectrum_report(fitted: Fitted, cap: int = DENSE_EIG_CAP) -> SpectrumReport:
    """Dense eigendecompositions of A_U and A_{-k} with flat/spiked statistics."""
    sc = fitted.scaling
    n = sc.n
    if n > cap:
        raise CapExceeded(f"dense eigendecomposition capped at n <= {cap}, got {n}")
    npow = float(n) ** fitted.params.p
    eigs_u = np.linalg.eigvalsh(fitted.gram.a_unfavored)[::-1]
    lo = leave_out(fitted.gram, fitted.training, fitted.scaling,
                   removed=range(sc.k))
    eigs_mk = np.linalg.eigvalsh(lo.a_minus_t)[::-1]
    flat_u = float(np.max(np.abs(eigs_u / npow - 1.0)))
    split = sc.s - sc.k
    spiked, flat_block = eigs_mk[:split], eigs_mk[split:]
    flat_mk = float(np.max(np.abs(flat_block / npow - 1.0)))
    if split:
        mid = 0.5 * (spiked.max() + spiked.min())
        spike_ratio = float(mid / ((1.0 + 1.0 / sc.mu) * npow))
    else:
        spike_ratio = float("nan")
    return SpectrumReport(eigs_unfavored=eigs_u, eigs_minus_k=eigs_mk,
                          flat_deviation_unfavored=flat_u,
                          flat_deviation_minus_k=flat_mk,
                          spike_midpoint_ratio=spike_ratio)


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of log(median quantity) against log n."""

    n_grid: tuple
    medians: tuple
    slope: float
    intercept: float
    residual_rms: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_scaling_exponent(extractor, family: dict, n_grid, seeds_per_n: int,
                         base_seed: int = 0) -> ExponentFit:
    """Fit the scaling exponent of a per-instance quantity across n.

    extractor maps a Fitted instance to a positive scalar; medians across
    seeds_per_n fresh instances are fitted on log-log axes. Polylog factors
    in the underlying laws are not modeled; callers absorb them in slope
    tolerances.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise InsufficientGrid(f"need >= 4 grid points, got {len(n_grid)}")
    if seeds_per_n < 10:
        raise InsufficientGrid(f"need >= 10 seeds per n, got {seeds_per_n}")
    fam_digest = repr(sorted(family.items()))
    medians = []
    for n in n_grid:
        params = BilevelParams(n=n, **family)
        vals = []
        for i in range(seeds_per_n):
            seed = rng.derive_seed("expfit", base_seed, fam_digest, n, i)
            vals.append(float(extractor(fit(params, seed))))
        medians.append(float(np.median(vals)))
    if min(medians) <= 0:
        raise ValueError(f"medians must be positive for a log-log fit: {medians}")
    logs_n = np.log(np.asarray(n_grid, dtype=float))
    logs_m = np.log(np.asarray(medians))
    slope, intercept = np.polyfit(logs_n, logs_m, 1)
    resid = logs_m - (slope * logs_n + intercept)
    return ExponentFit(n_grid=n_grid, medians=tuple(medians), slope=float(slope),
                       intercept=float(intercept),
                       residual_rms=float(np.sqrt(np.mean(resid**2))))


def normalized_survival(fitted: Fitted) -> float:
    """Survival for the (0, 1) pair with the min{1/mu, 1} prefactor divided out.

    The survival law scales as min{1/mu, 1} * n^{-t} up to polylog factors;
    normalizing leaves the n^{-t} part as the fitted exponent.
    """
    raw = survival_contamination(fitted, 0, 1).survival
    return raw / min(1.0 / fitted.scaling.mu, 1.0)


def unfavored_contamination(fitted: Fitted) -> float:
    """Unfavored contamination for the (0, 1) pair (raw, law ~ n^{(1-t-p)/2})."""
    return survival_contamination(fitted, 0, 1).cn_unfavored
