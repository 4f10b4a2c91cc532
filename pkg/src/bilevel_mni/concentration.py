"""Empirical testbed for the probabilistic toolkit.

Sparse bilinear concentration (soft-bounded and hard-masked variants),
the classic bilinear tail bound, Gaussian anticoncentration, and the
equicorrelated-orthant scaling law. Universal constants in the tail bounds
are unspecified by the theory, so everything here tests scaling shape and
dominance with a fitted constant, never an absolute one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientGrid, InvalidArgument

__all__ = [
    "SOFT_BOUNDED",
    "HARD_MASKED",
    "SparsePairSampler",
    "TailEstimate",
    "ScalingFit",
    "wilson_interval",
    "hw_bound",
    "fitted_constant",
    "empirical_bilinear_tail",
    "radius_scaling_fit",
    "radius_vs_n_fit",
    "anticoncentration_bound",
    "orthant_scaling",
]

SOFT_BOUNDED = "SoftBounded"
HARD_MASKED = "HardMasked"


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if trials <= 0:
        raise InvalidArgument("trials must be positive")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class SparsePairSampler:
    """Independent coordinate pairs (X_i, Y_i) with sparse, bounded Y.

    X_i is standard normal. The coupling knob sets corr(X_i, Y_i) through a
    fixed sign-copy scheme: T_i = sign(X_i) with probability |coupling| (sign
    flipped when coupling < 0) and an independent fair sign otherwise, which
    keeps T_i symmetric Rademacher. Then

      SoftBounded: Y_i = sqrt(pi) * T_i          (|Y_i| <= 1, E[Y_i^2] = pi)
      HardMasked:  Y_i = T_i * gamma_i, gamma_i ~ Ber(pi) independent of X

    E[X_i Y_i] is coupling * sqrt(2/math.pi) * sqrt(pi) in soft mode and
    coupling * sqrt(2/math.pi) * pi in hard mode. The mask is independent of
    X, so conditioned on gamma_i = 1 the coordinate X_i stays standard
    normal (subgaussian norm K of order 1).
    """

    n: int
    pi: float
    mode: str = SOFT_BOUNDED
    coupling: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgument(f"n must be positive, got {self.n}")
        if not 0 < self.pi <= 1:
            raise InvalidArgument(f"pi must lie in (0, 1], got {self.pi}")
        if self.mode not in (SOFT_BOUNDED, HARD_MASKED):
            raise InvalidArgument(f"unknown mode {self.mode!r}")
        if not -1 <= self.coupling <= 1:
            raise InvalidArgument(f"coupling must lie in [-1, 1], got {self.coupling}")

    def sample(self, rng: np.random.Generator, trials: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw (X, Y), each trials x n."""
        x = rng.standard_normal((trials, n := self.n))
        signs = np.where(rng.random((trials, n)) < 0.5, 1.0, -1.0)
        if self.coupling:
            copy = rng.random((trials, n)) < abs(self.coupling)
            coupled = math.copysign(1.0, self.coupling) * np.sign(x)
            coupled[coupled == 0] = 1.0
            t = np.where(copy, coupled, signs)
        else:
            t = signs
        if self.mode == SOFT_BOUNDED:
            return x, math.sqrt(self.pi) * t
        mask = rng.random((trials, n)) < self.pi
        return x, t * mask

    def mean_xy(self) -> float:
        """E[X_i Y_i] under the documented coupling scheme."""
        base = self.coupling * math.sqrt(2.0 / math.pi)
        return base * (math.sqrt(self.pi) if self.mode == SOFT_BOUNDED else self.pi)


@dataclass(frozen=True)
class TailEstimate:
    """Empirical exceedance curve of a centered statistic."""

    epsilon: tuple
    p_hat: tuple
    wilson_lo: tuple
    wilson_hi: tuple
    trials: int
    isotonic_corrected: bool = False

    def to_dict(self) -> dict:
        return {"epsilon": list(self.epsilon), "p_hat": list(self.p_hat),
                "wilson_lo": list(self.wilson_lo), "wilson_hi": list(self.wilson_hi),
                "trials": self.trials, "isotonic_corrected": self.isotonic_corrected}


@dataclass(frozen=True)
class ScalingFit:
    """Log-log least-squares fit of a radius or probability against a grid."""

    grid: tuple
    values: tuple
    slope: float
    intercept: float
    residual_rms: float

    def to_dict(self) -> dict:
        return {"grid": list(self.grid), "values": list(self.values),
                "slope": self.slope, "intercept": self.intercept,
                "residual_rms": self.residual_rms}


def _loglog_fit(grid, values) -> ScalingFit:
    lx = np.log(np.asarray(grid, dtype=float))
    ly = np.log(np.asarray(values, dtype=float))
    if len(lx) < 2:
        return ScalingFit(grid=tuple(float(g) for g in grid),
                          values=tuple(float(v) for v in values),
                          slope=float("nan"), intercept=float("nan"),
                          residual_rms=0.0)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return ScalingFit(grid=tuple(float(g) for g in grid),
                      values=tuple(float(v) for v in values),
                      slope=float(slope), intercept=float(intercept),
                      residual_rms=float(np.sqrt(np.mean(resid**2))))


def hw_bound(epsilon: float, k_norm: float, pi: float, frob_norm: float,
             spec_norm: float, c: float) -> float:
    """Tail bound 2 exp(-c min{eps^2 / (K^4 pi |M|_F^2), eps / (K^2 |M|_2)}).

    pi is the sparsity level of the Y vector, not the circle constant.
    """
    if epsilon < 0:
        raise InvalidArgument(f"epsilon must be >= 0, got {epsilon}")
    if k_norm <= 0 or spec_norm <= 0 or c <= 0:
        raise InvalidArgument("k_norm, spec_norm, and c must be positive")
    if not 0 < pi <= 1:
        raise InvalidArgument(f"pi must lie in (0, 1], got {pi}")
    if frob_norm < 0:
        raise InvalidArgument(f"frob_norm must be >= 0, got {frob_norm}")
    if epsilon == 0:
        return 2.0
    quad = epsilon**2 / (k_norm**4 * pi * frob_norm**2) if frob_norm else math.inf
    lin = epsilon / (k_norm**2 * spec_norm)
    return 2.0 * math.exp(-c * min(quad, lin))


def empirical_bilinear_tail(sampler: SparsePairSampler, m: np.ndarray,
                            epsilon_grid, trials: int, seed: int = 0,
                            batch: int = 4096) -> TailEstimate:
    """Exceedance frequencies of |x^T M y - E[x^T M y]| over an epsilon grid.

    The centering uses the analytic mean tr(M) * E[X_i Y_i]; coordinates are
    independent across i, so off-diagonal entries of M contribute nothing.
    """
    if trials < 10**3:
        raise InvalidArgument(f"need >= 1e3 trials, got {trials}")
    m = np.asarray(m, dtype=float)
    if m.shape != (sampler.n, sampler.n):
        raise InvalidArgument(f"M must be {sampler.n} x {sampler.n}, got {m.shape}")
    eps = np.asarray(sorted(float(e) for e in epsilon_grid))
    if np.any(eps < 0):
        raise InvalidArgument("epsilon grid must be nonnegative")
    rng = np.random.default_rng(seed)
    mean = float(np.trace(m)) * sampler.mean_xy()
    exceed = np.zeros(len(eps), dtype=np.int64)
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        x, y = sampler.sample(rng, b)
        form = np.einsum("ij,ij->i", x @ m, y)
        dev = np.abs(form - mean)
        exceed += (dev[:, None] > eps[None, :]).sum(axis=0)
        done += b
    p_hat = exceed / trials
    mono = np.minimum.accumulate(p_hat)
    corrected = bool(np.any(mono != p_hat))
    p_hat = mono
    los, his = zip(*(wilson_interval(int(round(p * trials)), trials) for p in p_hat))
    return TailEstimate(epsilon=tuple(float(e) for e in eps),
                        p_hat=tuple(float(p) for p in p_hat),
                        wilson_lo=los, wilson_hi=his, trials=trials,
                        isotonic_corrected=corrected)


def _centered_identity_form(sampler: SparsePairSampler, rng, trials: int,
                            batch: int = 2048) -> np.ndarray:
    """Samples of sum_i X_i Y_i - n E[X_i Y_i] without materializing M."""
    out = np.empty(trials)
    mean = sampler.n * sampler.mean_xy()
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        x, y = sampler.sample(rng, b)
        out[done:done + b] = np.einsum("ij,ij->i", x, y) - mean
        done += b
    return out


def radius_scaling_fit(mode: str, n: int, pi_grid, quantile: float = 0.99,
                       trials_per_pi: int = 10**4, seed: int = 0) -> ScalingFit:
    """Slope of log(concentration radius) against log(pi) at M = I.

    The radius is the empirical |quantile| of the centered form; the sparse
    bilinear bounds predict radius ~ sqrt(pi * n), slope 1/2 in pi.
    """
    pis = sorted(float(p) for p in pi_grid)
    if len(pis) < 4:
        raise InsufficientGrid(f"need >= 4 pi values, got {len(pis)}")
    if pis[-1] / pis[0] < 10**1.5:
        raise InsufficientGrid(
            f"pi grid must span >= 1.5 decades, got {pis[0]}..{pis[-1]}")
    radii = []
    for i, pi in enumerate(pis):
        sampler = SparsePairSampler(n=n, pi=pi, mode=mode)
        rng = np.random.default_rng((seed, i))
        dev = _centered_identity_form(sampler, rng, trials_per_pi)
        radii.append(float(np.quantile(np.abs(dev), quantile)))
    return _loglog_fit(pis, radii)


def radius_vs_n_fit(mode: str, n_grid, quantile: float = 0.99,
                    trials_per_n: int = 10**4, seed: int = 0) -> ScalingFit:
    """Nonsparse control: pi = 1 fixed, radius against n (classic slope 1/2)."""
    ns = sorted(int(n) for n in n_grid)
    if len(ns) < 4:
        raise InsufficientGrid(f"need >= 4 n values, got {len(ns)}")
    radii = []
    for i, n in enumerate(ns):
        sampler = SparsePairSampler(n=n, pi=1.0, mode=mode)
        rng = np.random.default_rng((seed, i))
        dev = _centered_identity_form(sampler, rng, trials_per_n)
        radii.append(float(np.quantile(np.abs(dev), quantile)))
    return _loglog_fit(ns, radii)


def fitted_constant(estimate: TailEstimate, k_norm: float, pi: float,
                    frob_norm: float, spec_norm: float) -> float:
    """Largest c making hw_bound dominate the estimate's Wilson upper bounds.

    The theory fixes only the bound's shape; the universal constant is
    unspecified. For each grid point, c <= -log(hi / 2) / min_term keeps the
    bound above the upper confidence limit, so the minimum over the grid is
    the best single constant. Points with epsilon = 0 carry no information.
    """
    cands = []
    for eps, hi in zip(estimate.epsilon, estimate.wilson_hi):
        if eps == 0:
            continue
        quad = eps**2 / (k_norm**4 * pi * frob_norm**2) if frob_norm else math.inf
        term = min(quad, eps / (k_norm**2 * spec_norm))
        if term > 0 and hi > 0:
            cands.append(-math.log(hi / 2.0) / term)
    if not cands:
        raise InvalidArgument("no usable grid points to fit a constant")
    return min(cands)


def anticoncentration_bound(epsilon: float, v_norm: float) -> float:
    """Pr[|<x, v>| <= eps] <= 2 eps / (sqrt(2 pi) |v|)."""
    if epsilon < 0:
        raise InvalidArgument(f"epsilon must be >= 0, got {epsilon}")
    if v_norm <= 0:
        raise InvalidArgument(f"v_norm must be positive, got {v_norm}")
    return 2.0 * epsilon / (math.sqrt(2.0 * math.pi) * v_norm)


def orthant_scaling(rho: float, k_grid, trials: int, seed: int = 0,
                    batch: int = 10**5) -> ScalingFit:
    """Slope of log Pr[max_b Z_b <= 0] against log k for equicorrelated Z.

    Z_b = sqrt(rho) G + sqrt(1 - rho) G_b with a shared factor G; the orthant
    law is Theta(k^{1 - 1/rho}), slope -1 at rho = 1/2.
    """
    if not 0 < rho < 1:
        raise InvalidArgument(f"rho must lie in (0, 1), got {rho}")
    ks = sorted(int(k) for k in k_grid)
    if ks[0] < 1:
        raise InvalidArgument("k grid entries must be >= 1")
    probs = []
    for i, k in enumerate(ks):
        rng = np.random.default_rng((seed, i))
        hits = 0
        done = 0
        while done < trials:
            b = min(batch, trials - done)
            g = rng.standard_normal((b, 1))
            z = math.sqrt(rho) * g + math.sqrt(1 - rho) * rng.standard_normal((b, k))
            hits += int(np.count_nonzero(np.max(z, axis=1) <= 0))
            done += b
        p = hits / trials
        if p == 0:
            raise InvalidArgument(
                f"no orthant hits at k={k}; increase trials for a log-log fit")
        probs.append(p)
    return _loglog_fit(ks, probs)
