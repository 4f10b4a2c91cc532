"""Closed-form phase-regime predictors.

Each predictor evaluates a min-of-exponents threshold in t and classifies the
point by the margin threshold - t. Ties within TIE_TOL are reported as
Boundary rather than silently resolved; the asymptotic statements behind
these thresholds say nothing about exact equality.

Thresholds are linear in the exponents with small integer coefficients, so
they are evaluated in decimal on the shortest round-trip representation of
each input and converted to binary once at the end. This makes hand
evaluations like p + 1 - 2(q + r) = 0.1 at (p, q, r) = (1.1, 0.1, 0.5) hold
exactly instead of to within a few ulp.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from decimal import Decimal

from .errors import InvalidParams

__all__ = [
    "GENERALIZES",
    "MISCLASSIFIES",
    "BOUNDARY",
    "NOT_APPLICABLE",
    "TIE_TOL",
    "RegimeVerdict",
    "LegacyRegimes",
    "RegressionVerdict",
    "mni_regime",
    "averaging_regime",
    "legacy_regimes",
    "regression_works",
]

GENERALIZES = "Generalizes"
MISCLASSIFIES = "Misclassifies"
BOUNDARY = "Boundary"
NOT_APPLICABLE = "NotApplicable"

TIE_TOL = 1e-12


@dataclass(frozen=True)
class RegimeVerdict:
    verdict: str
    threshold: float
    margin: float

    def to_dict(self) -> dict:
        return asdict(self)


def _validate(p: float, q: float, r: float, t: float) -> None:
    if not p > 1:
        raise InvalidParams(f"p must exceed 1, got {p}")
    if not 0 <= r < 1:
        raise InvalidParams(f"r must lie in [0, 1), got {r}")
    if not 0 < q < p - r:
        raise InvalidParams(f"q must lie in (0, p - r) = (0, {p - r}), got {q}")
    if not 0 <= t < r:
        raise InvalidParams(f"t must lie in [0, r) = [0, {r}), got {t}")


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def _verdict(threshold: Decimal, t: float) -> RegimeVerdict:
    margin = float(threshold - _dec(t))
    if margin > TIE_TOL:
        verdict = GENERALIZES
    elif margin < -TIE_TOL:
        verdict = MISCLASSIFIES
    else:
        verdict = BOUNDARY
    return RegimeVerdict(verdict=verdict, threshold=float(threshold), margin=margin)


def mni_regime(p: float, q: float, r: float, t: float) -> RegimeVerdict:
    """Phase verdict for the minimum-norm interpolating classifier.

    Generalizes iff t < min{1 - r, p + 1 - 2 max{1, q + r}}.
    """
    _validate(p, q, r, t)
    pd, qd, rd = _dec(p), _dec(q), _dec(r)
    return _verdict(min(1 - rd, pd + 1 - 2 * max(Decimal(1), qd + rd)), t)


def averaging_regime(p: float, q: float, r: float, t: float) -> RegimeVerdict:
    """Phase verdict for the non-interpolating class-averaging baseline.

    Generalizes iff t < min{1 - r, p + 1 - 2 (q + r)}. Coincides with
    mni_regime whenever q + r > 1.
    """
    _validate(p, q, r, t)
    pd, qd, rd = _dec(p), _dec(q), _dec(r)
    return _verdict(min(1 - rd, pd + 1 - 2 * (qd + rd)), t)


@dataclass(frozen=True)
class LegacyRegimes:
    """Superseded sufficient conditions, kept for overlay comparisons.

    old_positive guarantees generalization below its threshold; old_negative
    guarantees failure above its own. Both statements assume q + r > 1, so
    outside that regime the verdicts are NotApplicable with NaN fields.
    """

    old_positive: RegimeVerdict
    old_negative: RegimeVerdict

    def to_dict(self) -> dict:
        return {"old_positive": self.old_positive.to_dict(),
                "old_negative": self.old_negative.to_dict()}


def legacy_regimes(p: float, q: float, r: float, t: float) -> LegacyRegimes:
    _validate(p, q, r, t)
    pd, qd, rd = _dec(p), _dec(q), _dec(r)
    if not qd + rd > 1:
        na = RegimeVerdict(NOT_APPLICABLE, float("nan"), float("nan"))
        return LegacyRegimes(old_positive=na, old_negative=na)
    pos = min(1 - rd, pd + 1 - 2 * (qd + rd), pd - 2, 2 * qd + rd - 2)
    neg = min(1 - rd, pd + 1 - 2 * (qd + rd))
    return LegacyRegimes(old_positive=_verdict(pos, t),
                         old_negative=_verdict(neg, t))


@dataclass(frozen=True)
class RegressionVerdict:
    works: bool
    boundary: bool

    def to_dict(self) -> dict:
        return asdict(self)


def regression_works(q: float, r: float) -> RegressionVerdict:
    """Whether the matched regression problem is in its working regime.

    Works iff q + r < 1; an exact tie (within TIE_TOL) sets the boundary
    flag and reports works = False.
    """
    if not q > 0:
        raise InvalidParams(f"q must be positive, got {q}")
    if not 0 <= r < 1:
        raise InvalidParams(f"r must lie in [0, 1), got {r}")
    gap = float(1 - (_dec(q) + _dec(r)))
    boundary = abs(gap) <= TIE_TOL
    return RegressionVerdict(works=gap > TIE_TOL, boundary=boundary)
