"""Closed-form phase predictors: worked examples hold exactly, verdicts are
consistent with margins, and the predictor family is internally ordered."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_mni.errors import InvalidParams
from bilevel_mni.regimes import (
    BOUNDARY,
    GENERALIZES,
    MISCLASSIFIES,
    NOT_APPLICABLE,
    TIE_TOL,
    averaging_regime,
    legacy_regimes,
    mni_regime,
    regression_works,
)


def test_worked_example_thresholds_are_exact():
    # (p, q, r) = (1.1, 0.1, 0.5): the two predictors split at 0.1 vs 0.5
    assert mni_regime(1.1, 0.1, 0.5, 0.2).threshold == 0.1
    assert averaging_regime(1.1, 0.1, 0.5, 0.2).threshold == 0.5
    assert mni_regime(1.1, 0.1, 0.5, 0.3).verdict == MISCLASSIFIES
    assert averaging_regime(1.1, 0.1, 0.5, 0.3).verdict == GENERALIZES


def test_worked_example_margins_are_exact():
    assert mni_regime(1.1, 0.1, 0.5, 0.3).margin == -0.2
    assert averaging_regime(1.1, 0.1, 0.5, 0.3).margin == 0.2


@pytest.mark.parametrize("p, q, r, want_pos, want_neg", [
    (4.0, 1.0, 0.5, 0.5, 0.5),    # 1-r binds every legacy arm
    (2.2, 1.0, 0.5, 0.2, 0.2),    # p+1-2(q+r) binds
    (2.5, 1.2, 0.3, 0.5, 0.5),    # 2q+r-2 = 0.7, p-2 = 0.5, 1-r = 0.7
])
def test_legacy_thresholds(p, q, r, want_pos, want_neg):
    legacy = legacy_regimes(p, q, r, 0.1)
    assert legacy.old_positive.threshold == want_pos
    assert legacy.old_negative.threshold == want_neg


def test_legacy_not_applicable_outside_spiked_regime():
    legacy = legacy_regimes(1.5, 0.3, 0.5, 0.1)  # q + r = 0.8 <= 1
    assert legacy.old_positive.verdict == NOT_APPLICABLE
    assert legacy.old_negative.verdict == NOT_APPLICABLE
    assert math.isnan(legacy.old_positive.threshold)
    assert math.isnan(legacy.old_negative.margin)


def test_exact_tie_reports_boundary():
    assert mni_regime(1.1, 0.1, 0.5, 0.1).verdict == BOUNDARY
    assert mni_regime(1.1, 0.1, 0.5, 0.1).margin == 0.0
    # a tie within TIE_TOL but below it in float is still a boundary call
    assert averaging_regime(1.5, 0.3, 0.5, 0.5 - 1e-13).verdict == BOUNDARY


def test_regression_regime_boundary_flag():
    mid = regression_works(0.5, 0.5)
    assert mid.boundary and not mid.works
    assert regression_works(0.4, 0.5).works
    assert not regression_works(0.6, 0.5).works
    assert not regression_works(0.6, 0.5).boundary


@pytest.mark.parametrize("args", [
    (1.0, 0.5, 0.5, 0.1),
    (2.0, 0.0, 0.5, 0.1),
    (2.0, 1.6, 0.5, 0.1),
    (2.0, 0.5, 1.0, 0.1),
    (2.0, 0.5, 0.5, 0.6),
])
def test_invalid_exponents_rejected(args):
    with pytest.raises(InvalidParams):
        mni_regime(*args)


VALID = st.tuples(
    st.floats(1.05, 4.0), st.floats(0.05, 2.0),
    st.floats(0.05, 0.95), st.floats(0.0, 0.9),
).filter(lambda v: v[1] < v[0] - v[2] - 1e-9 and v[3] < v[2] - 1e-9)


@given(VALID)
@settings(max_examples=200, deadline=None)
def test_verdict_margin_consistency(v):
    p, q, r, t = v
    for verdict in (mni_regime(p, q, r, t), averaging_regime(p, q, r, t)):
        if verdict.margin > TIE_TOL:
            assert verdict.verdict == GENERALIZES
        elif verdict.margin < -TIE_TOL:
            assert verdict.verdict == MISCLASSIFIES
        else:
            assert verdict.verdict == BOUNDARY
        assert verdict.threshold <= 1.0 - r + 1e-12


@given(VALID)
@settings(max_examples=200, deadline=None)
def test_averaging_never_below_mni(v):
    # max{1, q+r} >= q+r, so the averaging threshold dominates
    p, q, r, t = v
    assert averaging_regime(p, q, r, t).threshold >= mni_regime(p, q, r, t).threshold
    if q + r > 1:
        assert averaging_regime(p, q, r, t).threshold == \
            mni_regime(p, q, r, t).threshold


@given(VALID)
@settings(max_examples=200, deadline=None)
def test_legacy_positive_is_most_conservative(v):
    p, q, r, t = v
    legacy = legacy_regimes(p, q, r, t)
    if q + r <= 1:
        assert legacy.old_positive.verdict == NOT_APPLICABLE
        return
    assert legacy.old_positive.threshold <= legacy.old_negative.threshold
    assert legacy.old_negative.threshold == averaging_regime(p, q, r, t).threshold
