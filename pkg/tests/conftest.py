"""Shared fixtures: one small fitted instance plus dense reference helpers.

The small instance is session-scoped because Gram assembly dominates test
runtime; everything downstream treats it as read-only.
"""

import numpy as np
import pytest

from bilevel_mni import diagnostics
from bilevel_mni.ensemble import BilevelParams, derive_scaling, generate_training
from bilevel_mni.interpolator import dense_design, sqrt_weights

SMALL_SEED = 1234


@pytest.fixture(scope="session")
def small_params():
    # n=40: d=252, s=9, k=4; every dense oracle stays instant at this size
    return BilevelParams(n=40, p=1.5, q=0.4, r=0.6, t=0.2, c_k=2)


@pytest.fixture(scope="session")
def small_fitted(small_params):
    return diagnostics.fit(small_params, SMALL_SEED)


@pytest.fixture(scope="session")
def small_dense(small_fitted):
    """Dense weighted design and explicit Gram for the small instance."""
    xw = dense_design(small_fitted.training, small_fitted.scaling)
    return xw, xw @ xw.T


def make_instance(n=30, p=1.6, q=0.5, r=0.55, t=0.15, c_k=2, seed=0):
    """Fresh params/scaling/training triple for tests that mutate nothing."""
    params = BilevelParams(n=n, p=p, q=q, r=r, t=t, c_k=c_k)
    scaling = derive_scaling(params)
    training = generate_training(params, scaling, seed)
    return params, scaling, training


def dense_feature_h(fitted):
    """h[j, m] = z_j^T A^{-1} y_m over all d features, via the dense design."""
    xw = dense_design(fitted.training, fitted.scaling)
    w = sqrt_weights(fitted.scaling)
    z_all = xw / w  # unweighted features, n x d
    return z_all.T @ fitted.u
