"""Survival, contamination, correlation, and spectrum reports against dense
oracles, plus the scaling-exponent fitting plumbing."""

import math

import numpy as np
import pytest
from scipy import stats

from bilevel_mni import rng
from bilevel_mni.diagnostics import (
    correlation_report,
    fit,
    fit_scaling_exponent,
    normalized_contamination_samples,
    normalized_survival,
    spectrum_report,
    survival_contamination,
    unfavored_contamination,
)
from bilevel_mni.ensemble import BilevelParams, generate_training, derive_scaling
from bilevel_mni.errors import CapExceeded, InsufficientGrid
from bilevel_mni.interpolator import dense_coefficients, sqrt_weights

from conftest import dense_feature_h

PAIRS = [(0, 1), (1, 0), (0, 3), (2, 1)]


@pytest.mark.parametrize("alpha, beta", PAIRS)
def test_survival_contamination_matches_dense_oracle(small_fitted, alpha, beta):
    sc = small_fitted.scaling
    h = dense_feature_h(small_fitted)
    h_pair = h[:, alpha] - h[:, beta]
    rep = survival_contamination(small_fitted, alpha, beta)
    assert rep.survival == pytest.approx(sc.lambda_f * h_pair[alpha], rel=1e-10)
    assert rep.survival_beta == pytest.approx(-sc.lambda_f * h_pair[beta], rel=1e-10)
    label = [j for j in range(sc.k) if j not in (alpha, beta)]
    cn_label = sc.lambda_f * math.sqrt(float(np.sum(h_pair[label] ** 2)))
    cn_fav = sc.lambda_f * math.sqrt(float(np.sum(h_pair[sc.k:sc.s] ** 2)))
    cn_unf = sc.lambda_u * math.sqrt(float(np.sum(h_pair[sc.s:] ** 2)))
    assert rep.cn_label == pytest.approx(cn_label, rel=1e-9, abs=1e-12)
    assert rep.cn_favored == pytest.approx(cn_fav, rel=1e-9, abs=1e-12)
    assert rep.cn_unfavored == pytest.approx(cn_unf, rel=1e-9, abs=1e-12)
    assert rep.cn_total == pytest.approx(
        math.sqrt(cn_label**2 + cn_fav**2 + cn_unf**2), rel=1e-9)
    assert rep.su_cn_ratio == pytest.approx(rep.survival / rep.cn_total, rel=1e-12)


def test_swapping_the_pair_exchanges_survivals(small_fitted):
    ab = survival_contamination(small_fitted, 0, 1)
    ba = survival_contamination(small_fitted, 1, 0)
    assert ba.survival_beta == ab.survival  # bit-exact under negation
    assert ba.survival == ab.survival_beta
    assert ba.cn_total == ab.cn_total
    assert not ab.degenerate


def test_variation_recovers_from_both_survivals(small_fitted):
    rep = survival_contamination(small_fitted, 0, 2)
    expect = abs((rep.survival - rep.survival_beta) / rep.survival)
    assert rep.survival_variation == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("alpha, beta", [(0, 0), (-1, 1), (0, 99)])
def test_bad_pairs_rejected(small_fitted, alpha, beta):
    with pytest.raises(ValueError):
        survival_contamination(small_fitted, alpha, beta)


def test_to_dict_is_json_clean(small_fitted):
    import json
    payload = survival_contamination(small_fitted, 0, 1).to_dict()
    json.dumps(payload)  # plain Python scalars only


# ------------------------------------------------------ normalized draws


def test_contamination_samples_match_dense_enumeration(small_fitted):
    from bilevel_mni.ensemble import sample_test_points
    from bilevel_mni.interpolator import dense_test_coordinates
    sc = small_fitted.scaling
    alpha, test_seed, count = 0, 909, 12
    samples = normalized_contamination_samples(small_fitted, alpha, test_seed, count)
    h = dense_feature_h(small_fitted)
    lam = sqrt_weights(sc) ** 2
    pts = sample_test_points(small_fitted.params, sc, test_seed, count)
    for b, zs in samples.items():
        h_pair = h[:, b] - h[:, alpha]
        w = lam * h_pair
        w[[alpha, b]] = 0.0
        cn = survival_contamination(small_fitted, alpha, b).cn_total
        for i, pt in enumerate(pts):
            x = dense_test_coordinates(pt, sc)
            assert zs[i] == pytest.approx(float(w @ x) / cn, rel=1e-9, abs=1e-11)


def test_contamination_samples_are_standard_normal(small_fitted):
    samples = normalized_contamination_samples(small_fitted, 0, 777, 10**4)
    z = samples[1]
    d, _ = stats.kstest(z, "norm")
    assert d < 0.03
    assert abs(np.mean(z)) < 0.05
    assert abs(np.std(z) - 1.0) < 0.05


# --------------------------------------------------------- correlations


def test_correlation_report_structure(small_fitted):
    rep = correlation_report(small_fitted, 0)
    m = len(rep.betas)
    assert rep.betas == tuple(b for b in range(small_fitted.scaling.k) if b != 0)
    assert np.all(np.diag(rep.correlations) == 1.0)
    assert np.array_equal(rep.correlations, rep.correlations.T)
    assert np.all(np.abs(rep.correlations) <= 1.0 + 1e-12)
    assert rep.halfspace_cosines.shape == (m,)
    assert rep.offdiagonal().shape == (m * (m - 1) // 2,)


def test_correlation_matches_dense_enumeration(small_fitted):
    sc = small_fitted.scaling
    alpha = 1
    rep = correlation_report(small_fitted, alpha)
    h = dense_feature_h(small_fitted)
    lam = sqrt_weights(sc) ** 2

    def weights(b):
        w = lam * (h[:, b] - h[:, alpha])
        w[[alpha, b]] = 0.0
        return w

    for i, b in enumerate(rep.betas):
        for j, bp in enumerate(rep.betas):
            if i >= j:
                continue
            wb, wbp = weights(b), weights(bp)
            shared = np.ones(sc.d, dtype=bool)
            shared[[alpha, b, bp]] = False
            num = float(np.sum(wb[shared] * wbp[shared]))
            cn_b = survival_contamination(small_fitted, alpha, b).cn_total
            cn_bp = survival_contamination(small_fitted, alpha, bp).cn_total
            assert rep.correlations[i, j] == pytest.approx(
                num / (cn_b * cn_bp), rel=1e-9, abs=1e-12)


def test_correlation_tracks_monte_carlo(small_fitted):
    rep = correlation_report(small_fitted, 0)
    samples = normalized_contamination_samples(small_fitted, 0, 4321, 10**4)
    zs = np.stack([samples[b] for b in rep.betas])
    emp = np.corrcoef(zs)
    off = np.triu_indices(len(rep.betas), 1)
    assert np.max(np.abs(emp[off] - rep.correlations[off])) < 0.06


def test_halfspace_cosines_match_dense_coefficients(small_fitted):
    sc = small_fitted.scaling
    rep = correlation_report(small_fitted, 0)
    coef = dense_coefficients(small_fitted.gram, small_fitted.training, sc)
    lf = sqrt_weights(sc)[:, None] * coef  # L^{1/2} f_m columns
    a = lf[:, 0]
    for b, cos in zip(rep.betas, rep.halfspace_cosines):
        v = lf[:, b]
        expect = float(a @ v / (np.linalg.norm(a) * np.linalg.norm(v)))
        assert cos == pytest.approx(expect, rel=1e-9)


def test_correlations_need_three_classes():
    params = BilevelParams(n=30, p=1.6, q=0.4, r=0.6, t=0.0, c_k=2)
    fitted = fit(params, 3)
    with pytest.raises(ValueError):
        correlation_report(fitted, 0)


# -------------------------------------------------------------- spectrum


def test_spectrum_report_shapes(small_fitted):
    rep = spectrum_report(small_fitted)
    n = small_fitted.scaling.n
    assert rep.eigs_unfavored.shape == (n,)
    assert np.all(np.diff(rep.eigs_unfavored) <= 0)
    assert np.all(np.diff(rep.eigs_minus_k) <= 0)
    assert rep.flat_deviation_unfavored >= 0
    assert math.isfinite(rep.spike_midpoint_ratio)


def test_spectrum_cap(small_fitted):
    with pytest.raises(CapExceeded):
        spectrum_report(small_fitted, cap=10)


def test_spike_ratio_nan_when_no_favored_survive():
    # k == s leaves no spiked block after the leave-k-out
    params = BilevelParams(n=30, p=2.0, q=0.5, r=0.5, t=0.0, c_k=5)
    sc = derive_scaling(params)
    assert sc.k == sc.s
    rep = spectrum_report(fit(params, 1))
    assert math.isnan(rep.spike_midpoint_ratio)


def test_wishart_bracket_desk_scale():
    # deep q+r>1 keeps the Gram flat: all eigenvalues within n^p (1 +- 0.5)
    # (1/mu = n^{1-q-r} = 200^{-0.6} pushes the favored spikes into the bulk)
    params = BilevelParams(n=200, p=2.0, q=1.2, r=0.4, t=0.1, c_k=2)
    fitted = fit(params, 17)
    eigs = np.linalg.eigvalsh(fitted.gram.a)
    npow = 200.0 ** 2
    assert eigs.min() > 0.5 * npow
    assert eigs.max() < 1.5 * npow


# ---------------------------------------------------------- exponent fit


def test_exponent_fit_recovers_exact_power_law():
    fitres = fit_scaling_exponent(lambda f: 1.0 / f.scaling.n,
                                  dict(p=1.6, q=0.5, r=0.55, t=0.15, c_k=2),
                                  n_grid=(24, 30, 36, 42), seeds_per_n=10)
    assert fitres.slope == pytest.approx(-1.0, abs=1e-9)
    assert fitres.residual_rms < 1e-12
    assert fitres.n_grid == (24, 30, 36, 42)


def test_exponent_fit_guards():
    fam = dict(p=1.6, q=0.5, r=0.55, t=0.15, c_k=2)
    with pytest.raises(InsufficientGrid):
        fit_scaling_exponent(lambda f: 1.0, fam, n_grid=(24, 30, 36),
                             seeds_per_n=10)
    with pytest.raises(InsufficientGrid):
        fit_scaling_exponent(lambda f: 1.0, fam, n_grid=(24, 30, 36, 42),
                             seeds_per_n=9)


def test_normalized_extractors_consistent(small_fitted):
    sc = small_fitted.scaling
    rep = survival_contamination(small_fitted, 0, 1)
    assert normalized_survival(small_fitted) == pytest.approx(
        rep.survival / min(1.0 / sc.mu, 1.0), rel=1e-12)
    assert unfavored_contamination(small_fitted) == rep.cn_unfavored


# ------------------------------------------------------ trend invariants


def test_survival_variation_shrinks_with_n():
    fam = dict(p=1.5, q=0.3, r=0.5, t=0.1, c_k=2)
    med = {}
    for n in (100, 800):
        vals = []
        for i in range(8):
            fitted = fit(BilevelParams(n=n, **fam), rng.derive_seed("var", n, i))
            vals.append(survival_contamination(fitted, 0, 1).survival_variation)
        med[n] = float(np.median(vals))
    assert med[800] < med[100]


def test_feature_label_alignment_signs():
    # within-class alignment positive and bracketed; cross-class negative
    params = BilevelParams(n=200, p=1.5, q=0.3, r=0.5, t=0.2, c_k=1)
    sc = derive_scaling(params)
    own, cross = [], []
    for i in range(100):
        tr = generate_training(params, sc, rng.derive_seed("align", i))
        z = tr.favored[:, 0]
        own.append(float(z @ tr.y_centered[:, 0]))
        cross.append(float(z @ tr.y_centered[:, 1]))
    norm = (sc.n / sc.k) * math.sqrt(math.log(sc.k))
    ratio = np.mean(own) / norm
    assert 1.0 / math.sqrt(math.pi * math.log(2)) - 0.2 < ratio < math.sqrt(2) + 0.2
    assert np.mean(cross) < 0
