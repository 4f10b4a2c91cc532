"""Parameter validity, derived scalings, and streamed data generation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bilevel_mni import rng
from bilevel_mni.ensemble import (
    BilevelParams,
    DerivedScaling,
    centered_one_hot,
    derive_scaling,
    floor_power,
    generate_training,
    iter_unfavored,
    sample_test_points,
    stream_unfavored_blocks,
)
from bilevel_mni.ensemble import test_tail_block as tail_block
from bilevel_mni.errors import IndexOutOfRange, InvalidParams

from conftest import make_instance


# ----------------------------------------------------------------- sizes


@pytest.mark.parametrize("n, e, want", [
    (100, 0.5, 10),       # exact square root stays exact
    (10**6, 0.5, 1000),
    (1000, 1/3, 9),       # binary 1/3 is below the exact third; floor sees 9.99..
    (100, 0.0, 1),
    (17, 1.0, 17),
    (2, 10.0, 1024),
])
def test_floor_power_decimal_cases(n, e, want):
    assert floor_power(n, e) == want


def test_floor_power_matches_integer_arithmetic_on_integer_exponents():
    for n in (3, 7, 50):
        for e in (1, 2, 3):
            assert floor_power(n, float(e)) == n**e


@pytest.mark.parametrize("kwargs", [
    dict(p=1.0),                 # p must exceed 1
    dict(r=1.0),                 # r < 1
    dict(q=-0.1),                # q > 0
    dict(q=1.2),                 # q < p - r
    dict(t=0.7),                 # t < r
    dict(t=0.0, c_k=1),          # k = 1 < 2
    dict(n=0),
    dict(c_k=0),
])
def test_invalid_params_rejected(kwargs):
    base = dict(n=50, p=1.5, q=0.4, r=0.6, t=0.2, c_k=2)
    with pytest.raises(InvalidParams):
        BilevelParams(**{**base, **kwargs})


def test_k_may_not_exceed_s():
    # n=30, r=0.5 gives s=5; c_k=6 at t=0 forces k=6 > s
    with pytest.raises(InvalidParams):
        BilevelParams(n=30, p=2.0, q=0.5, r=0.5, t=0.0, c_k=6)


@given(p=st.floats(1.05, 3.0), q=st.floats(0.05, 1.5), r=st.floats(0.1, 0.9),
       t=st.floats(0.0, 0.85), n=st.integers(30, 300))
@settings(max_examples=80, deadline=None)
def test_trace_identity_on_valid_params(p, q, r, t, n):
    try:
        params = BilevelParams(n=n, p=p, q=q, r=r, t=t, c_k=2)
    except InvalidParams:
        return
    sc = derive_scaling(params)
    # s*lambda_F + (d-s)*lambda_U = d: the two levels exhaust the trace
    total = sc.s * sc.lambda_f + (sc.d - sc.s) * sc.lambda_u
    assert total == pytest.approx(sc.d, rel=1e-12)
    assert 0 < sc.a < 1
    assert sc.lambda_f > 0 and sc.lambda_u > 0
    assert sc.mu == pytest.approx(float(n) ** (q + r - 1.0), rel=1e-12)


def test_from_counts_accepts_degenerate_no_unfavored():
    sc = DerivedScaling.from_counts(n=10, d=5, s=5, k=2, a=0.5)
    assert sc.lambda_u == 0.0
    assert sc.lambda_f == pytest.approx(0.5)


# ------------------------------------------------------------ generation


def test_training_is_deterministic_in_seed():
    _, sc, tr1 = make_instance(seed=7)
    _, _, tr2 = make_instance(seed=7)
    _, _, tr3 = make_instance(seed=8)
    assert np.array_equal(tr1.favored, tr2.favored)
    assert np.array_equal(tr1.labels, tr2.labels)
    assert not np.array_equal(tr1.favored, tr3.favored)


def test_labels_are_argmax_of_first_k_columns():
    _, sc, tr = make_instance(seed=3)
    assert np.array_equal(tr.labels, np.argmax(tr.favored[:, :sc.k], axis=1))
    assert tr.labels.min() >= 0 and tr.labels.max() < sc.k


def test_centered_one_hot_rows_sum_to_zero_exactly():
    y = centered_one_hot(np.array([0, 2, 1, 2]), 4)
    assert y.shape == (4, 4)
    assert np.all(np.sum(y, axis=1) == 0.0)
    vals = np.unique(y)
    assert set(vals.tolist()) == {-0.25, 0.75}


def test_unfavored_blocks_independent_of_block_size():
    _, sc, tr = make_instance(seed=5)
    spec = tr.unfavored_spec
    whole = np.concatenate(list(stream_unfavored_blocks(spec, sc.s, sc.d)), axis=1)
    for bs in (1, 7, 64, 4096):
        again = np.concatenate(
            list(stream_unfavored_blocks(spec, sc.s, sc.d, block_size=bs)), axis=1)
        assert np.array_equal(whole, again)


def test_unfavored_overlapping_ranges_share_columns_bit_exactly():
    _, sc, tr = make_instance(seed=5)
    spec = tr.unfavored_spec
    mid = (sc.s + sc.d) // 2
    left = np.concatenate(list(stream_unfavored_blocks(spec, sc.s, mid)), axis=1)
    both = np.concatenate(list(stream_unfavored_blocks(spec, sc.s, sc.d)), axis=1)
    assert np.array_equal(left, both[:, :mid - sc.s])


def test_unfavored_blocks_never_cross_canonical_chunks():
    spec_params = BilevelParams(n=20, p=3.0, q=0.5, r=0.5, t=0.0, c_k=2)
    sc = derive_scaling(spec_params)
    assert sc.d - sc.s > rng.CANONICAL_CHUNK  # needs at least two chunks
    tr = generate_training(spec_params, sc, seed=1)
    for col0, blk in iter_unfavored(tr.unfavored_spec, sc.s, sc.d, 3000):
        lo = (col0 - sc.s) % rng.CANONICAL_CHUNK
        assert lo + blk.shape[1] <= rng.CANONICAL_CHUNK


def test_unfavored_range_checks():
    _, sc, tr = make_instance(seed=2)
    with pytest.raises(IndexOutOfRange):
        list(stream_unfavored_blocks(tr.unfavored_spec, 0, sc.d))
    with pytest.raises(IndexOutOfRange):
        list(stream_unfavored_blocks(tr.unfavored_spec, sc.s, sc.d + 1))


def test_test_points_label_matches_head_prefix():
    params, sc, _ = make_instance(seed=9)
    pts = sample_test_points(params, sc, seed=31, count=20)
    for pt in pts:
        head = pt.head(sc.s)
        assert np.array_equal(head[:sc.k], pt.label_part)
        assert pt.true_label == int(np.argmax(pt.label_part))


def test_tail_row_path_matches_contiguous_fast_path():
    # fast path fires only on contiguous indices at full chunk width
    seed, s = 77, 9
    idx = np.arange(4)
    fast = tail_block(seed, idx, s, chunk=0, lo=0, hi=rng.CANONICAL_CHUNK)
    rows = tail_block(seed, idx[::-1], s, chunk=0, lo=0, hi=rng.CANONICAL_CHUNK)
    assert np.array_equal(fast, rows[::-1])
    window = tail_block(seed, idx, s, chunk=0, lo=100, hi=140)
    assert np.array_equal(window, fast[:, 100:140])


def test_favored_and_tail_marginals_pass_ks():
    # r=0.7 makes the favored block big enough for a 1e4-sample KS
    params, sc, tr = make_instance(n=250, p=1.5, q=0.3, r=0.7, seed=4)
    assert tr.favored.size >= 10**4
    d1, _ = stats.kstest(tr.favored.ravel()[:10**4], "norm")
    tail = tail_block(123, np.arange(3), sc.s, 0, 0, 3400).ravel()
    d2, _ = stats.kstest(tail, "norm")
    assert d1 < 0.03
    assert d2 < 0.03
