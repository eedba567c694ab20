import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofdm_tsync.channel import ChannelRealization, ChannelSpec, apply_channel, draw_channel
from ofdm_tsync.coarse import (InitEstimate, TimingMetric, acquire_initial, cross_correlate, strongest_path_baseline,
                               threshold_first_path_baseline, threshold_first_path_batch, window_for)
from ofdm_tsync.errors import ConfigurationError, DimensionError
from ofdm_tsync.frame import FrameSpec, generate_zc, synthesize_frame

from helpers import shift_matrix


def test_zero_lag_matched_filter():
    spec = FrameSpec()
    s = generate_zc(spec)
    y = np.concatenate([s, np.zeros(spec.m - spec.n)])
    g = cross_correlate(y, s, spec.nlag)
    assert g.values[0] == pytest.approx(128.0, abs=1e-10)


@pytest.mark.parametrize("k", [0, 1, 17, 100, 160])
def test_pure_shift_peak(k):
    spec = FrameSpec(nlag=161)
    s = generate_zc(spec)
    y = np.zeros(spec.m, complex)
    y[k : k + spec.n] = s
    assert np.argmax(cross_correlate(y, s, spec.nlag).magnitudes) == k


def test_matches_explicit_matrix_example():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    s = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    got = cross_correlate(y, s, 9).values
    want = shift_matrix(s, 12, 9).conj().T @ y
    assert np.max(np.abs(got - want)) < 1e-12


def test_batch_rows_match_single():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((5, 40)) + 1j * rng.standard_normal((5, 40))
    s = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    batch = cross_correlate(y, s, 20)
    for i in range(5):
        np.testing.assert_array_equal(batch.values[i], cross_correlate(y[i], s, 20).values)
    assert batch.complex_mults == 5 * 20 * 8


def test_lag_count_out_of_range():
    with pytest.raises(DimensionError):
        cross_correlate(np.zeros(20, complex), np.ones(8), 14)


def test_complex_mult_count():
    spec = FrameSpec()
    g = cross_correlate(np.zeros(spec.m, complex), generate_zc(spec), spec.nlag)
    assert g.complex_mults == 160 * 128


def test_acquire_clamped_window():
    est = acquire_initial(TimingMetric(np.array([0, 0, 5, 1], complex)), FrameSpec())
    assert est == InitEstimate(2, 0, 2)


def test_window_arithmetic():
    assert window_for(50, 32) == InitEstimate(50, 18, 50)


def test_acquire_ties_pick_smallest():
    est = acquire_initial(TimingMetric(np.array([3, 1, 3], complex)), FrameSpec())
    assert est.tau_init == 0


def test_acquire_empty_metric():
    with pytest.raises(DimensionError):
        acquire_initial(TimingMetric(np.zeros(0, complex)), FrameSpec())


def test_noiseless_single_path_hits_training_start():
    spec = FrameSpec()
    s = generate_zc(spec)
    rng = np.random.default_rng(5)
    for tau in [0, 3, 11, 24]:
        frame = synthesize_frame(spec, rng, s)
        y = apply_channel(frame, ChannelRealization(np.array([0.3 - 0.8j]), np.array([0]), tau, 0.0), spec, None)
        est = acquire_initial(cross_correlate(y, s, spec.nlag), spec)
        assert est.tau_init == spec.ng + tau


def test_strongest_path_single_and_two_path():
    spec = FrameSpec()
    s = generate_zc(spec)
    frame = synthesize_frame(spec, np.random.default_rng(0), s)
    one = apply_channel(frame, ChannelRealization(np.array([1.0 + 0j]), np.array([0]), 7, 0.0), spec, None)
    assert strongest_path_baseline(cross_correlate(one, s, spec.nlag)) == spec.ng + 7
    two = apply_channel(frame, ChannelRealization(np.array([0.4, 1.0 + 0j]), np.array([0, 1]), 7, 0.0), spec, None)
    assert strongest_path_baseline(cross_correlate(two, s, spec.nlag)) == spec.ng + 7 + 1


def test_strongest_path_tie():
    assert strongest_path_baseline(TimingMetric(np.ones(10, complex))) == 0


def test_threshold_alpha_one_returns_peak():
    metric = TimingMetric(np.array([0, 2, 10, 3], complex))
    est = window_for(2, 32)
    assert threshold_first_path_baseline(metric, est, 1.0) == 2


def test_threshold_first_crossing():
    metric = TimingMetric(np.array([0.1, 0.5, 2, 10, 3], complex))
    est = window_for(3, 32)
    assert threshold_first_path_baseline(metric, est, 0.1) == 2


def test_threshold_alpha_validation():
    with pytest.raises(ConfigurationError):
        threshold_first_path_baseline(TimingMetric(np.ones(3, complex)), window_for(0, 4), 0.0)


def test_threshold_noiseless_three_path_exponential():
    spec = FrameSpec()
    s = generate_zc(spec)
    frame = synthesize_frame(spec, np.random.default_rng(2), s)
    # exponential profile, first tap weaker in phase-rotated sense but above 0.3 of the peak
    gains = np.array([0.5 * np.exp(0.3j), 0.9 * np.exp(-1.1j), 0.4 * np.exp(2.0j)])
    y = apply_channel(frame, ChannelRealization(gains, np.arange(3), 9, 0.0), spec, None)
    metric = cross_correlate(y, s, spec.nlag)
    est = acquire_initial(metric, spec)
    assert est.tau_init == spec.ng + 9 + 1
    assert threshold_first_path_baseline(metric, est, 0.3) == spec.ng + 9


def test_threshold_batch_matches_scalar():
    rng = np.random.default_rng(11)
    mags = rng.random((200, 60)) ** 4
    ti = np.argmax(mags, axis=1)
    batch = threshold_first_path_batch(mags, ti, 8, 0.2)
    for i in range(200):
        scalar = threshold_first_path_baseline(TimingMetric(mags[i].astype(complex)), window_for(ti[i], 8), 0.2)
        assert batch[i] == scalar


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 16), extra=st.integers(0, 24), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_matrix_form_equivalence(n, extra, seed, data):
    m = n + extra
    nlag = data.draw(st.integers(1, m - n + 1))
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    s = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    got = cross_correlate(y, s, nlag).values
    assert np.max(np.abs(got - shift_matrix(s, m, nlag).conj().T @ y)) < 1e-12


@settings(max_examples=200, deadline=None)
@given(tau_init=st.integers(0, 500), ng=st.integers(1, 64))
def test_window_width_bounded(tau_init, ng):
    est = window_for(tau_init, ng)
    assert est.window_lo <= est.window_hi
    assert est.window_hi - est.window_lo <= ng


def test_shift_covariance_noiseless():
    spec = FrameSpec()
    s = generate_zc(spec)
    rng = np.random.default_rng(8)
    frame = synthesize_frame(spec, rng, s)
    r = draw_channel(ChannelSpec(tau_max=10), rng)
    r = ChannelRealization(r.gains, r.delays, r.tau, 0.0)
    y = apply_channel(frame, r, spec, None)
    y1 = np.concatenate([[0], y[:-1]])
    a = np.argmax(cross_correlate(y, s, spec.nlag).magnitudes)
    b = np.argmax(cross_correlate(y1, s, spec.nlag).magnitudes)
    assert b == a + 1
