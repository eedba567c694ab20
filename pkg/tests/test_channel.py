import numpy as np
import pytest

from ofdm_tsync.channel import (ChannelRealization, ChannelSpec, apply_channel, draw_channel,
                                power_delay_profile, snr_to_noise_var)
from ofdm_tsync.errors import ConfigurationError, DimensionError
from ofdm_tsync.frame import FrameSpec, synthesize_frame


def real(gains, delays, tau=0, noise_var=0.0):
    return ChannelRealization(np.asarray(gains, complex), np.asarray(delays), tau, noise_var)


def test_single_tap_profile():
    np.testing.assert_array_equal(power_delay_profile(1, 0.2), [1.0])


def test_profile_ratio_between_first_taps():
    p = power_delay_profile(20, 0.2)
    assert p[0] / p[1] == pytest.approx(np.exp(0.2), rel=1e-12)
    assert p[0] / p[1] == pytest.approx(1.2214, abs=1e-4)


@pytest.mark.parametrize("l,eta", [(1, 0.1), (5, 1.0), (20, 0.2), (32, 0.05)])
def test_profile_sums_to_one(l, eta):
    assert power_delay_profile(l, eta).sum() == pytest.approx(1.0, abs=1e-14)


def test_draw_channel_structure():
    cs = ChannelSpec(l=20, eta=0.2, snr_db=10, tau_max=24)
    r = draw_channel(cs, np.random.default_rng(0))
    np.testing.assert_array_equal(r.delays, np.arange(20))
    assert 0 <= r.tau <= 24
    assert r.noise_var == pytest.approx(0.1)


def test_average_channel_power_is_unity():
    rng = np.random.default_rng(2024)
    cs = ChannelSpec(l=20, eta=0.2)
    power = np.mean([np.sum(np.abs(draw_channel(cs, rng).gains) ** 2) for _ in range(100_000)])
    assert abs(power - 1.0) < 0.02


def test_tau_covers_range_uniformly():
    rng = np.random.default_rng(3)
    cs = ChannelSpec(tau_max=4)
    taus = np.array([draw_channel(cs, rng).tau for _ in range(5000)])
    counts = np.bincount(taus, minlength=5)
    assert counts.size == 5 and counts.min() > 900


@pytest.mark.parametrize("kwargs", [dict(l=0), dict(eta=0.0), dict(tau_max=-1)])
def test_channel_spec_invariants(kwargs):
    with pytest.raises(ConfigurationError):
        ChannelSpec(**kwargs)


def test_channel_spec_l_must_fit_guard():
    with pytest.raises(ConfigurationError):
        ChannelSpec(l=33).validate_against(FrameSpec())


def test_identity_channel_is_exact():
    spec = FrameSpec()
    frame = synthesize_frame(spec, np.random.default_rng(0))
    y = apply_channel(frame, real([1.0], [0]), spec, None)
    np.testing.assert_array_equal(y, frame)


def test_pure_delay():
    spec = FrameSpec()
    frame = synthesize_frame(spec, np.random.default_rng(0))
    y = apply_channel(frame, real([1.0], [0], tau=5), spec, None)
    np.testing.assert_array_equal(y[:5], 0)
    np.testing.assert_array_equal(y[5:], frame[:-5])


def test_two_tap_impulse_response():
    spec = FrameSpec()
    frame = np.zeros(spec.m, complex)
    frame[0] = 1
    y = apply_channel(frame, real([1.0, 0.5], [0, 1]), spec, None)
    expected = np.zeros(spec.m, complex)
    expected[:2] = [1.0, 0.5]
    np.testing.assert_allclose(y, expected, atol=0)


def test_matches_direct_convolution():
    spec = FrameSpec()
    rng = np.random.default_rng(9)
    frame = synthesize_frame(spec, rng)
    r = draw_channel(ChannelSpec(), rng)
    r = ChannelRealization(r.gains, r.delays, r.tau, 0.0)
    y = apply_channel(frame, r, spec, None)
    h = np.zeros(r.tau + 20, complex)
    h[r.tau + r.delays] = r.gains
    np.testing.assert_allclose(y, np.convolve(frame, h)[: spec.m], atol=1e-13)


def test_linearity_in_frame():
    spec = FrameSpec()
    rng = np.random.default_rng(1)
    f1, f2 = synthesize_frame(spec, rng), synthesize_frame(spec, rng)
    r = draw_channel(ChannelSpec(), rng)
    r = ChannelRealization(r.gains, r.delays, r.tau, 0.0)
    a, b = 0.7 - 0.2j, -1.3 + 0.4j
    lhs = apply_channel(a * f1 + b * f2, r, spec, None)
    rhs = a * apply_channel(f1, r, spec, None) + b * apply_channel(f2, r, spec, None)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_noise_variance_and_determinism():
    spec = FrameSpec()
    zero = np.zeros(spec.m, complex)
    r = real([1.0], [0], noise_var=0.25)
    samples = np.concatenate([apply_channel(zero, r, spec, np.random.default_rng(i)) for i in range(200)])
    assert np.var(samples) == pytest.approx(0.25, rel=0.03)
    np.testing.assert_array_equal(apply_channel(zero, r, spec, np.random.default_rng(4)),
                                  apply_channel(zero, r, spec, np.random.default_rng(4)))


def test_delays_past_window_rejected():
    spec = FrameSpec()
    with pytest.raises(DimensionError):
        apply_channel(np.zeros(spec.m, complex), real([1.0], [0], tau=spec.m), spec, None)
    with pytest.raises(DimensionError):
        apply_channel(np.zeros(spec.m - 1, complex), real([1.0], [0]), spec, None)


@pytest.mark.parametrize("snr_db,power,expected", [(0, 1.0, 1.0), (10, 1.0, 0.1), (12, 0.5, 0.5 / 10 ** 1.2)])
def test_snr_to_noise_var(snr_db, power, expected):
    assert snr_to_noise_var(snr_db, power) == pytest.approx(expected, rel=1e-12)


def test_snr_12db_half_power_value():
    assert snr_to_noise_var(12, 0.5) == pytest.approx(0.03155, abs=1e-5)
