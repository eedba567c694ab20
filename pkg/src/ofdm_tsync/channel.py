"""Timing offset, L-tap Rayleigh multipath with exponential PDP, and AWGN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .frame import FrameSpec


@dataclass(frozen=True)
class ChannelSpec:
    l: int = 20
    eta: float = 0.2
    snr_db: float = 12.0
    tau_max: int = 24

    def __post_init__(self):
        if self.l < 1:
            raise ConfigurationError(f"path count l must be >= 1, got {self.l}")
        if not self.eta > 0:
            raise ConfigurationError(f"decay factor eta must be > 0, got {self.eta}")
        if self.tau_max < 0:
            raise ConfigurationError(f"tau_max must be >= 0, got {self.tau_max}")

    def validate_against(self, spec: FrameSpec) -> None:
        """Cross-checks that need the frame geometry."""
        if self.l > spec.ng:
            raise ConfigurationError(f"l={self.l} exceeds guard length ng={spec.ng}")
        # strongest tap must stay inside the correlator's lag range
        last_start = spec.training_start + self.tau_max + self.l - 1
        if last_start > spec.nlag - 1:
            raise ConfigurationError(
                f"ng + tau_max + l - 1 = {last_start} does not fit nlag={spec.nlag}"
            )

    def replace(self, **changes) -> "ChannelSpec":
        return ChannelSpec(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ChannelRealization:
    gains: np.ndarray
    delays: np.ndarray
    tau: int
    noise_var: float


def power_delay_profile(l: int, eta: float) -> np.ndarray:
    """Per-tap powers ``exp(-eta*l)`` normalised to unit sum."""
    p = np.exp(-eta * np.arange(l))
    return p / p.sum()


def snr_to_noise_var(snr_db: float, signal_power: float = 1.0) -> float:
    if not signal_power > 0:
        raise ConfigurationError(f"signal_power must be > 0, got {signal_power}")
    return signal_power / 10.0 ** (snr_db / 10.0)


def draw_channel(cspec: ChannelSpec, rng: np.random.Generator) -> ChannelRealization:
    pdp = power_delay_profile(cspec.l, cspec.eta)
    g = rng.standard_normal(cspec.l) + 1j * rng.standard_normal(cspec.l)
    gains = g * np.sqrt(pdp / 2.0)
    tau = int(rng.integers(0, cspec.tau_max + 1))
    return ChannelRealization(
        gains=gains,
        delays=np.arange(cspec.l, dtype=np.int64),
        tau=tau,
        noise_var=snr_to_noise_var(cspec.snr_db),
    )


def apply_channel(
    frame: np.ndarray,
    real: ChannelRealization,
    spec: FrameSpec,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """``y(n) = sum_l h_l x(n - tau - tau_l) + w(n)`` over ``n = 0..M-1``.

    Samples pushed past ``M - 1`` are dropped. ``rng`` may be ``None`` only
    when ``noise_var`` is zero.
    """
    x = np.asarray(frame, dtype=np.complex128)
    if x.shape != (spec.m,):
        raise DimensionError(f"frame length {x.shape} != M={spec.m}")
    gains = np.asarray(real.gains, dtype=np.complex128)
    delays = np.asarray(real.delays, dtype=np.int64)
    if gains.shape != delays.shape or gains.ndim != 1:
        raise DimensionError("gains and delays must be 1-D of equal length")
    if real.tau < 0 or (delays.size and (delays.min() < 0 or real.tau + delays.max() >= spec.m)):
        raise DimensionError(
            f"tau={real.tau} with max delay {delays.max()} does not fit M={spec.m}"
        )

    m = spec.m
    y = np.zeros(m, dtype=np.complex128)
    for h, d in zip(gains, delays):
        shift = real.tau + int(d)
        y[shift:] += h * x[: m - shift]
    if real.noise_var > 0:
        if rng is None:
            raise ConfigurationError("rng required when noise_var > 0")
        w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        y += w * np.sqrt(real.noise_var / 2.0)
    return y
