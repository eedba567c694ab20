"""Cross-correlation timing metric and initial-path acquisition.

The metric is the sliding correlation ``G[d] = sum_n conj(s[n]) y[n + d]``,
which equals ``S^H y`` for the cyclic-shift matrix whose d-th column holds
the training sequence starting at row d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, DimensionError
from .frame import FrameSpec


@dataclass(frozen=True)
class TimingMetric:
    values: np.ndarray
    complex_mults: int = 0

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    def __len__(self):
        return self.values.shape[-1]


@dataclass(frozen=True)
class InitEstimate:
    tau_init: int
    window_lo: int
    window_hi: int


def _check_lags(m: int, n: int, nlag: int) -> None:
    if not 1 <= nlag <= m - n + 1:
        raise DimensionError(f"nlag={nlag} outside [1, M - N + 1 = {m - n + 1}]")


def cross_correlate(y: np.ndarray, s: np.ndarray, nlag: int) -> TimingMetric:
    """Sliding correlation of ``y`` (length M) against ``s`` (length N).

    ``y`` may also be a ``(batch, M)`` array, in which case ``values`` has
    shape ``(batch, nlag)`` and ``complex_mults`` counts the whole batch.
    """
    y = np.asarray(y, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim != 1 or y.ndim not in (1, 2):
        raise DimensionError(f"bad shapes y={y.shape}, s={s.shape}")
    m, n = y.shape[-1], s.size
    _check_lags(m, n, nlag)
    windows = sliding_window_view(y[..., : nlag + n - 1], n, axis=-1)
    values = windows @ np.conj(s)
    # one complex multiply per (lag, training sample) pair, per batch row
    mults = int(np.prod(windows.shape))
    return TimingMetric(values=values, complex_mults=mults)


def window_for(tau_init: int, ng: int) -> InitEstimate:
    return InitEstimate(tau_init=int(tau_init), window_lo=max(int(tau_init) - ng, 0),
                        window_hi=int(tau_init))


def acquire_initial(metric: TimingMetric, spec: FrameSpec) -> InitEstimate:
    """Peak of ``|G|`` (ties toward the smaller lag) and the first-path search range."""
    mags = np.abs(np.asarray(metric.values))
    if mags.ndim != 1 or mags.size == 0:
        raise DimensionError("acquire_initial needs a non-empty 1-D metric")
    return window_for(int(np.argmax(mags)), spec.ng)


def strongest_path_baseline(metric: TimingMetric) -> int:
    return int(np.argmax(np.abs(metric.values)))


def threshold_first_path_baseline(metric: TimingMetric, est: InitEstimate, alpha: float = 0.3) -> int:
    """Earliest lag in the search range whose magnitude reaches ``alpha`` times the peak."""
    if not 0 < alpha <= 1:
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")
    mags = np.abs(np.asarray(metric.values))
    seg = mags[est.window_lo : est.window_hi + 1]
    hits = np.flatnonzero(seg >= alpha * mags[est.tau_init])
    if hits.size == 0:
        return est.tau_init
    return est.window_lo + int(hits[0])


def threshold_first_path_batch(mags: np.ndarray, tau_init: np.ndarray, ng: int, alpha: float) -> np.ndarray:
    """Vectorised :func:`threshold_first_path_baseline` over ``(batch, nlag)`` magnitudes."""
    if not 0 < alpha <= 1:
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")
    b, nlag = mags.shape
    lags = np.arange(nlag)
    lo = np.maximum(tau_init - ng, 0)
    peak = mags[np.arange(b), tau_init]
    ok = (mags >= alpha * peak[:, None]) & (lags >= lo[:, None]) & (lags <= tau_init[:, None])
    # the peak itself always qualifies, so argmax finds a hit in every row
    return np.argmax(ok, axis=1)
