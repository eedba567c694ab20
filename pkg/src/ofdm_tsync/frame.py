"""Training sequence, data symbols and zero-padded transmit frame.

Frame layout (length ``M = Ng + N + Nd``)::

    [ Ng zeros | Zadoff-Chu training (N) | QPSK-OFDM data (Nd) ]

The training sequence is sent directly in the time domain, so the receiver
correlates against exactly the samples that were transmitted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class FrameSpec:
    """Scalar system parameters of one frame.

    ``m`` (receive window) and ``nu`` (observation length) are derived.
    """

    n: int = 128
    ng: int = 32
    nd: int = 128
    nlag: int = 160
    zc_root: int = 25
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.ng < 1 or self.nd < 0:
            raise ConfigurationError(
                f"need n >= 1, ng >= 1, nd >= 0; got n={self.n}, ng={self.ng}, nd={self.nd}"
            )
        if not 1 <= self.nlag <= self.m - self.n + 1:
            raise ConfigurationError(
                f"nlag={self.nlag} outside [1, M - N + 1 = {self.m - self.n + 1}]"
            )
        check_zc_root(self.zc_root, self.n)

    @property
    def m(self) -> int:
        return self.n + self.ng + self.nd

    @property
    def nu(self) -> int:
        return self.n + self.ng

    @property
    def feature_len(self) -> int:
        """Length of the real-valued network input, 2(Nu - 1)."""
        return 2 * (self.nu - 1)

    @property
    def training_start(self) -> int:
        """Frame index where the training sequence begins."""
        return self.ng

    def to_dict(self) -> dict:
        return asdict(self)


def check_zc_root(root: int, n: int) -> None:
    if root % 2 == 0 or math.gcd(root, n) != 1:
        raise ConfigurationError(
            f"Zadoff-Chu root must be odd and coprime with N={n}; got {root}"
        )


def generate_zc(spec: FrameSpec) -> np.ndarray:
    """Even-length Zadoff-Chu sequence ``exp(-j*pi*u*n^2/N)``.

    The sequence has unit modulus and an impulse-like periodic
    autocorrelation for any root coprime with ``N``.
    """
    check_zc_root(spec.zc_root, spec.n)
    k = np.arange(spec.n, dtype=np.int64)
    # reduce u*k^2 mod 2N before scaling so large k stays exact
    phase = (spec.zc_root * k * k) % (2 * spec.n)
    return np.exp(-1j * np.pi * phase / spec.n)


def idft(freq_symbols: np.ndarray) -> np.ndarray:
    """Unitary inverse DFT: ``x[n] = N^-1/2 * sum_k X[k] exp(j 2 pi k n / N)``."""
    x = np.asarray(freq_symbols, dtype=np.complex128)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError(f"expected a non-empty 1-D sequence, got shape {x.shape}")
    return np.fft.ifft(x, norm="ortho")


def dft(time_samples: np.ndarray) -> np.ndarray:
    """Unitary forward DFT, inverse of :func:`idft`."""
    x = np.asarray(time_samples, dtype=np.complex128)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError(f"expected a non-empty 1-D sequence, got shape {x.shape}")
    return np.fft.fft(x, norm="ortho")


_QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2)


def generate_data_symbols(spec: FrameSpec, rng: np.random.Generator) -> np.ndarray:
    """Nd time-domain samples: i.i.d. QPSK subcarrier symbols through a size-Nd IDFT.

    Average power is 1 because the transform is unitary.
    """
    if spec.nd == 0:
        return np.zeros(0, dtype=np.complex128)
    symbols = _QPSK[rng.integers(0, 4, size=spec.nd)]
    return idft(symbols)


def build_frame(spec: FrameSpec, training: np.ndarray, data: np.ndarray) -> np.ndarray:
    training = np.asarray(training, dtype=np.complex128)
    data = np.asarray(data, dtype=np.complex128)
    if training.shape != (spec.n,):
        raise DimensionError(f"training length {training.shape} != N={spec.n}")
    if data.shape != (spec.nd,):
        raise DimensionError(f"data length {data.shape} != Nd={spec.nd}")
    return np.concatenate([np.zeros(spec.ng, dtype=np.complex128), training, data])


def synthesize_frame(spec: FrameSpec, rng: np.random.Generator, training=None) -> np.ndarray:
    """Convenience: fresh data symbols around the (optionally cached) training sequence."""
    if training is None:
        training = generate_zc(spec)
    return build_frame(spec, training, generate_data_symbols(spec, rng))
