"""Memoryless third-order power-amplifier model.

Per antenna the input is normalized by its RMS amplitude and the back-off,
``s_n = s / (sigma * 10**(BO/20))``, and the output is
``s_n - alpha * s_n * |s_n|**2``.  The ``|s|**2 s`` term is the
complex-envelope form of the cubic; ``mode="literal"`` applies a real cube
to I and Q separately instead.
"""

from __future__ import annotations

import warnings

import numpy as np

from .scenario import PaSpec
from .txchain import FrameSignal


def _rms(x: np.ndarray, axis) -> np.ndarray:
    return np.sqrt(np.mean(np.abs(x) ** 2, axis=axis, keepdims=True))


def normalize(samples: np.ndarray, back_off_db: float, normalization: str = "per-antenna") -> np.ndarray:
    x = np.atleast_2d(samples)
    sigma = _rms(x, axis=1) if normalization == "per-antenna" else _rms(x, axis=None)
    zero = sigma == 0
    if np.any(zero):
        warnings.warn("PA input has zero power on some antennas; passing zeros through",
                      RuntimeWarning, stacklevel=3)
        sigma = np.where(zero, 1.0, sigma)
    return x / (sigma * 10 ** (back_off_db / 20))


def cubic(s_norm: np.ndarray, alpha: float, mode: str = "baseband") -> np.ndarray:
    if mode == "baseband":
        return s_norm - alpha * s_norm * np.abs(s_norm) ** 2
    if mode == "literal":
        return s_norm - alpha * (s_norm.real ** 3 + 1j * s_norm.imag ** 3)
    raise ValueError(f"unknown PA mode {mode!r}")


def amplify(signal: FrameSignal | np.ndarray, pa: PaSpec) -> FrameSignal | np.ndarray:
    """Apply the PA to every row.  With ``pa.enabled`` false the input is returned unchanged."""
    samples = signal.samples if isinstance(signal, FrameSignal) else signal
    if not pa.enabled:
        out = np.atleast_2d(samples).copy()
    else:
        out = cubic(normalize(samples, pa.back_off_db, pa.normalization), pa.alpha, pa.mode)
    if isinstance(signal, FrameSignal):
        return FrameSignal(out, signal.sample_rate, signal.center_frequency, signal.bandwidth)
    return out


def linear_gain(samples: np.ndarray, amplified: np.ndarray) -> np.ndarray:
    """Per-row gain ``<y, x> / <x, x>``: the part of the output linearly correlated with the input."""
    x = np.atleast_2d(samples)
    y = np.atleast_2d(amplified)
    num = np.sum(y * np.conj(x), axis=1)
    den = np.sum(np.abs(x) ** 2, axis=1)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def two_tone_amplitudes(tone_amplitude: float, alpha: float) -> tuple[float, float]:
    """Carrier and IM3 output amplitudes for two equal normalized tones of amplitude ``a``.

    ``(e1 + e2)|e1 + e2|**2 = 3 e1 + 3 e2 + e1**2 e2* + e2**2 e1*``, so each
    carrier comes out at ``a - 3 alpha a**3`` and each IM3 product at
    ``alpha a**3``.
    """
    a = tone_amplitude
    return a - 3 * alpha * a ** 3, alpha * a ** 3
