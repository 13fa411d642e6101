"""Apply channel tensors to antenna waveforms; demodulate intended users."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelTensor
from .scenario import WaveformSpec
from .txchain import FrameSignal, matched_filter_and_downsample, ofdm_demodulate


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class ReceivedSet:
    signals: np.ndarray          # [P, N] complex
    sample_rate: float
    point_index: np.ndarray      # [P] receive-point ids


def frequency_grid(num_samples: int, sample_rate: float, center_frequency: float) -> np.ndarray:
    """Ascending absolute frequencies of an ``num_samples``-point FFT."""
    return center_frequency + np.fft.fftshift(np.fft.fftfreq(num_samples, 1 / sample_rate))


def to_spectrum(samples: np.ndarray) -> np.ndarray:
    """FFT along the last axis, reordered to ascending frequency."""
    return np.fft.fftshift(np.fft.fft(samples, axis=-1), axes=-1)


def from_spectrum(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.fft.ifftshift(spectrum, axes=-1), axis=-1)


def apply_channel(antenna_spectra: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``Y[p, f] = sum_m H[m, p, f] X[m, f]`` over every bin."""
    return np.einsum("mpf,mf->pf", h, antenna_spectra)


def transmit(antenna_signals: FrameSignal, channel: ChannelTensor,
             point_index: np.ndarray | None = None) -> ReceivedSet:
    x = np.atleast_2d(antenna_signals.samples)
    m, n = x.shape
    if channel.h.shape[0] != m:
        raise PropagationError(f"channel has {channel.h.shape[0]} antennas, signal has {m}")
    if channel.h.shape[2] != n:
        raise PropagationError(f"channel has {channel.h.shape[2]} bins, frame FFT length is {n}")
    grid = frequency_grid(n, antenna_signals.sample_rate, antenna_signals.center_frequency)
    if not np.allclose(grid, channel.frequency_grid, rtol=0, atol=1e-3):
        raise PropagationError("channel frequency grid is not aligned with the frame")
    y = from_spectrum(apply_channel(to_spectrum(x), channel.h))
    idx = np.arange(y.shape[0]) if point_index is None else np.asarray(point_index)
    return ReceivedSet(y, antenna_signals.sample_rate, idx)


def in_band_mask(grid: np.ndarray, center_frequency: float, bandwidth: float) -> np.ndarray:
    return np.abs(grid - center_frequency) <= bandwidth / 2


def equalize(samples: np.ndarray, effective_gain: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Divide by the known effective gain on in-band bins and zero everything else."""
    g = np.asarray(effective_gain)
    if np.any(np.abs(g[mask]) == 0):
        raise PropagationError("zero effective gain on an in-band bin")
    spec = to_spectrum(samples)
    out = np.zeros_like(spec)
    out[..., mask] = spec[..., mask] / g[mask]
    return from_spectrum(out)


def demodulate_user(received: ReceivedSet | np.ndarray, user: int, spec: WaveformSpec,
                    effective_gain: np.ndarray, waveform_gain: float = 1.0) -> np.ndarray:
    """Recover QAM symbols for one user.

    ``effective_gain`` is the end-to-end linear gain of that user's stream
    per frame bin (ascending frequency); ``waveform_gain`` is the scale the
    transmitter applied to reach unit power.  Equalization is one complex
    tap per frame bin, then RRC matched filtering, downsampling and OFDM
    demodulation.
    """
    y = received.signals[user] if isinstance(received, ReceivedSet) else np.asarray(received)
    n = y.shape[-1]
    grid = frequency_grid(n, spec.sample_rate_hz, spec.center_frequency_hz)
    mask = in_band_mask(grid, spec.center_frequency_hz, spec.bandwidth_hz)
    z = equalize(y, effective_gain, mask) / waveform_gain
    num = spec.num_ofdm_symbols * (spec.num_subcarriers + spec.cp_length) + spec.edge_window_samples
    sym_rate = matched_filter_and_downsample(z, spec, num)
    return ofdm_demodulate(sym_rate, spec)[0]


def add_awgn(signals: np.ndarray, snr_db: float, rng: np.random.Generator,
             reference_power: float | None = None) -> np.ndarray:
    """Add circular complex white noise ``snr_db`` below ``reference_power``.

    The reference defaults to each row's own mean power.  Not used by the
    default pipeline, whose emission maps are noise free.
    """
    x = np.atleast_2d(signals)
    ref = (np.mean(np.abs(x) ** 2, axis=1, keepdims=True) if reference_power is None
           else np.full((x.shape[0], 1), float(reference_power)))
    sigma = np.sqrt(ref * 10 ** (-snr_db / 10) / 2)
    noise = sigma * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    return x + noise
