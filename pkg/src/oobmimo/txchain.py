"""Per-user baseband transmit chain: bits -> QAM -> OFDM -> RRC shaping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import WaveformSpec


@dataclass(frozen=True)
class QamFrame:
    symbols: np.ndarray          # [K, S] complex, unit average constellation power
    bits: np.ndarray             # [K, S, log2(order)] uint8
    constellation: np.ndarray    # [order] complex, index = Gray-coded bit pattern
    seed: int


@dataclass(frozen=True)
class FrameSignal:
    samples: np.ndarray          # [channels, N] complex
    sample_rate: float
    center_frequency: float
    bandwidth: float

    @property
    def num_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def band_edges(self) -> dict[str, tuple[float, float]]:
        b = self.bandwidth
        return {
            "in_band": (-b / 2, b / 2),
            "lower_adjacent": (-3 * b / 2, -b / 2),
            "upper_adjacent": (b / 2, 3 * b / 2),
        }


def qam_constellation(order: int = 16) -> np.ndarray:
    """Square Gray-coded QAM, normalized to unit average power.

    Entry ``i`` is the point for the bit pattern of ``i`` (MSB first); the
    first half of the bits select the in-phase level.
    """
    side = int(round(np.sqrt(order)))
    if side * side != order:
        raise ValueError(f"order {order} is not a square QAM")
    bits_per_axis = int(np.log2(side))
    levels = 2 * np.arange(side) - (side - 1)
    gray = np.arange(side) ^ (np.arange(side) >> 1)
    level_of_code = np.empty(side)
    level_of_code[gray] = levels
    idx = np.arange(order)
    i_code = idx >> bits_per_axis
    q_code = idx & (side - 1)
    points = level_of_code[i_code] + 1j * level_of_code[q_code]
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


def generate_qam(num_users: int, num_symbols: int, seed: int, order: int = 16) -> QamFrame:
    if num_users < 1 or num_symbols < 1:
        raise ValueError("num_users and num_symbols must be >= 1")
    rng = np.random.default_rng(seed)
    k = int(np.log2(order))
    bits = rng.integers(0, 2, size=(num_users, num_symbols, k), dtype=np.uint8)
    weights = 1 << np.arange(k - 1, -1, -1)
    index = (bits * weights).sum(axis=-1)
    const = qam_constellation(order)
    return QamFrame(symbols=const[index], bits=bits, constellation=const, seed=seed)


def active_bins(num_subcarriers: int, num_active: int) -> np.ndarray:
    """FFT bin indices of the active subcarriers: a block centered on DC."""
    k = np.arange(-(num_active // 2), num_active - num_active // 2)
    return k % num_subcarriers


def _edge_window(length: int, w: int) -> np.ndarray:
    win = np.ones(length)
    if w:
        ramp = 0.5 * (1 - np.cos(np.pi * (np.arange(w) + 0.5) / w))
        win[:w] = ramp
        win[-w:] = ramp[::-1]
    return win


def ofdm_modulate(frame: QamFrame | np.ndarray, spec: WaveformSpec) -> FrameSignal:
    """Map QAM symbols onto OFDM symbols at sample rate ``B``.

    Each OFDM symbol gets a cyclic prefix of ``num_subcarriers // 8``
    samples.  With ``edge_window_samples = W > 0`` every symbol is also
    extended by a W-sample cyclic suffix, both ends are tapered with a
    raised-cosine ramp, and neighbours overlap-add over W samples.  The
    taper only touches the prefix, so the receiver's FFT window is intact.
    """
    symbols = frame.symbols if isinstance(frame, QamFrame) else np.asarray(frame)
    symbols = np.atleast_2d(symbols)
    n, a = spec.num_subcarriers, spec.num_active_subcarriers
    users, s = symbols.shape
    if s % a:
        raise ValueError(f"{s} symbols is not a multiple of {a} active subcarriers")
    nsym = s // a
    cp, w = spec.cp_length, spec.edge_window_samples
    grid = np.zeros((users, nsym, n), dtype=complex)
    grid[:, :, active_bins(n, a)] = symbols.reshape(users, nsym, a)
    body = np.fft.ifft(grid, axis=-1) * np.sqrt(n)
    ext = np.concatenate([body[..., n - cp:], body, body[..., :w]], axis=-1)
    ext = ext * _edge_window(n + cp + w, w)
    step = n + cp
    out = np.zeros((users, nsym * step + w), dtype=complex)
    for i in range(nsym):
        out[:, i * step:i * step + step + w] += ext[:, i]
    return FrameSignal(out, spec.bandwidth_hz, spec.center_frequency_hz, spec.bandwidth_hz)


def rrc_taps(rolloff: float, oversampling_factor: int, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine FIR with ``span_symbols * oversampling_factor + 1`` taps, unit energy."""
    t = np.arange(-span_symbols * oversampling_factor // 2,
                  span_symbols * oversampling_factor // 2 + 1) / oversampling_factor
    a = rolloff
    h = np.empty_like(t)
    centre = t == 0
    special = np.isclose(np.abs(t), 1 / (4 * a))
    regular = ~(centre | special)
    tr = t[regular]
    h[regular] = ((np.sin(np.pi * tr * (1 - a)) + 4 * a * tr * np.cos(np.pi * tr * (1 + a)))
                  / (np.pi * tr * (1 - (4 * a * tr) ** 2)))
    h[centre] = 1 - a + 4 * a / np.pi
    h[special] = a / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * a))
                                   + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a)))
    return h / np.linalg.norm(h)


def rrc_shape_and_oversample(signal: FrameSignal, rolloff: float, oversampling_factor: int,
                             span_symbols: int = 128) -> FrameSignal:
    """Zero-insertion upsampling followed by RRC filtering.

    Output length is ``osf * N + len(taps) - 1``.  The gain ``sqrt(osf)``
    keeps the average power of the input.
    """
    if oversampling_factor < 4:
        raise ValueError("oversampling_factor must be >= 4 to cover both adjacent bands")
    h = rrc_taps(rolloff, oversampling_factor, span_symbols)
    x = np.atleast_2d(signal.samples)
    up = np.zeros((x.shape[0], x.shape[1] * oversampling_factor), dtype=complex)
    up[:, ::oversampling_factor] = x
    y = np.stack([np.convolve(row, h) for row in up]) * np.sqrt(oversampling_factor)
    return FrameSignal(y, signal.sample_rate * oversampling_factor,
                       signal.center_frequency, signal.bandwidth)


def matched_filter_and_downsample(samples: np.ndarray, spec: WaveformSpec,
                                  num_samples: int) -> np.ndarray:
    """Receive-side RRC matched filter, then pick ``num_samples`` symbol-rate samples."""
    osf = spec.oversampling_factor
    h = rrc_taps(spec.rrc_rolloff, osf, spec.rrc_span_symbols)
    delay = len(h) - 1
    x = np.atleast_2d(samples)
    z = np.stack([np.convolve(row, h) for row in x]) / np.sqrt(osf)
    return z[:, delay:delay + num_samples * osf:osf]


def ofdm_demodulate(samples: np.ndarray, spec: WaveformSpec) -> np.ndarray:
    """Inverse of :func:`ofdm_modulate` on symbol-rate samples; returns ``[K, S]`` symbols."""
    n, cp = spec.num_subcarriers, spec.cp_length
    nsym = spec.num_ofdm_symbols
    x = np.atleast_2d(samples)[:, :nsym * (n + cp)]
    body = x.reshape(x.shape[0], nsym, n + cp)[..., cp:]
    grid = np.fft.fft(body, axis=-1) / np.sqrt(n)
    sym = grid[..., active_bins(n, spec.num_active_subcarriers)]
    return sym.reshape(x.shape[0], -1)


@dataclass(frozen=True)
class UserWaveforms:
    qam: QamFrame
    ofdm: FrameSignal            # symbol-rate OFDM stream, before shaping
    shaped: FrameSignal          # oversampled, unit average power per user
    gains: np.ndarray            # [K] scale applied to reach unit power


def transmit_waveforms(spec: WaveformSpec, num_users: int, seed: int) -> UserWaveforms:
    """Run the whole linear chain and normalize each user's waveform to unit power."""
    qam = generate_qam(num_users, spec.num_qam_symbols, seed, spec.qam_order)
    ofdm = ofdm_modulate(qam, spec)
    shaped = rrc_shape_and_oversample(ofdm, spec.rrc_rolloff, spec.oversampling_factor,
                                      spec.rrc_span_symbols)
    power = np.mean(np.abs(shaped.samples) ** 2, axis=1)
    gains = 1 / np.sqrt(power)
    unit = FrameSignal(shaped.samples * gains[:, None], shaped.sample_rate,
                       shaped.center_frequency, shaped.bandwidth)
    return UserWaveforms(qam, ofdm, unit, gains)
