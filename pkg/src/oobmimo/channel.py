"""Frequency-resolved channel tensors ``[M, P, F]`` between the BS array and receive points.

Three generated models share one geometry convention (see
:class:`~oobmimo.scenario.ArraySpec`): deterministic line of sight, a
cluster multipath surrogate for non-line-of-sight urban propagation, and an
i.i.d. Rayleigh tapped delay line.  Tensors can also be read from and
written to a small binary interchange format.

The frequency axis is always ascending absolute frequency in Hz.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import SPEED_OF_LIGHT, ArraySpec, ChannelSpec

MAGIC = b"OOBCHTNS"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")
BACKLOBE_FLOOR = 0.1  # -20 dB amplitude


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelTensor:
    h: np.ndarray                 # [M, P, F] complex
    frequency_grid: np.ndarray    # [F] Hz, ascending
    model_kind: str

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.h.shape


@dataclass(frozen=True)
class Cluster:
    angle_offset_deg: float
    angular_spread_deg: float
    excess_delay_s: float
    delay_spread_s: float
    power: float


@dataclass(frozen=True)
class ClusterSpec:
    """Clusters relative to a point's line-of-sight azimuth and delay."""
    clusters: tuple[Cluster, ...]
    rays_per_cluster: int = 20

    def __post_init__(self):
        if not self.clusters:
            raise ChannelError("cluster list is empty")
        powers = np.array([c.power for c in self.clusters])
        if np.any(powers <= 0):
            raise ChannelError("cluster powers must be positive")
        if abs(powers.sum() - 1) > 1e-9:
            raise ChannelError(f"cluster powers sum to {powers.sum()}, expected 1")
        if self.rays_per_cluster < 1:
            raise ChannelError("rays_per_cluster must be >= 1")

    @property
    def rms_delay_spread(self) -> float:
        p = np.array([c.power for c in self.clusters])
        tau = np.array([c.excess_delay_s for c in self.clusters])
        mean = np.sum(p * tau)
        return float(np.sqrt(np.sum(p * (tau - mean) ** 2)))


@dataclass(frozen=True)
class ClusterParams:
    """Distribution from which a fresh :class:`ClusterSpec` is drawn for every point."""
    num_clusters: int = 8
    rays_per_cluster: int = 20
    angular_spread_deg: float = 5.0
    angle_range_deg: float = 60.0
    rms_delay_spread_s: float = 300e-9
    intra_cluster_delay_spread_s: float = 10e-9
    shadowing_db: float = 3.0

    @classmethod
    def from_channel_spec(cls, ch: ChannelSpec) -> "ClusterParams":
        return cls(ch.num_clusters, ch.rays_per_cluster, ch.cluster_angular_spread_deg,
                   ch.cluster_angle_range_deg, ch.rms_delay_spread_s,
                   ch.intra_cluster_delay_spread_s)

    def draw(self, rng: np.random.Generator) -> ClusterSpec:
        n = self.num_clusters
        offsets = rng.uniform(-self.angle_range_deg, self.angle_range_deg, n)
        delays = np.sort(rng.exponential(self.rms_delay_spread_s, n)) if self.rms_delay_spread_s else np.zeros(n)
        delays -= delays[0]
        if self.rms_delay_spread_s:
            powers = np.exp(-delays / self.rms_delay_spread_s)
        else:
            powers = np.ones(n)
        powers *= 10 ** (rng.normal(0, self.shadowing_db, n) / 10)
        powers /= powers.sum()
        clusters = tuple(Cluster(float(o), self.angular_spread_deg, float(d),
                                 self.intra_cluster_delay_spread_s, float(p))
                         for o, d, p in zip(offsets, delays, powers))
        return ClusterSpec(clusters, self.rays_per_cluster)


def element_gain(cos_off_boresight: np.ndarray, pattern: str) -> np.ndarray:
    """Amplitude pattern: ``cos`` of the off-boresight angle, clipped at -20 dB, or isotropic."""
    c = np.asarray(cos_off_boresight, dtype=float)
    if pattern == "isotropic":
        return np.ones_like(c)
    if pattern == "cosine-patch":
        return np.maximum(c, BACKLOBE_FLOOR)
    raise ChannelError(f"unknown element pattern {pattern!r}")


def steering_vector(theta: float, f: float, array: ArraySpec) -> np.ndarray:
    """``a_m = g(theta) exp(-j 2 pi f d m sin(theta) / c)`` for ``m = 0..M-1``."""
    if not -math.pi / 2 < theta < math.pi / 2:
        raise ChannelError("theta must lie in (-pi/2, pi/2)")
    m = np.arange(array.num_antennas)
    g = element_gain(math.cos(theta), array.element_pattern)
    return g * np.exp(-2j * np.pi * f * array.element_spacing_m * m * math.sin(theta) / SPEED_OF_LIGHT)


def _is_uniform(freqs: np.ndarray) -> bool:
    if freqs.size < 3:
        return True
    d = np.diff(freqs)
    return bool(np.all(d > 0) and np.ptp(d) <= 1e-9 * abs(d[0]))


def ray_sum(gains: np.ndarray, delays: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """``H[m, k] = sum_r gains[r, m] exp(-j 2 pi freqs[k] delays[r, m])``.

    On a uniform grid the index is split as ``k = D k1 + k2`` so the sum
    becomes a batched ``[K1, R] @ [R, D]`` product per antenna; this is
    exact, not an interpolation.
    """
    gains = np.broadcast_to(np.asarray(gains, dtype=complex), delays.shape)
    freqs = np.asarray(freqs, dtype=float)
    n = freqs.size
    if not _is_uniform(freqs) or n < 64:
        phase = np.exp(-2j * np.pi * freqs[None, None, :] * delays[:, :, None])
        return np.einsum("rm,rmk->mk", gains, phase)
    df = (freqs[-1] - freqs[0]) / (n - 1)
    d = int(math.ceil(math.sqrt(n)))
    k1 = int(math.ceil(n / d))
    # matmul only reaches BLAS with C-contiguous operands
    tau = np.ascontiguousarray(delays.T)                          # [M, R]
    f_coarse = freqs[0] + np.arange(k1) * d * df                  # [K1]
    a = np.ascontiguousarray(gains.T)[:, None, :] * np.exp(-2j * np.pi * f_coarse[None, :, None] * tau[:, None, :])
    b = np.exp((-2j * np.pi * df) * np.arange(d)[None, None, :] * tau[:, :, None])  # [M, R, D]
    h = np.ascontiguousarray(a) @ np.ascontiguousarray(b)
    return h.reshape(h.shape[0], -1)[:, :n]


@dataclass(frozen=True)
class _Geometry:
    r: np.ndarray          # [P] distance from the array reference
    sin_phi: np.ndarray    # [P] sine of azimuth relative to boresight
    cos_phi: np.ndarray
    cos_el: np.ndarray     # [P] cosine of elevation


def _geometry(points: np.ndarray, array: ArraySpec) -> _Geometry:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = points - array.bs_position[None, :]
    r = np.linalg.norm(v, axis=1)
    if np.any(r == 0):
        raise ChannelError(f"receive point collocated with the BS: {np.flatnonzero(r == 0).tolist()}")
    horiz = np.hypot(v[:, 0], v[:, 1])
    bore = array.boresight
    fwd = v @ bore
    side = -(v @ array.axis)
    if np.any(fwd <= 0):
        raise ChannelError(f"points behind the array: {np.flatnonzero(fwd <= 0).tolist()}")
    return _Geometry(r, side / horiz, fwd / horiz, horiz / r)


def _path_loss(freqs: np.ndarray, r: float) -> np.ndarray:
    return SPEED_OF_LIGHT / (4 * np.pi * freqs * r)


def los_channel(points: np.ndarray, array: ArraySpec, frequency_grid: np.ndarray,
                spherical: bool = False, path_loss: bool = True) -> ChannelTensor:
    """Free-space line-of-sight tensor.

    Far-field (default): column ``p`` is ``a(theta_p, f) * lambda(f)/(4 pi r_p) *
    exp(-j 2 pi f r_p / c)``.  ``spherical=True`` uses exact per-element
    distances for both phase and amplitude.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    freqs = np.asarray(frequency_grid, dtype=float)
    geo = _geometry(points, array)
    m = np.arange(array.num_antennas)
    d = array.element_spacing_m
    out = np.empty((array.num_antennas, len(points), freqs.size), dtype=complex)
    elements = array.element_positions()
    for p in range(len(points)):
        g = element_gain(geo.cos_phi[p] * geo.cos_el[p], array.element_pattern)
        if spherical:
            dist = np.linalg.norm(points[p][None, :] - elements, axis=1)
            delays = (dist / SPEED_OF_LIGHT)[None, :]
            amp = g * (geo.r[p] / dist if path_loss else np.ones_like(dist))
            out[:, p] = ray_sum(amp[None, :], delays, freqs)
        else:
            sin_theta = geo.sin_phi[p] * geo.cos_el[p]
            delays = ((geo.r[p] + m * d * sin_theta) / SPEED_OF_LIGHT)[None, :]
            out[:, p] = ray_sum(np.full((1, m.size), g), delays, freqs)
        if path_loss:
            out[:, p] *= _path_loss(freqs, geo.r[p])[None, :]
    return ChannelTensor(out, freqs, "los")


def point_rng(seed: int, point: np.ndarray, label: str) -> np.random.Generator:
    """Generator keyed by the point's coordinates (mm resolution), so column order never matters."""
    key = ",".join(f"{round(float(c) * 1000)}" for c in point)
    digest = hashlib.sha256(f"{seed}:{label}:{key}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _fold_angle(phi: np.ndarray) -> np.ndarray:
    """Reflect azimuths into the array's front half-plane."""
    half = np.pi / 2
    phi = np.where(phi > half, np.pi - phi, phi)
    phi = np.where(phi < -half, -np.pi - phi, phi)
    return np.clip(phi, -half + 1e-6, half - 1e-6)


def cluster_multipath_channel(points: np.ndarray, array: ArraySpec, frequency_grid: np.ndarray,
                              cluster_spec: ClusterSpec | ClusterParams, seed: int,
                              path_loss: bool = True) -> ChannelTensor:
    """Sum of clustered sub-rays around each point's line-of-sight direction.

    Every sub-ray departs at the cluster's mean azimuth offset plus a
    Gaussian perturbation of the angular spread, arrives after the LoS
    delay plus the cluster's excess delay plus an exponential intra-cluster
    spread, and carries ``sqrt(P_l / rays)`` with a uniform random phase.
    A :class:`ClusterParams` draws an independent cluster layout for each
    point.  Far-field only.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    freqs = np.asarray(frequency_grid, dtype=float)
    geo = _geometry(points, array)
    m = np.arange(array.num_antennas)
    d = array.element_spacing_m
    out = np.empty((array.num_antennas, len(points), freqs.size), dtype=complex)
    for p in range(len(points)):
        rng = point_rng(seed, points[p], "cluster")
        spec = cluster_spec.draw(rng) if isinstance(cluster_spec, ClusterParams) else cluster_spec
        n = spec.rays_per_cluster
        phi0 = math.atan2(geo.sin_phi[p], geo.cos_phi[p])
        phi, tau, amp = [], [], []
        for c in spec.clusters:
            phi.append(phi0 + np.radians(c.angle_offset_deg + c.angular_spread_deg * rng.standard_normal(n)))
            spread = rng.exponential(c.delay_spread_s, n) if c.delay_spread_s else np.zeros(n)
            tau.append(c.excess_delay_s + spread)
            amp.append(np.sqrt(c.power / n) * np.exp(2j * np.pi * rng.random(n)))
        phi = _fold_angle(np.concatenate(phi))
        tau = np.concatenate(tau) + geo.r[p] / SPEED_OF_LIGHT
        g = element_gain(np.cos(phi) * geo.cos_el[p], array.element_pattern)
        gains = (np.concatenate(amp) * g)[:, None] * np.ones((1, m.size))
        delays = tau[:, None] + m[None, :] * d * (np.sin(phi) * geo.cos_el[p])[:, None] / SPEED_OF_LIGHT
        out[:, p] = ray_sum(gains, delays, freqs)
        if path_loss:
            out[:, p] *= _path_loss(freqs, geo.r[p])[None, :]
    return ChannelTensor(out, freqs, "cluster-multipath")


def iid_rayleigh_tdl_channel(points: np.ndarray, array: ArraySpec, frequency_grid: np.ndarray,
                             num_taps: int, seed: int, tap_spacing_s: float = 25e-9,
                             path_loss: bool = True) -> ChannelTensor:
    """Independent complex-Gaussian tapped delay line per (antenna, point), unit total tap power."""
    if num_taps < 1:
        raise ChannelError("num_taps must be >= 1")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    freqs = np.asarray(frequency_grid, dtype=float)
    geo = _geometry(points, array) if path_loss else None
    mm = array.num_antennas
    delays = np.repeat((np.arange(num_taps) * tap_spacing_s)[:, None], mm, axis=1)
    out = np.empty((mm, len(points), freqs.size), dtype=complex)
    for p in range(len(points)):
        rng = point_rng(seed, points[p], "rayleigh")
        taps = (rng.standard_normal((num_taps, mm)) + 1j * rng.standard_normal((num_taps, mm)))
        taps /= np.sqrt(2 * num_taps)
        out[:, p] = ray_sum(taps, delays, freqs)
        if path_loss:
            out[:, p] *= _path_loss(freqs, geo.r[p])[None, :]
    return ChannelTensor(out, freqs, "iid-rayleigh-tdl")


def write_channel(path: str | Path, tensor: ChannelTensor) -> None:
    """Write the interchange format: header, float64 grid, complex64 data (antenna, point, frequency)."""
    h = np.asarray(tensor.h)
    m, p, f = h.shape
    grid = np.asarray(tensor.frequency_grid, dtype="<f8")
    if grid.shape != (f,):
        raise ChannelError("frequency grid length does not match the tensor")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, m, p, f))
        fh.write(grid.tobytes())
        fh.write(np.ascontiguousarray(h, dtype="<c8").tobytes())


def import_channel(path: str | Path, expected_grid: np.ndarray | None = None,
                   expected_shape: tuple[int, int] | None = None) -> ChannelTensor:
    """Read and validate an interchange file.

    ``expected_grid`` must match the file's frequency grid bin for bin;
    ``expected_shape`` is ``(M, P)``.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ChannelError("file too short for a channel header")
    magic, version, m, p, f = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ChannelError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ChannelError(f"unsupported version {version}")
    need = _HEADER.size + 8 * f + 8 * m * p * f
    if len(raw) != need:
        raise ChannelError(f"file has {len(raw)} bytes, header implies {need}")
    grid = np.frombuffer(raw, dtype="<f8", count=f, offset=_HEADER.size).copy()
    h = np.frombuffer(raw, dtype="<c8", offset=_HEADER.size + 8 * f).reshape(m, p, f).copy()
    if expected_grid is not None:
        expected_grid = np.asarray(expected_grid)
        if expected_grid.shape != grid.shape:
            raise ChannelError(f"tensor has {f} frequency bins, waveform FFT length is {expected_grid.size}")
        if not np.allclose(expected_grid, grid, rtol=0, atol=1e-3):
            raise ChannelError("frequency grid does not match the waveform grid")
    if expected_shape is not None and (m, p) != tuple(expected_shape):
        raise ChannelError(f"tensor is {m} x {p}, scenario needs {expected_shape[0]} x {expected_shape[1]}")
    return ChannelTensor(h, grid, "imported")


@dataclass
class ChannelSource:
    """Produces ``[M, len(idx), F]`` channel columns for subsets of the receive points."""
    channel: ChannelSpec
    array: ArraySpec
    points: np.ndarray
    frequency_grid: np.ndarray
    seed: int
    imported: ChannelTensor | None = None

    def __call__(self, idx: np.ndarray) -> np.ndarray:
        pts = self.points[idx]
        ch, arr, f = self.channel, self.array, self.frequency_grid
        if ch.model == "los":
            return los_channel(pts, arr, f, ch.spherical_wavefront, ch.path_loss).h
        if ch.model == "cluster":
            return cluster_multipath_channel(pts, arr, f, ClusterParams.from_channel_spec(ch),
                                             self.seed, ch.path_loss).h
        if ch.model == "rayleigh":
            return iid_rayleigh_tdl_channel(pts, arr, f, ch.num_taps, self.seed,
                                            ch.tap_spacing_s, ch.path_loss).h
        if ch.model == "imported":
            if self.imported is None:
                raise ChannelError("no imported tensor loaded")
            return np.asarray(self.imported.h[:, idx], dtype=complex)
        raise ChannelError(f"unknown channel model {ch.model!r}")
