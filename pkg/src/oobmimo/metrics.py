"""Spectral and symbol-level KPIs: Welch PSD, ACLR, OOB power, EVM, ECDF."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

DB_FLOOR = -200.0

# numpy < 2 only has the old name
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class MetricError(ValueError):
    pass


def to_db(x, floor: float = DB_FLOOR):
    """``10 log10(x)`` with ``floor`` in place of -inf."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(x > 0, 10 * np.log10(np.where(x > 0, x, 1.0)), floor)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PsdEstimate:
    frequencies: np.ndarray      # Hz, ascending, baseband
    density: np.ndarray          # linear power per Hz, [..., F]
    segment_length: int = 1024
    overlap: int = 512
    window: str = "hann"

    @property
    def density_db(self) -> np.ndarray:
        return to_db(self.density)

    def __getitem__(self, idx) -> "PsdEstimate":
        return PsdEstimate(self.frequencies, self.density[idx], self.segment_length,
                           self.overlap, self.window)


def welch_psd(x: np.ndarray, sample_rate: float, segment_length: int = 1024,
              overlap: int | None = None, window: str = "hann") -> PsdEstimate:
    """Two-sided Welch density along the last axis, centered at baseband zero."""
    x = np.asarray(x)
    if x.shape[-1] < segment_length:
        raise MetricError(f"signal of {x.shape[-1]} samples is shorter than one segment")
    overlap = segment_length // 2 if overlap is None else overlap
    f, p = sps.welch(x, fs=sample_rate, window=window, nperseg=segment_length, noverlap=overlap,
                     return_onesided=False, detrend=False, scaling="density", axis=-1)
    return PsdEstimate(np.fft.fftshift(f), np.fft.fftshift(p, axes=-1), segment_length,
                       overlap, window)


def band_power(psd: PsdEstimate, lo: float, hi: float) -> np.ndarray:
    """Trapezoidal integral of the density over ``[lo, hi]``.

    Edges snap to the nearest bin; a bin sitting exactly on a shared edge
    gets half weight in each neighbouring band, which is what the
    trapezoid rule does.
    """
    f = psd.frequencies
    df = f[1] - f[0]
    if lo < f[0] - df / 2 or hi > f[-1] + df / 2:
        raise MetricError(f"PSD covers [{f[0]:.4g}, {f[-1]:.4g}] Hz, need [{lo:.4g}, {hi:.4g}]")
    i0 = int(np.argmin(np.abs(f - lo)))
    i1 = int(np.argmin(np.abs(f - hi)))
    return _trapezoid(psd.density[..., i0:i1 + 1], f[i0:i1 + 1], axis=-1)


def band_powers(psd: PsdEstimate, bandwidth: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """In-band, lower-adjacent and upper-adjacent integrals."""
    b = bandwidth
    return (band_power(psd, -b / 2, b / 2), band_power(psd, -3 * b / 2, -b / 2),
            band_power(psd, b / 2, 3 * b / 2))


def aclr(psd: PsdEstimate, bandwidth: float):
    """Worse adjacent band over the in-band integral, in dB."""
    ib, lo, hi = band_powers(psd, bandwidth)
    if np.any(np.asarray(ib) <= 0):
        raise MetricError("no in-band power")
    return to_db(np.maximum(lo, hi) / ib)


def oob_power(psd: PsdEstimate, bandwidth: float):
    """Sum of both adjacent-band integrals, in dB."""
    _, lo, hi = band_powers(psd, bandwidth)
    return to_db(lo + hi)


def ib_power(psd: PsdEstimate, bandwidth: float):
    return to_db(band_powers(psd, bandwidth)[0])


def evm(qam_tx: np.ndarray, qam_rx: np.ndarray) -> float:
    """``sum |tx - rx|^2 / sum |tx|^2``."""
    tx = np.asarray(qam_tx).ravel()
    rx = np.asarray(qam_rx).ravel()
    if tx.size == 0:
        raise MetricError("empty symbol set")
    if tx.shape != rx.shape:
        raise MetricError(f"length mismatch: {tx.size} vs {rx.size}")
    ref = np.sum(np.abs(tx) ** 2)
    if ref == 0:
        raise MetricError("transmitted symbols have zero power")
    return float(np.sum(np.abs(tx - rx) ** 2) / ref)


def ecdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and the fraction of samples ``<=`` each."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise MetricError("ECDF of an empty set")
    uniq, counts = np.unique(v, return_counts=True)
    return uniq, np.cumsum(counts) / v.size


@dataclass(frozen=True)
class PointKpi:
    index: int
    kind: str                    # "user" or "observer"
    position: tuple[float, float, float]
    ib_power_db: float
    oob_power_db: float
    aclr_db: float
    grid_cell: tuple[int, int] | None = None


@dataclass(frozen=True)
class UserKpi:
    user: int
    evm: float
    constellation: np.ndarray = field(repr=False)

    @property
    def evm_db(self) -> float:
        return to_db(self.evm)


@dataclass
class KpiReport:
    points: list[PointKpi]
    psd: PsdEstimate             # density is [P, F], rows follow ``points``
    users: list[UserKpi]
    bandwidth: float

    def observers(self) -> list[PointKpi]:
        return [p for p in self.points if p.kind == "observer"]

    def ecdf(self) -> tuple[np.ndarray, np.ndarray]:
        return ecdf([p.oob_power_db for p in self.observers()])

    def recompute_aclr(self, row: int) -> float:
        return aclr(self.psd[row], self.bandwidth)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def write_points_csv(report: KpiReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point", "kind", "x", "y", "ib_power_db", "oob_power_db", "aclr_db"])
        for p in report.points:
            w.writerow([p.index, p.kind, _fmt(p.position[0]), _fmt(p.position[1]),
                        _fmt(p.ib_power_db), _fmt(p.oob_power_db), _fmt(p.aclr_db)])


def write_users_csv(report: KpiReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "evm", "evm_db"])
        for u in report.users:
            w.writerow([u.user, _fmt(u.evm), _fmt(u.evm_db)])


def write_ecdf_csv(report: KpiReport, path: str | Path) -> None:
    values, fractions = report.ecdf()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["oob_power_db", "fraction"])
        for v, f in zip(values, fractions):
            w.writerow([_fmt(v), _fmt(f)])
