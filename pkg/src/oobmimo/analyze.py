"""IM-beam angle prediction, heatmap assembly, beam-peak detection, spatial statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import KpiReport
from .scenario import GridSpec


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class ImPrediction:
    theta_a: float               # radians, NaN when invalid
    theta_b: float
    valid_a: bool
    valid_b: bool
    variant: str                 # "exact" or "approx"


def _asin_flag(arg: float) -> tuple[float, bool]:
    if abs(arg) > 1:
        return float("nan"), False
    return float(np.arcsin(arg)), True


def im_angles_exact(theta1: float, theta2: float, f1: float, f2: float) -> ImPrediction:
    """IM3 beam directions at ``2 f1 - f2`` (A) and ``2 f2 - f1`` (B).

    A tone at ``f_i`` steered to ``theta_i`` has phase slope
    ``f_i sin(theta_i)`` across the array; the product at ``2 f1 - f2``
    carries ``2 f1 sin(theta1) - f2 sin(theta2)`` and radiates where that
    slope matches its own frequency.
    """
    da, db = 2 * f1 - f2, 2 * f2 - f1
    if da == 0 or db == 0:
        raise AnalysisError("IM product at zero frequency")
    s1, s2 = np.sin(theta1), np.sin(theta2)
    a, va = _asin_flag((2 * f1 * s1 - f2 * s2) / da)
    b, vb = _asin_flag((2 * f2 * s2 - f1 * s1) / db)
    return ImPrediction(a, b, va, vb, "exact")


def im_angles_approx(theta1: float, theta2: float) -> ImPrediction:
    """Frequency-independent form, valid when ``f1 ~ f2``."""
    s1, s2 = np.sin(theta1), np.sin(theta2)
    a, va = _asin_flag(2 * s1 - s2)
    b, vb = _asin_flag(2 * s2 - s1)
    return ImPrediction(a, b, va, vb, "approx")


@dataclass(frozen=True)
class Heatmap:
    """Scalar dB map, row 0 = max y.

    ``origin`` is the center of cell (0, 0); cell (i, j) sits at
    ``origin + (j * spacing[0], -i * spacing[1])``.
    """
    values: np.ndarray           # [points_y, points_x]
    origin: tuple[float, float]
    spacing: tuple[float, float]
    quantity: str
    bs_position: tuple[float, float, float]
    user_positions: tuple[tuple[float, float, float], ...] = ()

    def cell_xy(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.values.shape
        x = self.origin[0] + np.arange(nx) * self.spacing[0]
        y = self.origin[1] - np.arange(ny) * self.spacing[1]
        return np.meshgrid(x, y)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        j = int(round((x - self.origin[0]) / self.spacing[0]))
        i = int(round((self.origin[1] - y) / self.spacing[1]))
        ny, nx = self.values.shape
        if not (0 <= i < ny and 0 <= j < nx):
            raise AnalysisError(f"({x}, {y}) lies outside the map")
        return i, j


_QUANTITY_FIELD = {"oob_power": "oob_power_db", "ib_power": "ib_power_db", "aclr": "aclr_db"}


def assemble_heatmap(report: KpiReport, quantity: str, grid: GridSpec,
                     bs_position=(0.0, 0.0, 0.0)) -> Heatmap:
    """Place observer KPIs on the grid by their ``grid_cell``."""
    if quantity not in _QUANTITY_FIELD:
        raise AnalysisError(f"unknown heatmap quantity {quantity!r}")
    attr = _QUANTITY_FIELD[quantity]
    values = np.full((grid.points_y, grid.points_x), np.nan)
    for p in report.observers():
        if p.grid_cell is None:
            continue
        values[p.grid_cell] = getattr(p, attr)
    missing = np.argwhere(np.isnan(values))
    if missing.size:
        raise AnalysisError(f"{len(missing)} grid cells have no KPI, first at {tuple(missing[0])}")
    users = tuple(tuple(float(v) for v in p.position) for p in report.points if p.kind == "user")
    origin = (grid.dx / 2, grid.area_height_m - grid.dy / 2)
    return Heatmap(values, origin, (grid.dx, grid.dy), quantity,
                   tuple(float(v) for v in bs_position), users)


@dataclass(frozen=True)
class BeamPeak:
    azimuth_deg: float
    power_db: float              # raw heatmap value at the peak cell
    score_db: float              # value used for ranking (range-compensated if enabled)


def azimuth_profile(heatmap: Heatmap, bs_position, bin_deg: float = 1.0,
                    range_compensation: bool = True, boresight_deg: float = 0.0):
    """Max-per-bin projection of the map onto azimuth seen from the BS.

    Returns ``(bin_index, score, azimuth_of_max_cell, raw_value)`` for the
    non-empty bins, ascending in azimuth.  With ``range_compensation`` the
    free-space ``20 log10(r)`` is added back before taking the maximum, so
    a beam is not masked by nearer cells at other angles.
    """
    xx, yy = heatmap.cell_xy()
    dx, dy = xx - bs_position[0], yy - bs_position[1]
    az = np.degrees(np.arctan2(dy, dx)) - boresight_deg
    az = (az + 180) % 360 - 180
    r = np.hypot(dx, dy)
    raw = heatmap.values
    front = (np.abs(az) < 90) & (r > 0) & np.isfinite(raw)
    score = raw + (20 * np.log10(np.where(r > 0, r, 1.0)) if range_compensation else 0.0)
    az, score, raw = az[front], score[front], raw[front]
    idx = np.floor(az / bin_deg + 0.5).astype(int)
    bins = np.unique(idx)
    best = np.empty(len(bins), dtype=int)
    for n, b in enumerate(bins):
        members = np.flatnonzero(idx == b)
        best[n] = members[np.argmax(score[members])]
    return bins, score[best], az[best], raw[best]


def detect_beam_peaks(heatmap: Heatmap, bs_position, bin_deg: float = 1.0,
                      threshold_db: float = 10.0, range_compensation: bool = True,
                      boresight_deg: float = 0.0) -> list[BeamPeak]:
    """Strict local maxima of the azimuth profile within ``threshold_db`` of its maximum."""
    if heatmap.values.size == 0:
        raise AnalysisError("empty heatmap")
    bins, score, az, raw = azimuth_profile(heatmap, bs_position, bin_deg, range_compensation,
                                           boresight_deg)
    if len(bins) == 0:
        return []
    floor = score.max() - threshold_db
    peaks = []
    for n in range(len(bins)):
        left = score[n - 1] if n > 0 else -np.inf
        right = score[n + 1] if n + 1 < len(bins) else -np.inf
        if score[n] > left and score[n] > right and score[n] >= floor:
            peaks.append(BeamPeak(float(az[n]), float(raw[n]), float(score[n])))
    return sorted(peaks, key=lambda p: -p.score_db)


@dataclass(frozen=True)
class SpatialSpread:
    std_db: float
    p95_minus_p5_db: float


def spatial_spread(heatmap: Heatmap | np.ndarray) -> SpatialSpread:
    v = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise AnalysisError("no finite values")
    p5, p95 = np.percentile(v, [5, 95])
    return SpatialSpread(float(np.std(v)), float(p95 - p5))


def write_heatmap_csv(heatmap: Heatmap, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin_x_m", "origin_y_m", f"{heatmap.origin[0]:.10g}", f"{heatmap.origin[1]:.10g}"])
        w.writerow(["dx_m", "dy_m", f"{heatmap.spacing[0]:.10g}", f"{-heatmap.spacing[1]:.10g}"])
        w.writerow(["quantity", f"{heatmap.quantity}_db"])
        for row in heatmap.values:
            w.writerow([f"{v:.10g}" for v in row])


def read_heatmap_csv(path: str | Path) -> Heatmap:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    origin = (float(rows[0][2]), float(rows[0][3]))
    spacing = (float(rows[1][2]), -float(rows[1][3]))
    quantity = rows[2][1].removesuffix("_db")
    values = np.array([[float(v) for v in r] for r in rows[3:]])
    return Heatmap(values, origin, spacing, quantity, (0.0, 0.0, 0.0))


def write_heatmap_pgm(heatmap: Heatmap, path: str | Path, vmin: float | None = None,
                      vmax: float | None = None) -> None:
    """Binary 8-bit PGM; ``vmin`` maps to black and ``vmax`` to white."""
    v = heatmap.values
    finite = v[np.isfinite(v)]
    lo = float(finite.min()) if vmin is None else vmin
    hi = float(finite.max()) if vmax is None else vmax
    span = hi - lo if hi > lo else 1.0
    gray = np.clip((np.nan_to_num(v, nan=lo) - lo) / span, 0, 1)
    img = np.round(gray * 255).astype(np.uint8)
    header = f"P5\n# {heatmap.quantity}_db range [{lo:.6g}, {hi:.6g}]\n{v.shape[1]} {v.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(img.tobytes())
