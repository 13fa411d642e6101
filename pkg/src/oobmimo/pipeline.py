"""End-to-end simulation: txchain -> precode -> pa -> channel -> propagate -> metrics -> analyze."""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import analyze, metrics
from .channel import ChannelSource, import_channel
from .pa import amplify, linear_gain
from .precode import PrecodingMatrix, apply_precoding, precoding_matrix
from .propagate import (apply_channel, demodulate_user, frequency_grid, from_spectrum,
                        in_band_mask, to_spectrum)
from .scenario import ScenarioError, ScenarioSpec, stage_seed
from .txchain import UserWaveforms, transmit_waveforms

# upper bound on one chunk's channel tensor, bytes
_CHUNK_BYTES = 96 * 2 ** 20

# field path blamed when a stage fails without a more specific one
_STAGE_FIELDS = {
    "txchain": "waveform",
    "precode": "precoder",
    "pa": "pa",
    "channel": "channel",
    "propagate": "channel",
    "metrics": "waveform",
    "analyze": "output",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, path: str, message: str):
        super().__init__(f"[{stage}] {path}: {message}")
        self.stage = stage
        self.path = path
        self.message = message


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except ScenarioError as exc:
        raise StageError(name, exc.path, exc.message) from exc
    except (ValueError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        raise StageError(name, _STAGE_FIELDS.get(name, name), str(exc)) from exc


@dataclass
class SimulationResult:
    spec: ScenarioSpec
    report: metrics.KpiReport
    heatmaps: dict[str, analyze.Heatmap]
    peaks: list[analyze.BeamPeak]
    spread: analyze.SpatialSpread
    precoder: PrecodingMatrix
    waveforms: UserWaveforms
    frequency_grid: np.ndarray

    @property
    def heatmap(self) -> analyze.Heatmap:
        return self.heatmaps[self.spec.output.heatmap_quantity]


def _channel_source(spec: ScenarioSpec, points: np.ndarray, grid: np.ndarray) -> ChannelSource:
    imported = None
    if spec.channel.model == "imported":
        path = spec.channel_file()
        if path is None:
            raise ScenarioError("channel.file", "required for the imported model")
        imported = import_channel(path, expected_grid=grid,
                                  expected_shape=(spec.array.num_antennas, len(points)))
    return ChannelSource(spec.channel, spec.effective_array(), points, grid,
                         stage_seed(spec.seed, "channel"), imported)


def _chunks(num_points: int, size: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + size, num_points)) for s in range(0, num_points, size)]


def simulate(spec: ScenarioSpec, threads: int = 1) -> SimulationResult:
    wf = spec.waveform
    k = spec.num_users
    bw = wf.bandwidth_hz

    with stage("txchain"):
        tx = transmit_waveforms(wf, k, stage_seed(spec.seed, "txchain"))
        n = sfft.next_fast_len(tx.shaped.num_samples)
        s = np.zeros((k, n), dtype=complex)
        s[:, :tx.shaped.num_samples] = tx.shaped.samples
        spectra = to_spectrum(s)
        grid = frequency_grid(n, wf.sample_rate_hz, wf.center_frequency_hz)
        ib = in_band_mask(grid, wf.center_frequency_hz, bw)

    with stage("channel"):
        points = spec.receive_points()
        source = _channel_source(spec, points, grid)
        h_users = source(np.arange(k))

    with stage("precode"):
        w = precoding_matrix(h_users[:, :, ib], spec.precoder.kind, spec.precoder.regularization,
                             spec.precoder.nominal_snr_db)
        x_spec = np.zeros((spec.array.num_antennas, n), dtype=complex)
        x_spec[:, ib] = apply_precoding(spectra[:, ib], w)
        x = from_spectrum(x_spec)

    with stage("pa"):
        y_pa = amplify(x, spec.pa)
        g = linear_gain(x, y_pa)
        y_spec = to_spectrum(y_pa)

    with stage("channel"):
        # end-to-end linear gain of each user's own stream, per bin
        eff = np.zeros((k, n), dtype=complex)
        eff[:, ib] = np.einsum("mkf,m,mkf->kf", h_users[:, :, ib], g, w.weights)

    m = spec.array.num_antennas
    per_chunk = max(1, min(spec.output.point_chunk, _CHUNK_BYTES // (16 * m * n)))

    def evaluate(idx: np.ndarray):
        with stage("channel"):
            hc = h_users[:, idx] if idx[-1] < k else source(idx)
        with stage("propagate"):
            y = from_spectrum(apply_channel(y_spec, hc))
        with stage("metrics"):
            psd = metrics.welch_psd(y, wf.sample_rate_hz)
        return idx, y[idx < k], psd.density, psd.frequencies

    chunks = _chunks(len(points), per_chunk)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, chunks))
    else:
        results = [evaluate(c) for c in chunks]

    with stage("metrics"):
        density = np.concatenate([r[2] for r in results])
        psd = metrics.PsdEstimate(results[0][3], density)
        user_rx = np.concatenate([r[1] for r in results])
        ib_db = metrics.ib_power(psd, bw)
        oob_db = metrics.oob_power(psd, bw)
        with np.errstate(divide="ignore", invalid="ignore"):
            aclr_db = metrics.aclr(psd, bw)
        nx = spec.grid.points_x
        pts = []
        for p in range(len(points)):
            kind = "user" if p < k else "observer"
            cell = None if p < k else divmod(p - k, nx)
            pts.append(metrics.PointKpi(p, kind, tuple(float(v) for v in points[p]),
                                        float(ib_db[p]), float(oob_db[p]), float(aclr_db[p]), cell))
        users = []
        for u in range(k):
            rx = demodulate_user(user_rx[u], u, wf, eff[u], tx.gains[u])
            users.append(metrics.UserKpi(u, metrics.evm(tx.qam.symbols[u], rx), rx))
        report = metrics.KpiReport(pts, psd, users, bw)

    with stage("analyze"):
        bs = spec.bs_position
        heatmaps = {q: analyze.assemble_heatmap(report, q, spec.grid, bs)
                    for q in ("oob_power", "ib_power", "aclr")}
        out = spec.output
        peaks = analyze.detect_beam_peaks(heatmaps["oob_power"], bs, out.azimuth_bin_deg,
                                          out.peak_threshold_db, out.range_compensation,
                                          spec.array.boresight_azimuth_deg)
        spread = analyze.spatial_spread(heatmaps["oob_power"])

    return SimulationResult(spec, report, heatmaps, peaks, spread, w, tx, grid)
