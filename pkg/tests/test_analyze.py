import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oobmimo import analyze, metrics
from oobmimo.analyze import (AnalysisError, Heatmap, assemble_heatmap, detect_beam_peaks,
                             im_angles_approx, im_angles_exact, spatial_spread)
from oobmimo.scenario import GridSpec

R = math.radians
FC = 3.5e9


def test_paper_fifteen_degree_pair():
    p = im_angles_exact(R(15), R(-15), FC, FC + 1.0)
    assert math.degrees(p.theta_a) == pytest.approx(50.94, abs=0.01)
    assert math.degrees(p.theta_b) == pytest.approx(-50.94, abs=0.01)
    a = im_angles_approx(R(15), R(-15))
    assert math.degrees(a.theta_a) == pytest.approx(50.94, abs=0.01)
    assert math.degrees(a.theta_a) == pytest.approx(math.degrees(math.asin(3 * math.sin(R(15)))), abs=1e-12)


def test_favorite_direction_pair():
    a = im_angles_approx(R(80), R(29.5))
    assert abs(math.degrees(a.theta_b)) < 0.01
    assert math.degrees(a.theta_b) == pytest.approx(0.002, abs=0.001)
    assert not a.valid_a


def test_coincident_users():
    p = im_angles_exact(R(20), R(20), FC, FC - 5e6)
    assert p.theta_a == pytest.approx(R(20)) and p.theta_b == pytest.approx(R(20))


def test_invalid_flag_outside_arcsin_domain():
    a = im_angles_approx(R(45), R(-45))
    assert not a.valid_a and not a.valid_b and math.isnan(a.theta_a)


def test_exact_equals_approx_for_equal_frequencies():
    for t1, t2 in ((15, -15), (10, 30), (-40, 5)):
        e, a = im_angles_exact(R(t1), R(t2), FC, FC), im_angles_approx(R(t1), R(t2))
        assert e.variant == "exact" and a.variant == "approx"
        assert (e.valid_a, e.valid_b) == (a.valid_a, a.valid_b)
        np.testing.assert_allclose([e.theta_a, e.theta_b], [a.theta_a, a.theta_b], atol=1e-6)


def test_zero_denominator():
    with pytest.raises(AnalysisError):
        im_angles_exact(0.1, 0.2, 1e9, 2e9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-60, 60), st.floats(-60, 60), st.floats(-20e6, 20e6), st.floats(-20e6, 20e6))
def test_sign_flip_antisymmetry(t1, t2, d1, d2):
    p = im_angles_exact(R(t1), R(t2), FC + d1, FC + d2)
    q = im_angles_exact(R(-t1), R(-t2), FC + d1, FC + d2)
    assert p.valid_a == q.valid_a and p.valid_b == q.valid_b
    if p.valid_a:
        assert q.theta_a == pytest.approx(-p.theta_a, abs=1e-12)
    if p.valid_b:
        assert q.theta_b == pytest.approx(-p.theta_b, abs=1e-12)


GRID = GridSpec()
BS = (0.0, 222.0, 29.0)


def _report(values: np.ndarray) -> metrics.KpiReport:
    """Observer-only report whose OOB power is ``values`` in heatmap order."""
    nx = values.shape[1]
    centers = GRID.cell_centers().reshape(-1, 3)
    pts = [metrics.PointKpi(i, "observer", tuple(centers[i]), 0.0, float(v), -30.0, divmod(i, nx))
           for i, v in enumerate(values.ravel())]
    return metrics.KpiReport(pts, None, [], 40e6)


def test_uniform_and_hot_spot_maps():
    hm = assemble_heatmap(_report(np.full((25, 25), -80.0)), "oob_power", GRID, BS)
    assert hm.values.shape == (25, 25) and np.all(hm.values == -80.0)
    vals = np.full((25, 25), -80.0)
    vals[7, 19] = -20.0
    hm = assemble_heatmap(_report(vals), "oob_power", GRID, BS)
    assert np.unravel_index(np.argmax(hm.values), hm.values.shape) == (7, 19)


def test_cell_coordinates_round_trip():
    vals = np.arange(625, dtype=float).reshape(25, 25)
    report = _report(vals)
    hm = assemble_heatmap(report, "oob_power", GRID, BS)
    xx, yy = hm.cell_xy()
    for p in report.points:
        i, j = hm.cell_of(p.position[0], p.position[1])
        assert (i, j) == p.grid_cell
        assert (xx[i, j], yy[i, j]) == pytest.approx(p.position[:2])
    assert yy[0, 0] > yy[-1, 0]                       # row 0 = max y
    np.testing.assert_array_equal(hm.values.ravel(), [p.oob_power_db for p in report.points])


def test_missing_points_rejected():
    report = _report(np.zeros((25, 25)))
    report.points.pop(10)
    with pytest.raises(AnalysisError, match="no KPI"):
        assemble_heatmap(report, "oob_power", GRID, BS)
    with pytest.raises(AnalysisError, match="quantity"):
        assemble_heatmap(_report(np.zeros((25, 25))), "snr", GRID, BS)


def _array_factor_map(theta0_deg=0.0, m=32):
    centers = GRID.cell_centers()
    az = np.arctan2(centers[..., 1] - BS[1], centers[..., 0] - BS[0])
    psi = np.pi * (np.sin(az) - math.sin(R(theta0_deg)))
    with np.errstate(invalid="ignore", divide="ignore"):
        af = np.where(np.abs(np.sin(psi / 2)) < 1e-12, m, np.abs(np.sin(m * psi / 2) / np.sin(psi / 2)))
    return Heatmap(20 * np.log10(af), (GRID.dx / 2, GRID.area_height_m - GRID.dy / 2),
                   (GRID.dx, GRID.dy), "oob_power", BS)


def test_array_factor_map_has_single_peak_on_boresight():
    peaks = detect_beam_peaks(_array_factor_map(), BS, range_compensation=False)
    assert len(peaks) == 1
    assert abs(peaks[0].azimuth_deg) <= 1.0


def test_constant_map_has_no_peaks():
    hm = Heatmap(np.full((25, 25), -50.0), (8.8, 435.12), (17.6, 17.76), "oob_power", BS)
    assert detect_beam_peaks(hm, BS, range_compensation=False) == []


def test_peaks_invariant_to_db_offset():
    hm = _array_factor_map(20.0)
    shifted = Heatmap(hm.values + 37.5, hm.origin, hm.spacing, hm.quantity, BS)
    a = detect_beam_peaks(hm, BS)
    b = detect_beam_peaks(shifted, BS)
    assert [p.azimuth_deg for p in a] == [p.azimuth_deg for p in b]
    np.testing.assert_allclose([p.power_db + 37.5 for p in a], [p.power_db for p in b])


def test_spatial_spread_examples():
    assert spatial_spread(np.full((5, 5), 3.0)) == analyze.SpatialSpread(0.0, 0.0)
    two = np.array([0.0] * 50 + [20.0] * 50)
    s = spatial_spread(two)
    assert s.std_db == pytest.approx(10.0) and s.p95_minus_p5_db == pytest.approx(20.0)


def test_heatmap_csv_and_pgm(tmp_path):
    hm = _array_factor_map(10.0)
    analyze.write_heatmap_csv(hm, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("origin_x_m,origin_y_m,")
    assert lines[1].startswith("dx_m,dy_m,")
    assert lines[2] == "quantity,oob_power_db"
    back = analyze.read_heatmap_csv(tmp_path / "h.csv")
    np.testing.assert_allclose(back.values, hm.values, rtol=1e-9)
    assert back.origin == pytest.approx(hm.origin) and back.spacing == pytest.approx(hm.spacing)

    analyze.write_heatmap_pgm(hm, tmp_path / "h.pgm", vmin=0.0, vmax=40.0)
    raw = (tmp_path / "h.pgm").read_bytes()
    assert raw.startswith(b"P5\n")
    body = raw[-625:]
    expected = np.round(np.clip(hm.values / 40.0, 0, 1) * 255).astype(np.uint8)
    assert body == expected.tobytes()
