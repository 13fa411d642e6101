import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oobmimo import metrics
from oobmimo.metrics import MetricError, PsdEstimate, aclr, ecdf, evm, oob_power, welch_psd
from oobmimo.pa import amplify, two_tone_amplitudes
from oobmimo.scenario import PA_ALPHA, PaSpec

FS, B = 160e6, 40e6


def _flat(level, lo, hi, n=4001):
    f = np.linspace(-FS / 2, FS / 2, n)
    return PsdEstimate(f, np.where((f >= lo) & (f <= hi), level, 0.0))


def test_white_noise_is_flat_and_integrates_to_power(rng):
    x = (rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000)) / np.sqrt(2)
    psd = welch_psd(x, FS)
    total = np.sum(psd.density) * (psd.frequencies[1] - psd.frequencies[0])
    assert total == pytest.approx(1.0, rel=0.05)
    assert np.std(psd.density_db) < 0.5
    assert psd.segment_length == 1024 and psd.overlap == 512 and psd.window == "hann"


def test_tone_peaks_at_its_frequency():
    f0 = 23.4e6
    t = np.arange(20_000) / FS
    psd = welch_psd(np.exp(2j * np.pi * f0 * t), FS)
    df = psd.frequencies[1] - psd.frequencies[0]
    assert abs(psd.frequencies[np.argmax(psd.density)] - f0) <= df


def test_zero_signal_reported_at_floor():
    psd = welch_psd(np.zeros(4096, dtype=complex), FS)
    assert np.all(psd.density_db == metrics.DB_FLOOR)


def test_short_signal_rejected():
    with pytest.raises(MetricError, match="shorter"):
        welch_psd(np.ones(100), FS)


def test_global_phase_rotation_invariance(rng):
    x = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
    np.testing.assert_allclose(welch_psd(x * np.exp(0.7j), FS).density, welch_psd(x, FS).density,
                               rtol=1e-12)


def test_flat_psd_gives_zero_aclr():
    assert aclr(_flat(1e-3, -2 * B, 2 * B), B) == pytest.approx(0.0, abs=1e-9)


def test_psd_confined_in_band_gives_floor():
    # nonzero strictly inside the band; the shared edge bins are zero
    df = FS / 4000
    assert aclr(_flat(1.0, -B / 2 + df / 2, B / 2 - df / 2), B) == metrics.DB_FLOOR


def test_asymmetric_adjacent_bands_pick_larger_side():
    f = np.linspace(-FS / 2, FS / 2, 4001)    # 40 kHz bins, band edges fall on bins
    d = np.where(np.abs(f) <= B / 2, 1.0, 0.0)
    d = d + np.where((f >= -3 * B / 2) & (f < -B / 2), 0.02, 0.0) + np.where((f > B / 2) & (f <= 3 * B / 2), 0.01, 0.0)
    psd = PsdEstimate(f, d)

    def integral(lo, hi):
        sel = (f >= lo - 1) & (f <= hi + 1)
        y, x = d[sel], f[sel]
        return float(np.sum((y[1:] + y[:-1]) / 2 * np.diff(x)))

    expected = 10 * np.log10(integral(-3 * B / 2, -B / 2) / integral(-B / 2, B / 2))
    assert aclr(psd, B) == pytest.approx(expected, abs=1e-12)
    assert integral(-3 * B / 2, -B / 2) > integral(B / 2, 3 * B / 2)


def test_coverage_required():
    narrow = PsdEstimate(np.linspace(-B, B, 101), np.ones(101))
    with pytest.raises(MetricError, match="covers"):
        aclr(narrow, B)


def test_oob_power_of_flat_psd():
    psd = _flat(2.5e-9, -3 * B / 2, 3 * B / 2)
    assert oob_power(psd, B) == pytest.approx(10 * np.log10(2 * B * 2.5e-9), abs=1e-9)


def test_doubling_amplitude_adds_six_db(rng):
    x = rng.standard_normal(40_000) + 1j * rng.standard_normal(40_000)
    y = amplify(x, PaSpec())[0]
    delta = oob_power(welch_psd(2 * y, FS), B) - oob_power(welch_psd(y, FS), B)
    assert delta == pytest.approx(20 * np.log10(2), abs=1e-9)


def test_two_tone_oob_power_matches_closed_form():
    n = 1 << 16
    t = np.arange(n) / FS
    x = np.exp(2j * np.pi * 12e6 * t) + np.exp(-2j * np.pi * 12e6 * t)
    y = amplify(x, PaSpec(back_off_db=7.0))[0]
    a = 10 ** (-7 / 20) / np.sqrt(2)          # each tone after RMS normalization and back-off
    _, im3 = two_tone_amplitudes(a, PA_ALPHA)
    analytic = 10 * np.log10(2 * im3 ** 2)    # products at -36 MHz and +36 MHz
    assert oob_power(welch_psd(y, FS), B) == pytest.approx(analytic, abs=0.2)


def test_evm_examples(rng):
    tx = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    assert evm(tx, tx) == 0.0
    assert evm(tx, tx * 1.1) == pytest.approx(0.01, rel=1e-12)
    unit = np.exp(2j * np.pi * rng.random(400))
    err = 0.05 * (rng.standard_normal(400) + 1j * rng.standard_normal(400))
    assert evm(unit, unit + err) == pytest.approx(np.sum(np.abs(err) ** 2) / 400, rel=1e-12)


def test_evm_errors():
    with pytest.raises(MetricError, match="empty"):
        evm([], [])
    with pytest.raises(MetricError, match="zero power"):
        evm(np.zeros(3), np.ones(3))
    with pytest.raises(MetricError, match="length"):
        evm(np.ones(3), np.ones(4))


@settings(max_examples=30, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 2 ** 32 - 1))
def test_evm_invariant_to_common_rotation(phi, seed):
    r = np.random.default_rng(seed)
    tx = r.standard_normal(64) + 1j * r.standard_normal(64)
    rx = tx + 0.1 * (r.standard_normal(64) + 1j * r.standard_normal(64))
    rot = np.exp(1j * phi)
    assert evm(tx * rot, rx * rot) == pytest.approx(evm(tx, rx), rel=1e-9)


def test_ecdf_examples(rng):
    v, f = ecdf([4.2])
    assert v.tolist() == [4.2] and f.tolist() == [1.0]
    v, f = ecdf([3, 1, 2])
    np.testing.assert_allclose(f, [1 / 3, 2 / 3, 1])
    values = np.round(rng.normal(-100, 10, 625), 1)
    v, f = ecdf(values)
    assert len(v) <= 625 and np.all(np.diff(v) > 0) and np.all(np.diff(f) > 0)
    assert f[-1] == 1.0 and f[0] > 0
    with pytest.raises(MetricError):
        ecdf([])


def _report(rng):
    x = rng.standard_normal((3, 8192)) + 1j * rng.standard_normal((3, 8192))
    psd = welch_psd(amplify(x, PaSpec()), FS)
    a, o, i = aclr(psd, B), oob_power(psd, B), metrics.ib_power(psd, B)
    pts = [metrics.PointKpi(p, "user" if p == 0 else "observer", (float(p), 2.0 * p, 1.5),
                            float(i[p]), float(o[p]), float(a[p]), None if p == 0 else (0, p - 1))
           for p in range(3)]
    users = [metrics.UserKpi(0, 0.01, np.ones(4))]
    return metrics.KpiReport(pts, psd, users, B)


def test_stored_aclr_recomputes_bit_for_bit(rng):
    report = _report(rng)
    for row, p in enumerate(report.points):
        assert report.recompute_aclr(row) == p.aclr_db


def test_csv_writers(rng, tmp_path):
    report = _report(rng)
    metrics.write_points_csv(report, tmp_path / "p.csv")
    metrics.write_users_csv(report, tmp_path / "u.csv")
    metrics.write_ecdf_csv(report, tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["point", "kind", "x", "y", "ib_power_db", "oob_power_db", "aclr_db"]
    assert len(rows) == 4
    assert float(rows[2][6]) == pytest.approx(report.points[1].aclr_db, abs=1e-8)
    urows = list(csv.reader(open(tmp_path / "u.csv")))
    assert urows == [["user", "evm", "evm_db"], ["0", "0.01", "-20"]]
    erows = list(csv.reader(open(tmp_path / "e.csv")))
    assert erows[0] == ["oob_power_db", "fraction"] and float(erows[-1][1]) == 1.0
