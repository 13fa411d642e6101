import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oobmimo.channel import steering_vector
from oobmimo.precode import (PrecodingError, apply_precoding, default_regularization, mr_weights,
                             precoding_matrix, zf_weights)
from oobmimo.scenario import ArraySpec


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


ISO = ArraySpec(num_antennas=32, element_pattern="isotropic")


def test_scalar_mr_is_conjugate_phase():
    phi = 0.7
    w = mr_weights(np.array([[np.exp(1j * phi)]]))
    assert w[0, 0] == pytest.approx(np.exp(-1j * phi))


def test_mr_array_gain_on_steering_vector():
    a = steering_vector(np.radians(20), 3.5e9, ISO)
    w = mr_weights(a[:, None])
    assert abs(a @ w[:, 0]) == pytest.approx(np.sqrt(32), rel=1e-12)


def test_orthogonal_columns_have_no_leakage():
    m = 16
    h = np.fft.fft(np.eye(m))[:, [1, 5]]
    eff = h.T @ mr_weights(h)
    assert abs(eff[0, 1]) < 1e-12 and abs(eff[1, 0]) < 1e-12
    wz = zf_weights(h)
    np.testing.assert_allclose(wz, mr_weights(h), atol=1e-12)


def test_zf_diagonalizes_random_channels(rng):
    worst = 0.0
    for _ in range(100):
        h = _crandn(rng, 16, 4)
        eff = h.T @ zf_weights(h)
        off = eff - np.diag(np.diag(eff))
        worst = max(worst, np.abs(off).max() / np.abs(np.diag(eff)).min())
    assert worst < 1e-10


def test_large_regularization_tends_to_mr_direction(rng):
    h = _crandn(rng, 8, 3)
    big = 1e6 * np.linalg.norm(h) ** 2
    wz, wm = zf_weights(h, big), mr_weights(h)
    for k in range(3):
        cos = abs(np.vdot(wz[:, k], wm[:, k])) / (np.linalg.norm(wz[:, k]) * np.linalg.norm(wm[:, k]))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_singular_channel_reported_per_bin(rng):
    h = _crandn(rng, 8, 2, 5)
    h[:, 1, 3] = 2 * h[:, 0, 3]
    with pytest.raises(PrecodingError, match=r"bins \[3\]"):
        precoding_matrix(h, "ZF", 0.0)
    precoding_matrix(h, "RZF")          # regularization rescues the bin


def test_zf_needs_k_le_m(rng):
    with pytest.raises(PrecodingError, match="K <= M"):
        zf_weights(_crandn(rng, 2, 3))


def test_all_zero_user_column(rng):
    h = _crandn(rng, 4, 2)
    h[:, 1] = 0
    with pytest.raises(PrecodingError, match="users \\[1\\]"):
        mr_weights(h)


@pytest.mark.parametrize("kind", ["MR", "ZF", "RZF"])
def test_total_power_normalization(kind, rng):
    h = _crandn(rng, 16, 3, 40)
    w = precoding_matrix(h, kind).weights
    assert np.mean(np.sum(np.abs(w) ** 2, axis=(0, 1))) == pytest.approx(1.0, abs=1e-10)


def test_radiated_power_same_for_all_precoders(rng):
    h = _crandn(rng, 16, 3, 64)
    s = _crandn(rng, 3, 64)
    powers = []
    for kind in ("MR", "ZF", "RZF"):
        w = precoding_matrix(h, kind).weights
        # expected power for unit-power independent streams
        powers.append(np.sum(np.abs(w) ** 2) / w.shape[-1])
        assert np.sum(np.abs(apply_precoding(s, w)) ** 2) > 0
    np.testing.assert_allclose(powers, 1.0, atol=1e-10)


def test_default_regularization_scales_with_k_over_snr(rng):
    h = _crandn(rng, 8, 2, 10)
    lam = default_regularization(h, 10.0)
    assert lam == pytest.approx(2 / 10 * np.mean(np.abs(h) ** 2))


def test_mr_beam_pattern_peaks_at_user():
    theta_user = 23.0
    a = steering_vector(np.radians(theta_user), 3.5e9, ISO)
    w = mr_weights(a[:, None])[:, 0]
    grid = np.arange(-89.5, 90, 0.5)
    pattern = [abs(steering_vector(np.radians(t), 3.5e9, ISO) @ w) for t in grid]
    assert abs(grid[int(np.argmax(pattern))] - theta_user) <= 0.5


def test_apply_precoding_examples(rng):
    m = 8
    w = np.ones((m, 1, 5)) / np.sqrt(m)
    s = _crandn(rng, 1, 5)
    np.testing.assert_allclose(apply_precoding(s, w), np.repeat(s / np.sqrt(m), m, axis=0))
    assert not np.any(apply_precoding(np.zeros((1, 5)), w))
    with pytest.raises(PrecodingError, match="dimension"):
        apply_precoding(_crandn(rng, 2, 5), w)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(4, 12), st.integers(0, 2 ** 32 - 1))
def test_submultiplicative_energy(k, m, seed):
    r = np.random.default_rng(seed)
    w = _crandn(r, m, k, 6)
    s = _crandn(r, k, 6)
    x = apply_precoding(s, w)
    assert np.sum(np.abs(x) ** 2) <= np.sum(np.abs(w) ** 2) * np.sum(np.abs(s) ** 2) * (1 + 1e-12)
