"""MR / ZF / RZF precoding per frequency bin.

Convention: the received sample at user k is ``y_k = sum_m H[m, k] x_m``
(``y = H^T x``), where ``H`` is ``[M, K]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PrecodingError(ValueError):
    pass


@dataclass(frozen=True)
class PrecodingMatrix:
    weights: np.ndarray          # [M, K, F_ib]
    kind: str
    regularization: float = 0.0


def _normalize(w: np.ndarray) -> np.ndarray:
    """Scale so the mean over bins of ``||W_f||_F^2`` is one."""
    power = np.mean(np.sum(np.abs(w) ** 2, axis=(0, 1)))
    return w / np.sqrt(power)


def _mr(h: np.ndarray) -> np.ndarray:
    """Column-normalized conjugate of ``h`` (``[..., M, K]``)."""
    norms = np.linalg.norm(h, axis=-2, keepdims=True)
    if np.any(norms == 0):
        users = sorted({int(i) for i in np.argwhere(norms == 0)[:, -1]})
        raise PrecodingError(f"all-zero channel column for users {users}")
    return np.conj(h) / norms


def _zf(h: np.ndarray, reg: float) -> np.ndarray:
    """``H* (H^T H* + reg I)^-1`` over a stack of bins; ``h`` is ``[F, M, K]``."""
    k = h.shape[-1]
    gram = np.swapaxes(h, -1, -2) @ np.conj(h)
    if reg:
        gram = gram + reg * np.eye(k)
    cond = np.linalg.cond(gram)
    singular = ~np.isfinite(cond) | (cond > 1e14)
    if np.any(singular):
        raise PrecodingError(f"singular normal matrix at bins {np.flatnonzero(singular)[:5].tolist()}")
    return np.conj(h) @ np.linalg.inv(gram)


def mr_weights(h: np.ndarray) -> np.ndarray:
    """Maximum-ratio weights for one bin, ``[M, K]``, with ``||W||_F = 1``."""
    h = np.asarray(h, dtype=complex)
    return _normalize(_mr(h)[..., None])[..., 0]


def zf_weights(h: np.ndarray, regularization: float = 0.0) -> np.ndarray:
    """(Regularized) zero-forcing weights for one bin, ``[M, K]``, with ``||W||_F = 1``."""
    h = np.asarray(h, dtype=complex)
    m, k = h.shape
    if k > m:
        raise PrecodingError(f"zero forcing needs K <= M (K={k}, M={m})")
    if regularization < 0:
        raise PrecodingError("regularization must be >= 0")
    return _normalize(_zf(h[None], regularization)[0][..., None])[..., 0]


def default_regularization(h: np.ndarray, nominal_snr_db: float = 10.0) -> float:
    """``K / rho`` scaled by the mean per-entry channel power of ``h`` (``[M, K, F]``)."""
    k = h.shape[1]
    return k / 10 ** (nominal_snr_db / 10) * np.mean(np.abs(h) ** 2)


def precoding_matrix(h_users: np.ndarray, kind: str = "MR",
                     regularization: float | None = None,
                     nominal_snr_db: float = 10.0) -> PrecodingMatrix:
    """Weights for every in-band bin of ``h_users`` (``[M, K, F_ib]``)."""
    h_users = np.asarray(h_users, dtype=complex)
    m, k, _ = h_users.shape
    hf = np.moveaxis(h_users, -1, 0)
    if kind == "MR":
        w = _mr(hf)
        reg = 0.0
    elif kind in ("ZF", "RZF"):
        if k > m:
            raise PrecodingError(f"zero forcing needs K <= M (K={k}, M={m})")
        if kind == "ZF":
            reg = 0.0 if regularization is None else regularization
        else:
            reg = (default_regularization(h_users, nominal_snr_db)
                   if regularization is None else regularization)
        w = _zf(hf, reg)
    else:
        raise PrecodingError(f"unknown precoder kind {kind!r}")
    return PrecodingMatrix(_normalize(np.moveaxis(w, 0, -1)), kind, reg)


def apply_precoding(user_spectra: np.ndarray, w: PrecodingMatrix | np.ndarray) -> np.ndarray:
    """``X[:, f] = W[:, :, f] @ s[:, f]``; returns ``[M, F_ib]``."""
    weights = w.weights if isinstance(w, PrecodingMatrix) else np.asarray(w)
    s = np.asarray(user_spectra)
    if weights.ndim != 3 or s.ndim != 2 or weights.shape[1:] != s.shape:
        raise PrecodingError(f"dimension mismatch: weights {weights.shape}, spectra {s.shape}")
    return np.einsum("mkf,kf->mf", weights, s)
