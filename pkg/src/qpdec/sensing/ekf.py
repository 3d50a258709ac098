"""Pseudo-measurements from BP marginals and the log-space extended Kalman filter."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..chip_qp import BASELINE_DENSITY
from ..noise_model import NOMINAL, PhysicalConstants, inv_px, inv_pz, pauli_px_pz, px_domain, pz_domain
from .model import DemWindow


@lru_cache(maxsize=64)
def _clip_bounds(dt: float, consts: PhysicalConstants, floor: float):
    lo_x, lo_z = pauli_px_pz(floor, dt, consts)
    return float(lo_x), float(lo_z), px_domain(dt, consts)[1], pz_domain(dt, consts)[1]


@dataclass
class PseudoMeasurement:
    Y: np.ndarray  # J x tw
    counts: np.ndarray  # n_{t,i}
    clipped: int


def pseudo_measurement(
    window: DemWindow,
    q: np.ndarray,
    Zext: np.ndarray,
    consts: PhysicalConstants = NOMINAL,
    prior_mode: str = "sum",
    floor: float = BASELINE_DENSITY,
) -> PseudoMeasurement:
    """Average inverse-mapped fault posteriors per (qubit, window cycle).

    Posteriors are clipped from below at the probability of a ``floor``
    density.  Near the baseline the noise map is flat, so a silent region
    would otherwise invert to an arbitrarily small density.
    """
    X = np.exp(Zext)
    pf = window.fault_probs(X, consts)
    _, pm = window.mech_probs(pf, prior_mode)
    p_hat = pf / pm[window.f_mech] * q[window.f_mech]
    in_win = window.f_rel >= 1
    x_hat = np.zeros(len(pf))
    clipped = 0
    for d, idx in window._dt_groups:
        idx = idx[in_win[idx]]
        if idx.size == 0:
            continue
        z = window.f_is_z[idx]
        lo_x, lo_z, hi_x, hi_z = _clip_bounds(float(d), consts, float(floor))
        lo = np.where(z, lo_z, lo_x)
        hi = np.where(z, hi_z, hi_x)
        ph = p_hat[idx]
        clipped += int(np.sum((ph < lo) | (ph > hi)))
        ph = np.clip(ph, lo, hi)
        out = np.empty(idx.size)
        if np.any(~z):
            out[~z] = inv_px(ph[~z], d, consts)
        if np.any(z):
            out[z] = inv_pz(ph[z], d, consts)
        x_hat[idx] = out
    J, width = X.shape
    flat = window.f_flat[in_win]
    sums = np.bincount(flat, weights=x_hat[in_win], minlength=X.size).reshape(J, width)[:, 1:]
    counts = np.bincount(flat, minlength=X.size).reshape(J, width)[:, 1:]
    Y = np.where(counts > 0, sums / np.maximum(counts, 1), X[:, 1:])
    return PseudoMeasurement(np.maximum(Y, floor), counts, clipped)


@dataclass
class EkfState:
    mean: np.ndarray  # Z_{t|t}
    cov: np.ndarray  # P_{t|t}


def ekf_predict(state: EkfState, A: sp.spmatrix, sigma_q2: float):
    ex = np.exp(state.mean)
    Ax = A @ ex
    z_pred = np.log(Ax)
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    F = Ad * ex[None, :] / Ax[:, None]
    P_pred = F @ state.cov @ F.T + sigma_q2 * np.eye(len(ex))
    return z_pred, P_pred, F


def ekf_update(z_pred: np.ndarray, P_pred: np.ndarray, y: np.ndarray, sigma_r2: float):
    J = len(z_pred)
    r = np.log(y) - z_pred
    S = P_pred + sigma_r2 * np.eye(J)
    # K = P S^-1 with both symmetric, so K^T = S^-1 P
    gain = np.linalg.solve(S, P_pred).T
    mean = z_pred + gain @ r
    cov = (np.eye(J) - gain) @ P_pred
    cov = 0.5 * (cov + cov.T)
    return EkfState(mean, cov), gain


def ekf_step(state: EkfState, y: np.ndarray, A: sp.spmatrix, sigma_q2: float, sigma_r2: float) -> EkfState:
    """One predict + update cycle."""
    z_pred, P_pred, _ = ekf_predict(state, A, sigma_q2)
    new, _ = ekf_update(z_pred, P_pred, y, sigma_r2)
    return new
