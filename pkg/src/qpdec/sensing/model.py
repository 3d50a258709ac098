"""Sensing parameters, DEM windows and the log-likelihood terms with gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse as sp

from ..bp_osd import TannerGraph
from ..chip_qp import BASELINE_DENSITY, X_FLOOR
from ..dem_builder import Dem
from ..noise_model import EPS_P, NOMINAL, X_CAP, PhysicalConstants, pauli_px_pz_many

Z_MIN = math.log(X_FLOOR)
Z_MAX = math.log(X_CAP)


@dataclass(frozen=True)
class SensingParams:
    kappa: float = 0.5
    s: float = 0.05
    sigma_q2: float = 2.2889
    sigma_r2: float = 1.0
    beta_a: float = 2.0
    beta_b: float = 2.0
    alpha: float = 0.5  # peak Adam step size
    lr_init: float = 0.01
    lr_floor: float = 0.01
    warmup_frac: float = 0.1
    beta_lr: float = 0.01  # kappa step size
    update_kappa: bool = False
    K: int = 5
    M: int = 10
    tw: int = 20
    ts: int = 10
    bp_iters: int = 20
    osd_order: int = 10
    osd_mode: str = "combination_sweep"
    prior_mode: str = "sum"
    z_init: float = math.log(BASELINE_DENSITY)
    ekf_p0: float = 0.0
    y_floor: float = BASELINE_DENSITY  # pseudo-measurement floor

    def __post_init__(self):
        if not (self.sigma_q2 > 0 and self.sigma_r2 > 0):
            raise ValueError("sigma_q2 and sigma_r2 must be positive")
        if not 1 <= self.ts <= self.tw:
            raise ValueError("need 1 <= ts <= tw")
        if self.K < 0 or self.M < 0:
            raise ValueError("K and M must be non-negative")

    def with_(self, **kw) -> "SensingParams":
        return replace(self, **kw)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


def transition(L: sp.spmatrix, kappa: float, s: float) -> sp.csr_matrix:
    """A(kappa) = I - (s I + kappa L), per-cycle units."""
    J = L.shape[0]
    return sp.csr_matrix(sp.identity(J) * (1.0 - s) - kappa * L)


class DemWindow:
    """Rows, columns and faults of the DEM restricted to cycles ``t_l..t_h``.

    Fault cycles are stored relative to ``t_l - 1``: index 0 is the frozen
    cycle preceding the window (faults there can belong to window mechanisms).
    """

    def __init__(self, dem: Dem, t_l: int, t_h: int, ts: int):
        self.t_l, self.t_h = t_l, t_h
        self.tw = t_h - t_l + 1
        self.rows = np.flatnonzero((dem.row_cycle >= t_l) & (dem.row_cycle <= t_h))
        self.cols = np.flatnonzero((dem.mech_cycle >= t_l) & (dem.mech_cycle <= t_h))
        self.H = sp.csc_matrix(dem.H[self.rows][:, self.cols])
        self.graph = TannerGraph(self.H)
        local = np.full(dem.n_mech, -1, dtype=np.int64)
        local[self.cols] = np.arange(len(self.cols))
        fm = local[dem.f_mech]
        keep = fm >= 0
        self.f_mech = fm[keep]
        self.f_site = dem.f_site[keep]
        self.f_rel = dem.f_t[keep] - (t_l - 1)
        self.f_dt = dem.f_dt[keep]
        self.f_is_z = dem.f_pauli[keep] == 3
        self.n_mech = len(self.cols)
        self._dt_groups = [(d, np.flatnonzero(self.f_dt == d)) for d in np.unique(self.f_dt)]
        self._dts = tuple(float(d) for d, _ in self._dt_groups)
        final = t_h >= dem.T
        limit = t_h if final else t_l + ts - 1
        self.commit_local = np.flatnonzero(dem.mech_cycle[self.cols] <= limit)
        self.commit_cols = self.cols[self.commit_local]
        self.n_commit_cycles = self.tw if final else ts
        # fault x (site, rel) -> flat index into the J x (tw+1) window array
        self.J = int(dem.f_site.max()) + 1
        self.f_flat = self.f_site * (self.tw + 1) + self.f_rel

    def fault_probs(self, X: np.ndarray, consts: PhysicalConstants = NOMINAL, derivatives: bool = False):
        # evaluate on the (site, cycle) grid once, then gather per fault
        x = X.ravel()
        p = np.empty(len(self.f_flat))
        dp = np.empty(len(self.f_flat)) if derivatives else None
        tables = pauli_px_pz_many(x, self._dts, consts, derivatives)
        for res, (_, idx) in zip(tables, self._dt_groups):
            at = self.f_flat[idx]
            z = self.f_is_z[idx]
            p[idx] = np.where(z, res[1][at], res[0][at])
            if derivatives:
                dp[idx] = np.where(z, res[3][at], res[2][at])
        return (p, dp) if derivatives else p

    def mech_probs(self, pf: np.ndarray, prior_mode: str = "sum"):
        """Raw and clamped mechanism probabilities from per-fault values."""
        if prior_mode == "sum":
            raw = np.bincount(self.f_mech, weights=pf, minlength=self.n_mech)
        else:
            logs = np.bincount(self.f_mech, weights=np.log1p(-2.0 * np.minimum(pf, 0.5 - EPS_P)), minlength=self.n_mech)
            raw = -0.5 * np.expm1(logs)
        return raw, np.clip(raw, EPS_P, 0.5 - EPS_P)

    def priors(self, Zext: np.ndarray, consts: PhysicalConstants = NOMINAL, prior_mode: str = "sum") -> np.ndarray:
        return self.mech_probs(self.fault_probs(np.exp(Zext), consts), prior_mode)[1]


@dataclass
class LossTerms:
    L_qp: float
    L_err: float
    L_diff: float
    grad_qp: np.ndarray  # J x tw
    grad_err: np.ndarray  # J x tw
    grad_kappa: float  # d(L_qp + L_diff)/d kappa
    clamped: int = 0

    @property
    def total(self) -> float:
        return self.L_qp + self.L_err + self.L_diff

    @property
    def grad(self) -> np.ndarray:
        return self.grad_qp + self.grad_err


def qp_terms(Zext: np.ndarray, A: sp.spmatrix, L: sp.spmatrix, sigma_q2: float):
    """L_qp, its Z-gradient over columns 1.., and dL_qp/d kappa."""
    EX = np.exp(Zext)
    AX = A @ EX[:, :-1]  # predictions for columns 1..tw
    eps = Zext[:, 1:] - np.log(AX)
    L_qp = -0.5 * float(np.sum(eps * eps)) / sigma_q2
    g = -eps / sigma_q2
    # back-propagated part through the next residual
    back = EX[:, 1:-1] * (A.T @ ((eps[:, 1:] / sigma_q2) / AX[:, 1:]))
    g[:, :-1] += back
    gk = -float(np.sum(eps * (L @ EX[:, :-1]) / AX)) / sigma_q2
    return L_qp, g, gk


def err_terms(Zext: np.ndarray, window: DemWindow, q: np.ndarray, consts: PhysicalConstants, prior_mode: str):
    X = np.exp(Zext)
    pf, dpf = window.fault_probs(X, consts, derivatives=True)
    raw, p = window.mech_probs(pf, prior_mode)
    L_err = float(np.sum(q * np.log(p) + (1.0 - q) * np.log1p(-p)))
    active = (raw > EPS_P) & (raw < 0.5 - EPS_P)
    w = np.where(active, q / p - (1.0 - q) / (1.0 - p), 0.0)
    if prior_mode == "sum":
        dm = dpf
    else:
        dm = dpf * (1.0 - 2.0 * p[window.f_mech]) / (1.0 - 2.0 * np.minimum(pf, 0.5 - EPS_P))
    contrib = w[window.f_mech] * dm * X.ravel()[window.f_flat]
    g = np.bincount(window.f_flat, weights=contrib, minlength=X.size).reshape(X.shape)
    return L_err, g[:, 1:], int(np.sum(~active))


def loss_and_grads(
    Zext: np.ndarray,
    kappa: float,
    window: DemWindow,
    q: np.ndarray,
    L: sp.spmatrix,
    params: SensingParams,
    consts: PhysicalConstants = NOMINAL,
    A: sp.spmatrix | None = None,
) -> LossTerms:
    """Objective terms on one window.

    ``Zext`` is J x (tw + 1); column 0 is the frozen cycle before the window
    and receives no gradient.  ``A`` may be passed to skip rebuilding the
    transition matrix when ``kappa`` is fixed.
    """
    if not np.all(np.isfinite(Zext)):
        raise FloatingPointError("non-finite log-density in window")
    if A is None:
        A = transition(L, kappa, params.s)
    L_qp, g_qp, gk = qp_terms(Zext, A, L, params.sigma_q2)
    L_err, g_err, n_clamped = err_terms(Zext, window, q, consts, params.prior_mode)
    a, b = params.beta_a, params.beta_b
    k = min(max(kappa, 1e-12), 1 - 1e-12)
    L_diff = (a - 1.0) * math.log(k) + (b - 1.0) * math.log1p(-k)
    gk += (a - 1.0) / k - (b - 1.0) / (1.0 - k)
    return LossTerms(L_qp, L_err, L_diff, g_qp, g_err, gk, n_clamped)


@dataclass
class SensingState:
    Z: np.ndarray  # J x T current log-density estimate
    q: np.ndarray | None = None
    ekf_mean: np.ndarray | None = None
    ekf_cov: np.ndarray | None = None
    kappa: float = 0.5
    diagnostics: dict = field(default_factory=dict)
