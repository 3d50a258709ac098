"""Sliding-window joint decoding: fixed priors, gradient EM and the EKF variant.

All modes share one driver.  Each window takes the residual syndrome on its
rows, produces BP marginals plus priors (the mode-specific part), runs OSD,
commits the leading ``ts`` cycles of mechanisms and log-density, folds the
committed correction back into the syndrome, and warm-starts the cycles that
enter the next window with the mean recursion ``Z <- log(A e^Z)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..bp_osd import BpResult, bp_decode, osd_postprocess, predict_observable
from ..dem_builder import Dem
from ..noise_model import NOMINAL, PhysicalConstants
from .ekf import EkfState, ekf_predict, ekf_update, pseudo_measurement
from .model import Z_MAX, Z_MIN, DemWindow, SensingParams, loss_and_grads, transition
from .optim import Adam, lr_schedule


@dataclass
class TraceRow:
    window: int
    iter: int
    L_qp: float
    L_err: float
    mse: float | None = None


@dataclass
class SensingResult:
    X: np.ndarray  # committed density estimate, J x T
    E: np.ndarray  # committed mechanisms
    observables: np.ndarray
    trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def Z(self) -> np.ndarray:
        return np.log(self.X)


class WindowPlan:
    """Caches window sub-DEMs so repeated shots reuse them."""

    def __init__(self, dem: Dem):
        self.dem = dem
        self._cache = {}

    def get(self, t_l: int, t_h: int, ts: int) -> DemWindow:
        key = (t_l, t_h, ts)
        if key not in self._cache:
            self._cache[key] = DemWindow(self.dem, t_l, t_h, ts)
        return self._cache[key]


def window_count(T: int, tw: int, ts: int) -> int:
    return max(1, math.ceil(max(T - tw, 0) / ts) + 1)


class _FixedPriors:
    """Priors from a fixed log-density field (genie or uniform)."""

    propagates = False

    def __init__(self, params, consts):
        self.params, self.consts = params, consts

    def process(self, w, win, Zext, syn, truth_log):
        priors = win.priors(Zext, self.consts, self.params.prior_mode)
        bp = bp_decode(win.graph, priors, syn, self.params.bp_iters)
        return bp, priors, Zext, []

    def commit(self, win, Zext):
        pass


class _GradientEM:
    """K outer BP passes, each followed by M Adam steps on the window's Z."""

    propagates = True

    def __init__(self, params, consts, L):
        self.params, self.consts, self.L = params, consts, L
        self.kappa = params.kappa
        self._A = transition(L, params.kappa, params.s)

    def process(self, w, win, Zext, syn, truth_log):
        p = self.params
        Zext = Zext.copy()
        total = p.K * p.M
        opt = Adam(Zext[:, 1:].shape)
        A = None if p.update_kappa else self._A
        step = 0
        trace = []
        bp = priors = None
        for k in range(1, p.K + 1):
            priors = win.priors(Zext, self.consts, p.prior_mode)
            bp = bp_decode(win.graph, priors, syn, p.bp_iters)
            q = bp.marginals
            for _ in range(p.M):
                terms = loss_and_grads(Zext, self.kappa, win, q, self.L, p, self.consts, A)
                if not math.isfinite(terms.total):
                    raise FloatingPointError(f"non-finite objective in window {w}")
                lr = lr_schedule(step, total, p.lr_init, p.alpha, p.lr_floor, p.warmup_frac)
                Zext[:, 1:] = np.clip(opt.step(Zext[:, 1:], terms.grad, lr), Z_MIN, Z_MAX)
                if p.update_kappa:
                    self.kappa = float(np.clip(self.kappa + p.beta_lr * terms.grad_kappa, 1e-6, 1 - 1e-6))
                step += 1
            terms = loss_and_grads(Zext, self.kappa, win, q, self.L, p, self.consts, A)
            mse = None
            if truth_log is not None:
                mse = float(np.mean((Zext[:, 1:] - truth_log[:, win.t_l - 1 : win.t_h]) ** 2))
            trace.append(TraceRow(w, k, terms.L_qp, terms.L_err, mse))
        if bp is None:  # K = 0: plain decode at the initial field
            priors = win.priors(Zext, self.consts, p.prior_mode)
            bp = bp_decode(win.graph, priors, syn, p.bp_iters)
        return bp, priors, Zext, trace

    def commit(self, win, Zext):
        pass


class _Ekf:
    """One BP pass, pseudo-measurements, then per-cycle EKF predict/update."""

    propagates = True

    def __init__(self, params, consts, L, J):
        self.params, self.consts = params, consts
        self.A = transition(L, params.kappa, params.s)
        self.Ad = self.A.toarray()
        self.committed = EkfState(np.full(J, params.z_init), params.ekf_p0 * np.eye(J))
        self._states = []
        self.max_asym = 0.0
        self.min_eig = np.inf

    def process(self, w, win, Zext, syn, truth_log):
        p = self.params
        priors = win.priors(Zext, self.consts, p.prior_mode)
        bp = bp_decode(win.graph, priors, syn, p.bp_iters)
        meas = pseudo_measurement(win, bp.marginals, Zext, self.consts, p.prior_mode, p.y_floor)
        state = self.committed
        Zext = Zext.copy()
        self._states = []
        for c in range(win.tw):
            z_pred, P_pred, _ = ekf_predict(state, self.Ad, p.sigma_q2)
            state, _ = ekf_update(z_pred, P_pred, meas.Y[:, c], p.sigma_r2)
            state = EkfState(np.clip(state.mean, Z_MIN, Z_MAX), state.cov)
            self._states.append(state)
            Zext[:, c + 1] = state.mean
            self.max_asym = max(self.max_asym, float(np.max(np.abs(state.cov - state.cov.T))))
            self.min_eig = min(self.min_eig, float(np.linalg.eigvalsh(state.cov).min()))
        trace = []
        if truth_log is not None:
            mse = float(np.mean((Zext[:, 1:] - truth_log[:, win.t_l - 1 : win.t_h]) ** 2))
            trace.append(TraceRow(w, 1, float("nan"), float("nan"), mse))
        return bp, priors, Zext, trace

    def commit(self, win, Zext):
        self.committed = self._states[win.n_commit_cycles - 1]


def run_windows(
    dem: Dem,
    syndrome: np.ndarray,
    strategy,
    tw: int,
    ts: int,
    params: SensingParams,
    L: sp.spmatrix,
    J: int,
    Z0: np.ndarray | None = None,
    plan: WindowPlan | None = None,
    truth_log: np.ndarray | None = None,
) -> SensingResult:
    T = dem.T
    tw = min(tw, T)
    ts = min(ts, tw)
    plan = plan or WindowPlan(dem)
    A = transition(L, params.kappa, params.s)
    Z = np.full((J, T), params.z_init) if Z0 is None else np.array(Z0, dtype=float)
    z_before = np.full(J, params.z_init)
    D = np.asarray(syndrome, dtype=np.uint8).copy()
    E = np.zeros(dem.n_mech, dtype=np.uint8)
    H = dem.H
    trace = []
    t_l, w = 1, 0
    n_osd_changed = 0
    while True:
        t_h = min(t_l + tw - 1, T)
        win = plan.get(t_l, t_h, ts)
        prev = z_before if t_l == 1 else Z[:, t_l - 2]
        Zext = np.column_stack([prev, Z[:, t_l - 1 : t_h]])
        syn = D[win.rows]
        bp, priors, Zext, rows = strategy.process(w, win, Zext, syn, truth_log)
        trace.extend(rows)
        res = osd_postprocess(win.H, bp, syn, priors, params.osd_order, params.osd_mode)
        n_osd_changed += int(np.any(res.hard_decisions != bp.hard_decision))
        ec = res.hard_decisions[win.commit_local]
        E[win.commit_cols] = ec
        if ec.any():
            D ^= ((H[:, win.commit_cols] @ ec.astype(np.int64)) % 2).astype(np.uint8)
        Z[:, t_l - 1 : t_h] = Zext[:, 1:]
        strategy.commit(win, Zext)
        if t_h >= T:
            break
        for c in range(t_h + 1, min(t_h + ts, T) + 1) if strategy.propagates else ():
            Z[:, c - 1] = np.clip(np.log(A @ np.exp(Z[:, c - 2])), Z_MIN, Z_MAX)
        t_l += ts
        w += 1
    if np.any(D):
        raise AssertionError("committed errors violate the global parity check")
    obs = predict_observable(dem.O, E)
    diag = {"windows": w + 1, "osd_changed": n_osd_changed}
    return SensingResult(np.exp(Z), E, obs, trace, diag)


def algorithm1(
    dem: Dem,
    syndrome,
    params: SensingParams,
    L: sp.spmatrix,
    mode: str = "offline",
    truth=None,
    plan: WindowPlan | None = None,
    consts: PhysicalConstants = NOMINAL,
) -> SensingResult:
    """Gradient EM decoding.  ``mode='offline'`` uses a single full window."""
    if mode not in ("offline", "window"):
        raise ValueError("mode must be 'offline' or 'window'")
    tw, ts = (dem.T, dem.T) if mode == "offline" else (params.tw, params.ts)
    J = L.shape[0]
    truth_log = None if truth is None else np.log(_values(truth))
    return run_windows(dem, syndrome, _GradientEM(params, consts, L), tw, ts, params, L, J, plan=plan, truth_log=truth_log)


def algorithm2(
    dem: Dem,
    syndrome,
    params: SensingParams,
    L: sp.spmatrix,
    truth=None,
    plan: WindowPlan | None = None,
    consts: PhysicalConstants = NOMINAL,
) -> SensingResult:
    """EKF decoding; ``params.tw`` of 2 or 3 with ``params.ts`` = 1 is typical."""
    J = L.shape[0]
    truth_log = None if truth is None else np.log(_values(truth))
    strat = _Ekf(params, consts, L, J)
    res = run_windows(dem, syndrome, strat, params.tw, params.ts, params, L, J, plan=plan, truth_log=truth_log)
    res.diagnostics["max_cov_asymmetry"] = strat.max_asym
    res.diagnostics["min_cov_eig"] = strat.min_eig
    return res


def fixed_prior_decode(
    dem: Dem,
    syndrome,
    Z_field: np.ndarray,
    params: SensingParams,
    tw: int,
    ts: int,
    L: sp.spmatrix,
    plan: WindowPlan | None = None,
    consts: PhysicalConstants = NOMINAL,
) -> SensingResult:
    """Windowed BP+OSD with priors from a known log-density (genie/uniform)."""
    J = Z_field.shape[0]
    return run_windows(dem, syndrome, _FixedPriors(params, consts), tw, ts, params, L, J, Z0=Z_field, plan=plan)


def _values(traj):
    return traj.values if hasattr(traj, "values") else np.asarray(traj)


def write_trace(path, rows) -> None:
    """CSV ``window,iter,L_qp,L_err[,mse_vs_truth]``."""
    with_mse = any(r.mse is not None for r in rows)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        head = ["window", "iter", "L_qp", "L_err"] + (["mse_vs_truth"] if with_mse else [])
        wr.writerow(head)
        for r in rows:
            row = [r.window, r.iter, repr(r.L_qp), repr(r.L_err)]
            if with_mse:
                row.append("" if r.mse is None else repr(r.mse))
            wr.writerow(row)
