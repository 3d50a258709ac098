"""QP density -> Pauli-twirled error probabilities, and the per-channel inverses.

Rates used throughout (x is the dimensionless QP density):

* relaxation   ``G1(x) = c1 x + 1/T1b`` with ``c1 = 2 sqrt(2 (Delta/h) f01)``
* dephasing    ``Gphi(x) = (Ec/h) (x^2/pi) exp(W0(4 pi / x^2) / 2)``
* coherence    ``1/T2 = G1/2 + Gphi``

Because ``exp(W0(u)) = u / W0(u)``, the dephasing rate equals
``(Ec/h) * 2x / sqrt(pi W0)``, which is the form evaluated here; it is finite
for every x >= 0 and vanishes at x = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

H_PLANCK_EV_S = 4.135667696e-15
EPS_P = 1e-15
X_CAP = 1.0


@dataclass(frozen=True)
class PhysicalConstants:
    delta_al: float = 191e-6  # eV
    ec_over_h: float = 400e6  # Hz
    omega01_over_2pi: float = 5e9  # Hz
    t1_baseline: float = 100e-6  # s

    def __post_init__(self):
        for name in ("delta_al", "ec_over_h", "omega01_over_2pi", "t1_baseline"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def c1(self) -> float:
        """Relaxation rate per unit QP density (1/s)."""
        return 2.0 * math.sqrt(2.0 * (self.delta_al / H_PLANCK_EV_S) * self.omega01_over_2pi)

    @property
    def c_phi(self) -> float:
        return 2.0 * self.ec_over_h / math.sqrt(math.pi)

    @classmethod
    def from_config(cls, cfg: dict) -> "PhysicalConstants":
        keys = {
            "delta_al_ev": "delta_al",
            "ec_over_h_hz": "ec_over_h",
            "omega01_hz": "omega01_over_2pi",
            "t1_baseline_s": "t1_baseline",
        }
        kw = {field: float(cfg[key]) for key, field in keys.items() if key in cfg}
        return cls(**kw)


NOMINAL = PhysicalConstants()


@dataclass(frozen=True)
class PauliProbs:
    p_i: np.ndarray | float
    p_x: np.ndarray | float
    p_y: np.ndarray | float
    p_z: np.ndarray | float


@njit(cache=True)
def _w0_log(log_u, u):
    # scalar W0 given both ln(u) and u (u is only used when ln(u) <= 1)
    if log_u > 1.0:
        ll = math.log(log_u)
        w = log_u - ll + ll / log_u
        for _ in range(50):
            g = w + math.log(w) - log_u
            g1 = 1.0 + 1.0 / w
            g2 = -1.0 / (w * w)
            step = 2.0 * g * g1 / (2.0 * g1 * g1 - g * g2)
            w -= step
            if abs(step) <= 1e-15 * abs(w):
                break
        return w
    l1 = math.log1p(u)
    w = l1 * (1.0 - math.log1p(l1) / (2.0 + l1))
    for _ in range(50):
        ew = math.exp(w)
        f = w * ew - u
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 1e-15 * max(abs(w), 1e-300):
            break
    return w


def lambertw0(u, log_u=None):
    """Principal branch W0 for real u >= 0.

    Halley iteration; for u > e it solves ``w + ln w = ln u`` (seeded by the
    log-log asymptotic ``L - ln L + ln L / L``), which never forms ``e^w`` and
    therefore accepts arguments far beyond the float range via ``log_u``.
    """
    if log_u is None:
        u = np.asarray(u, dtype=float)
        if np.any(u < 0):
            raise ValueError("lambertw0 is implemented for u >= 0 only")
        with np.errstate(divide="ignore"):
            log_u = np.log(u)
    else:
        log_u = np.asarray(log_u, dtype=float)
        u = np.exp(np.minimum(log_u, 700.0))
    shape = np.shape(log_u)
    lu = np.ascontiguousarray(log_u, dtype=float).ravel()
    uu = np.ascontiguousarray(np.broadcast_to(u, shape), dtype=float).ravel()
    w = _w0_log_array(lu, uu).reshape(shape)
    return w if w.ndim else float(w)


@njit(cache=True)
def _w0_log_array(log_u, u):
    out = np.empty_like(log_u)
    for k in range(log_u.size):
        out[k] = _w0_log(log_u[k], u[k])
    return out


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("QP density must be non-negative")
    return x


def _dephasing(x, consts: PhysicalConstants):
    """Dephasing rate and its x-derivative; both are 0 at x = 0."""
    pos = x > 0
    xs = np.where(pos, x, 1.0)
    W = lambertw0(None, log_u=math.log(4.0 * math.pi) - 2.0 * np.log(xs))
    rw = 1.0 / np.sqrt(W)
    g = np.where(pos, consts.c_phi * xs * rw, 0.0)
    dg = np.where(pos, consts.c_phi * rw * (1.0 + 1.0 / (1.0 + W)), 0.0)
    return g, dg


def relaxation_rate(x, consts: PhysicalConstants = NOMINAL):
    return consts.c1 * x + 1.0 / consts.t1_baseline


def t1_of_x(x, consts: PhysicalConstants = NOMINAL):
    x = _check_x(x)
    r = 1.0 / relaxation_rate(x, consts)
    return r if np.ndim(r) else float(r)


def t2_of_x(x, consts: PhysicalConstants = NOMINAL):
    x = _check_x(x)
    g, _ = _dephasing(x, consts)
    r = 1.0 / (0.5 * relaxation_rate(x, consts) + g)
    return r if np.ndim(r) else float(r)


def pauli_px_pz(x, dt, consts: PhysicalConstants = NOMINAL, derivatives: bool = False):
    """Return ``(p_x, p_z)`` (and ``dp_x/dx, dp_z/dx`` when requested).

    ``p_z`` is evaluated as ``(expm1(-b)^2 - e^-a expm1(-2 phi)) / 4`` with
    ``a = dt G1``, ``phi = dt Gphi``, ``b = a/2 + phi``; both terms are
    non-negative so the result has no cancellation error at small x.
    """
    return pauli_px_pz_many(x, (dt,), consts, derivatives)[0]


def pauli_px_pz_many(x, dts, consts: PhysicalConstants = NOMINAL, derivatives: bool = False) -> list:
    """``pauli_px_pz`` for several durations, sharing the rate evaluation."""
    x = np.asarray(x, dtype=float)
    g1 = relaxation_rate(x, consts)
    gphi, dgphi = _dephasing(x, consts)
    out = []
    for dt in dts:
        a = dt * g1
        phi = dt * gphi
        b = 0.5 * a + phi
        ea = np.exp(-a)
        em_b = np.expm1(-b)
        px = -0.25 * np.expm1(-a)
        pz = 0.25 * (em_b * em_b - ea * np.expm1(-2.0 * phi))
        if not derivatives:
            out.append((px, pz))
            continue
        da = dt * consts.c1
        db = 0.5 * da + dt * dgphi
        dpx = 0.25 * da * ea
        # d/dx [1 + e^-a - 2 e^-b] / 4
        dpz = 0.25 * (-da * ea + 2.0 * db * np.exp(-b))
        out.append((px, pz, dpx, dpz))
    return out


def pauli_probs(x, dt, consts: PhysicalConstants = NOMINAL) -> PauliProbs:
    x = _check_x(x)
    if np.any(np.asarray(dt) < 0):
        raise ValueError("dt must be non-negative")
    px, pz = pauli_px_pz(x, dt, consts)
    px = np.clip(px, 0.0, 1.0)
    pz = np.clip(pz, 0.0, 1.0)
    pi = np.clip(1.0 - 2.0 * px - pz, 0.0, 1.0)
    if np.ndim(px) == 0:
        return PauliProbs(float(pi), float(px), float(px), float(pz))
    return PauliProbs(pi, px, px.copy(), pz)


def inv_px(p, dt, consts: PhysicalConstants = NOMINAL):
    """Closed-form inverse of ``p_x``; densities below baseline clamp to 0."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p >= 0.25):
        raise ValueError("inv_px requires 0 <= p < 1/4")
    rate = -np.log1p(-4.0 * p) / dt
    x = np.maximum((rate - 1.0 / consts.t1_baseline) / consts.c1, 0.0)
    return x if x.ndim else float(x)


class PzRangeError(ValueError):
    def __init__(self, p, lo, hi):
        super().__init__(f"p_z = {p!r} outside attainable interval [{lo!r}, {hi!r}]")
        self.interval = (lo, hi)


def pz_domain(dt, consts: PhysicalConstants = NOMINAL, x_cap: float = X_CAP):
    """Attainable p_z interval ``[p_z(0), p_z(x_cap)]`` for this duration."""
    return _pz_domain(float(dt), consts, float(x_cap))


@lru_cache(maxsize=256)
def _pz_domain(dt, consts, x_cap):
    lo = pauli_px_pz(0.0, dt, consts)[1]
    hi = pauli_px_pz(x_cap, dt, consts)[1]
    return float(lo), float(hi)


def px_domain(dt, consts: PhysicalConstants = NOMINAL):
    """Interval of p_x on which ``inv_px`` is finite and non-negative."""
    return float(pauli_px_pz(0.0, dt, consts)[0]), 0.25 - EPS_P


@njit(cache=True)
def _pz_scalar(x, dt, c1, g1_base, c_phi):
    a = dt * (c1 * x + g1_base)
    phi = 0.0
    if x > 0.0:
        lu = math.log(4.0 * math.pi) - 2.0 * math.log(x)
        W = _w0_log(lu, math.exp(min(lu, 700.0)))
        phi = dt * c_phi * x / math.sqrt(W)
    b = 0.5 * a + phi
    em_b = math.expm1(-b)
    return 0.25 * (em_b * em_b - math.exp(-a) * math.expm1(-2.0 * phi))


@njit(cache=True)
def _inv_pz_kernel(p, dt, c1, g1_base, c_phi, x_cap, max_iter, floor_p, out):
    for k in range(p.size):
        target = p[k]
        if target <= floor_p:
            out[k] = 0.0
            continue
        hi = 1e-6
        for _ in range(64):
            if _pz_scalar(hi, dt, c1, g1_base, c_phi) >= target:
                break
            hi = min(hi * 2.0, x_cap)
        lo = 0.0
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if _pz_scalar(mid, dt, c1, g1_base, c_phi) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-14 * hi:
                break
        out[k] = 0.5 * (lo + hi)


def inv_pz(p, dt, consts: PhysicalConstants = NOMINAL, x_cap: float = X_CAP, max_iter: int = 200):
    """Numerical inverse of ``p_z`` by bisection on ``[0, x_hi]``.

    ``x_hi`` doubles from 1e-6 until ``p_z(x_hi) >= p``.  Bisection runs until
    the bracket is relatively narrower than 1e-14 (or ``max_iter``).
    """
    p_arr = np.ascontiguousarray(np.atleast_1d(np.asarray(p, dtype=float))).ravel()
    lo_p, hi_p = pz_domain(dt, consts, x_cap)
    bad = (p_arr < lo_p) | (p_arr > hi_p)
    if np.any(bad):
        raise PzRangeError(float(p_arr[bad][0]), lo_p, hi_p)
    x = np.empty_like(p_arr)
    _inv_pz_kernel(p_arr, float(dt), consts.c1, 1.0 / consts.t1_baseline, consts.c_phi, x_cap, max_iter, lo_p, x)
    return x.reshape(np.shape(p)) if np.ndim(p) else float(x[0])
