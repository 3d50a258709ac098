"""Detector error model: fault enumeration, mechanism grouping, block structure.

Rows of ``H`` are detectors.  The readout block (after cycle T) is folded into
cycle T, so every row belongs to one cycle in ``1..T``.  A mechanism's *home*
cycle is the earliest cycle it touches; it is *spanning* when it also touches
the next cycle.  Columns are ordered by home cycle, then intra before spanning,
then lexicographically by detector support.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .noise_model import EPS_P, NOMINAL, PhysicalConstants, pauli_px_pz
from .stab_circuit import N_ROUNDS, PAULI_NAMES, Circuit, PauliFault, propagate_faults

INTRA, SPANNING = 0, 1


class UndetectableLogicalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ErrorMechanism:
    id: tuple  # (home cycle, index within cycle)
    support: tuple  # ((t, i), ...) detector coordinates
    observables: tuple
    constituents: tuple  # ((PauliFault, dt, site), ...)


@dataclass(frozen=True)
class Dem:
    H: sp.csc_matrix  # (n_det, n_mech) uint8
    O: sp.csc_matrix  # (n_obs, n_mech) uint8
    T: int
    row_cycle: np.ndarray  # (n_det,) in 1..T
    row_coord: np.ndarray  # (n_det, 2) detector (t, i) incl. readout block T+1
    mech_cycle: np.ndarray  # (n_mech,) home cycle
    mech_kind: np.ndarray  # INTRA or SPANNING
    # constituent fault table: one entry per retained single fault
    f_t: np.ndarray
    f_tau: np.ndarray
    f_q: np.ndarray
    f_pauli: np.ndarray
    f_site: np.ndarray
    f_mech: np.ndarray
    round_durations: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_det(self) -> int:
        return self.H.shape[0]

    @property
    def n_mech(self) -> int:
        return self.H.shape[1]

    @property
    def f_dt(self) -> np.ndarray:
        return np.asarray(self.round_durations)[self.f_tau - 1]

    def mechanism(self, j: int) -> ErrorMechanism:
        rows = self.H.indices[self.H.indptr[j] : self.H.indptr[j + 1]]
        sup = tuple(sorted((int(self.row_coord[r, 0]), int(self.row_coord[r, 1])) for r in rows))
        obs = tuple(int(v) for v in self.O[:, j].toarray().ravel())
        same_cycle = np.flatnonzero(self.mech_cycle == self.mech_cycle[j])
        cons = []
        for k in np.flatnonzero(self.f_mech == j):
            f = PauliFault(int(self.f_t[k]), int(self.f_tau[k]), int(self.f_q[k]), PAULI_NAMES[int(self.f_pauli[k])])
            cons.append((f, self.round_durations[f.tau - 1], int(self.f_site[k])))
        return ErrorMechanism((int(self.mech_cycle[j]), int(np.searchsorted(same_cycle, j))), sup, obs, tuple(cons))

    def block_columns(self, t: int, kind: int) -> np.ndarray:
        return np.flatnonzero((self.mech_cycle == t) & (self.mech_kind == kind))

    def rows_of_cycle(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.row_cycle == t)


def enumerate_faults(circ: Circuit, T: int):
    """All (t, tau, q, pauli) single-fault locations as parallel arrays."""
    t, tau, q, p = np.meshgrid(
        np.arange(1, T + 1), np.arange(1, N_ROUNDS + 1), np.arange(circ.N), np.arange(1, 4), indexing="ij"
    )
    return t.ravel(), tau.ravel(), q.ravel(), p.ravel()


def build_dem(circ: Circuit, T: int) -> Dem:
    if T < 2:
        raise ValueError("build_dem requires T >= 2")
    ft, ftau, fq, fp = enumerate_faults(circ, T)
    dets, obs = propagate_faults(circ, T, ft, ftau, fq, fp)
    n_det = dets.shape[1]
    block = circ.detector_block(T)
    row_cycle = np.minimum(block, T)

    detected = dets.any(axis=1)
    logical = obs.any(axis=1)
    if np.any(~detected & logical):
        k = int(np.flatnonzero(~detected & logical)[0])
        raise UndetectableLogicalError(
            f"fault t={ft[k]} round={ftau[k]} qubit={fq[k]} flips a logical without firing any detector"
        )
    keep = detected
    key = np.concatenate([dets[keep], obs[keep]], axis=1)
    uniq, inverse = np.unique(np.packbits(key, axis=1), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    n_mech = len(uniq)
    # representative fault per mechanism
    rep = np.zeros(n_mech, dtype=np.int64)
    rep[inverse[::-1]] = np.arange(len(inverse))[::-1]
    mdets = dets[keep][rep]
    mobs = obs[keep][rep]

    cyc = np.where(mdets, row_cycle[None, :], T + 1)
    home = cyc.min(axis=1)
    last = np.where(mdets, row_cycle[None, :], 0).max(axis=1)
    span = last - home
    if np.any(span > 1):
        raise AssertionError("mechanism support spans more than two consecutive cycles")
    kind = np.where(span == 1, SPANNING, INTRA)

    supports = [tuple(np.flatnonzero(r)) for r in mdets]
    order = sorted(range(n_mech), key=lambda j: (home[j], kind[j], supports[j]))
    order = np.array(order, dtype=np.int64)
    new_index = np.empty(n_mech, dtype=np.int64)
    new_index[order] = np.arange(n_mech)

    mdets, mobs, home, kind = mdets[order], mobs[order], home[order], kind[order]
    H = sp.csc_matrix(mdets.T.astype(np.uint8))
    H.sort_indices()
    O = sp.csc_matrix(mobs.T.astype(np.uint8))

    n_anc = circ.n_anc
    zi = circ.z_ancilla_idx
    row_coord = np.empty((n_det, 2), dtype=np.int64)
    row_coord[: T * n_anc, 0] = np.repeat(np.arange(1, T + 1), n_anc)
    row_coord[: T * n_anc, 1] = np.tile(np.arange(n_anc), T)
    row_coord[T * n_anc :, 0] = T + 1
    row_coord[T * n_anc :, 1] = zi

    site = circ.geometry.qubit_site
    diag = {
        "n_faults": int(len(ft)),
        "dropped_trivial": int(np.sum(~detected)),
        "n_mechanisms": int(n_mech),
        "max_column_weight": int(mdets.sum(axis=1).max()),
    }
    return Dem(
        H=H,
        O=O,
        T=T,
        row_cycle=row_cycle,
        row_coord=row_coord,
        mech_cycle=home,
        mech_kind=kind,
        f_t=ft[keep],
        f_tau=ftau[keep],
        f_q=fq[keep],
        f_pauli=fp[keep],
        f_site=site[fq[keep]],
        f_mech=new_index[inverse],
        round_durations=tuple(circ.round_durations),
        diagnostics=diag,
    )


def fault_probs(dem: Dem, x: np.ndarray, consts: PhysicalConstants = NOMINAL, derivatives: bool = False):
    """Per-fault Pauli probabilities p(E | x) for a J x T density array.

    With ``derivatives`` also returns dp(E)/dx at the fault's (site, cycle).
    """
    xf = np.asarray(x)[dem.f_site, dem.f_t - 1]
    dt = dem.f_dt
    p = np.empty(len(xf))
    dp = np.empty(len(xf)) if derivatives else None
    for d in np.unique(dt):
        m = dt == d
        res = pauli_px_pz(xf[m], d, consts, derivatives)
        is_z = dem.f_pauli[m] == 3
        p[m] = np.where(is_z, res[1], res[0])
        if derivatives:
            dp[m] = np.where(is_z, res[3], res[2])
    return (p, dp) if derivatives else p


def combine_priors(dem: Dem, pf: np.ndarray, prior_mode: str = "sum") -> np.ndarray:
    """Raw (unclamped) mechanism probabilities from per-fault probabilities."""
    if prior_mode == "sum":
        return np.bincount(dem.f_mech, weights=pf, minlength=dem.n_mech)
    if prior_mode == "xor":
        # probability that an odd number of constituents fire
        logs = np.bincount(dem.f_mech, weights=np.log1p(-2.0 * np.minimum(pf, 0.5 - EPS_P)), minlength=dem.n_mech)
        return -0.5 * np.expm1(logs)
    raise ValueError("prior_mode must be 'sum' or 'xor'")


def clamp_priors(p: np.ndarray) -> np.ndarray:
    return np.clip(p, EPS_P, 0.5 - EPS_P)


def mechanism_priors(dem: Dem, qp, consts: PhysicalConstants = NOMINAL, prior_mode: str = "sum") -> np.ndarray:
    """Clamped mechanism priors p_m(E | X) from a trajectory or J x T array."""
    x = qp.values if hasattr(qp, "values") else np.asarray(qp)
    if x.shape[1] < dem.T:
        raise ValueError("trajectory shorter than the DEM horizon")
    return clamp_priors(combine_priors(dem, fault_probs(dem, x, consts), prior_mode))


def uniform_fault_priors(dem: Dem, p: float, prior_mode: str = "sum") -> np.ndarray:
    """Priors when every single fault has probability ``p``."""
    return clamp_priors(combine_priors(dem, np.full(len(dem.f_mech), p), prior_mode))


@dataclass(frozen=True)
class BlockPartition:
    rows: np.ndarray  # detector rows of cycle t
    prev_spanning: np.ndarray  # columns of the spanning block of cycle t-1
    intra: np.ndarray
    spanning: np.ndarray

    @property
    def columns(self) -> np.ndarray:
        return np.concatenate([self.prev_spanning, self.intra, self.spanning])


def block_partition(dem: Dem, t: int) -> BlockPartition:
    if not 1 <= t <= dem.T:
        raise ValueError(f"cycle {t} outside [1, {dem.T}]")
    prev = dem.block_columns(t - 1, SPANNING) if t > 1 else np.zeros(0, dtype=np.int64)
    return BlockPartition(dem.rows_of_cycle(t), prev, dem.block_columns(t, INTRA), dem.block_columns(t, SPANNING))


def syndrome_of(dem: Dem, e: np.ndarray) -> np.ndarray:
    return (dem.H @ np.asarray(e, dtype=np.int64)) % 2


def _write_coo(path, M):
    M = sp.coo_matrix(M)
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for r, c in sorted(zip(M.row.tolist(), M.col.tolist())):
            fh.write(f"{r} {c}\n")


def read_coo(path) -> sp.csc_matrix:
    with open(path) as fh:
        rows, cols, nnz = (int(v) for v in fh.readline().split())
        data = np.loadtxt(fh, dtype=np.int64, ndmin=2)
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: header declares {nnz} entries, found {data.shape[0]}")
    if nnz == 0:
        data = np.zeros((0, 2), dtype=np.int64)
    M = sp.csc_matrix((np.ones(nnz, dtype=np.uint8), (data[:, 0], data[:, 1])), shape=(rows, cols))
    M.sort_indices()
    return M


def write_dem(dem: Dem, h_path, o_path=None):
    _write_coo(h_path, dem.H)
    if o_path is not None:
        _write_coo(o_path, dem.O)


def write_priors(path, p):
    np.savetxt(path, np.asarray(p), fmt="%.17g")


def read_priors(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float))
