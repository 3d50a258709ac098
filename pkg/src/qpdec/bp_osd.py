"""Sum-product BP on a binary parity-check matrix and OSD post-processing.

Hard decisions use ``lambda < 0`` strictly (zero LLR means no error).  OSD
picks pivots among the least reliable columns (ties broken by column index),
fixes the remaining information set to the BP hard decisions, and searches
over flips of information-set bits.  Candidates are scored by their prior
log-likelihood.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numba as nb
import numpy as np
import scipy.sparse as sp

LLR_CLIP = 30.0


@dataclass
class BpResult:
    posterior_llr: np.ndarray
    marginals: np.ndarray
    converged: bool
    iterations_used: int

    @property
    def hard_decision(self) -> np.ndarray:
        return (self.posterior_llr < 0).astype(np.uint8)


@dataclass
class DecodeResult:
    hard_decisions: np.ndarray
    observables: np.ndarray
    method: str
    bp: BpResult | None = None


class InfeasibleSyndrome(ValueError):
    pass


class TannerGraph:
    """Edge lists of H in check-major and variable-major order."""

    def __init__(self, H):
        H = sp.csr_matrix(H)
        H.sort_indices()
        self.shape = H.shape
        self.check_ptr = H.indptr.astype(np.int64)
        self.edge_var = H.indices.astype(np.int64)
        n_edges = len(self.edge_var)
        order = np.argsort(self.edge_var, kind="stable")
        self.var_edges = order.astype(np.int64)
        self.var_ptr = np.zeros(H.shape[1] + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.edge_var, minlength=H.shape[1]), out=self.var_ptr[1:])
        self.n_edges = n_edges
        self.H = H


@nb.njit(cache=True)
def _bp_kernel(check_ptr, edge_var, var_ptr, var_edges, llr0, syndrome, max_iters, early_stop, clip):
    n_chk = len(check_ptr) - 1
    n_var = len(llr0)
    n_e = len(edge_var)
    v2c = np.empty(n_e)
    c2v = np.zeros(n_e)
    for e in range(n_e):
        v2c[e] = llr0[edge_var[e]]
    post = llr0.copy()
    tanh_buf = np.empty(n_e)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        for c in range(n_chk):
            a, b = check_ptr[c], check_ptr[c + 1]
            for e in range(a, b):
                m = v2c[e]
                if m > clip:
                    m = clip
                elif m < -clip:
                    m = -clip
                tanh_buf[e] = np.tanh(0.5 * m)
            sign = -1.0 if syndrome[c] else 1.0
            for e in range(a, b):
                prod = sign
                for f in range(a, b):
                    if f != e:
                        prod *= tanh_buf[f]
                val = 2.0 * np.arctanh(prod)
                if val > clip:
                    val = clip
                elif val < -clip:
                    val = -clip
                c2v[e] = val
        for v in range(n_var):
            s = llr0[v]
            for k in range(var_ptr[v], var_ptr[v + 1]):
                s += c2v[var_edges[k]]
            post[v] = s
            for k in range(var_ptr[v], var_ptr[v + 1]):
                e = var_edges[k]
                v2c[e] = s - c2v[e]
        if early_stop:
            ok = True
            for c in range(n_chk):
                par = 0
                for e in range(check_ptr[c], check_ptr[c + 1]):
                    if post[edge_var[e]] < 0:
                        par ^= 1
                if par != syndrome[c]:
                    ok = False
                    break
            if ok:
                converged = True
                break
    if not early_stop:
        converged = True
        for c in range(n_chk):
            par = 0
            for e in range(check_ptr[c], check_ptr[c + 1]):
                if post[edge_var[e]] < 0:
                    par ^= 1
            if par != syndrome[c]:
                converged = False
                break
    return post, converged, it


def _as_graph(H):
    if isinstance(H, TannerGraph):
        return H
    if hasattr(H, "H") and sp.issparse(getattr(H, "H")):
        return TannerGraph(H.H)
    return TannerGraph(H)


def bp_decode(H, priors, syndrome, max_iters: int = 20, early_stop: bool = True) -> BpResult:
    """Flooding sum-product BP.  ``H`` may be a matrix, a Dem or a TannerGraph."""
    g = _as_graph(H)
    priors = np.asarray(priors, dtype=float)
    syndrome = np.asarray(syndrome, dtype=np.uint8).ravel()
    if priors.shape != (g.shape[1],) or syndrome.shape != (g.shape[0],):
        raise ValueError(f"dimension mismatch: H {g.shape}, priors {priors.shape}, syndrome {syndrome.shape}")
    llr0 = np.log1p(-priors) - np.log(priors)
    post, conv, it = _bp_kernel(
        g.check_ptr, g.edge_var, g.var_ptr, g.var_edges, llr0, syndrome, int(max_iters), bool(early_stop), LLR_CLIP
    )
    marg = 1.0 / (1.0 + np.exp(post))
    return BpResult(post, marg, bool(conv), int(it))


# ---------------------------------------------------------------- GF(2) OSD


@nb.njit(cache=True)
def _rref(A, order):
    """In-place Gauss-Jordan over GF(2) on packed rows, pivoting in ``order``."""
    n_rows, W = A.shape
    used = np.zeros(n_rows, dtype=np.bool_)
    piv_cols = np.empty(n_rows, dtype=np.int64)
    piv_rows = np.empty(n_rows, dtype=np.int64)
    rank = 0
    one = np.uint64(1)
    for idx in range(len(order)):
        if rank == n_rows:
            break
        c = order[idx]
        wc = c // 64
        bc = np.uint64(c % 64)
        r = -1
        for i in range(n_rows):
            if not used[i] and (A[i, wc] >> bc) & one:
                r = i
                break
        if r < 0:
            continue
        used[r] = True
        piv_cols[rank] = c
        piv_rows[rank] = r
        rank += 1
        for i in range(n_rows):
            if i != r and (A[i, wc] >> bc) & one:
                for w in range(W):
                    A[i, w] ^= A[r, w]
    return piv_cols[:rank], piv_rows[:rank]


def _packed_rows(H, syndrome) -> np.ndarray:
    """Rows of [H | s] as little-endian uint64 bitsets."""
    dense = np.zeros((H.shape[0], H.shape[1] + 1), dtype=np.uint8)
    coo = sp.coo_matrix(H)
    dense[coo.row, coo.col] = 1
    dense[:, -1] = syndrome
    W = (dense.shape[1] + 63) // 64
    pad = np.zeros((dense.shape[0], W * 64), dtype=np.uint8)
    pad[:, : dense.shape[1]] = dense
    return np.packbits(pad, axis=1, bitorder="little").view("<u8").copy()


def _unpack(A, n) -> np.ndarray:
    return np.unpackbits(A.view(np.uint8), axis=1, bitorder="little")[:, :n].astype(bool)


def osd_postprocess(H, bp: BpResult, syndrome, priors, order: int = 10, mode: str = "combination_sweep") -> DecodeResult:
    """OSD-omega over the BP reliabilities; always returns an exact solution."""
    if order < 0:
        raise ValueError("OSD order must be non-negative")
    if mode not in ("exhaustive", "combination_sweep"):
        raise ValueError("osd mode must be 'exhaustive' or 'combination_sweep'")
    Hc = sp.csc_matrix(H.H if hasattr(H, "H") and sp.issparse(getattr(H, "H")) else H)
    n_rows, n_cols = Hc.shape
    syndrome = np.asarray(syndrome, dtype=np.uint8).ravel()
    priors = np.asarray(priors, dtype=float)
    hard = bp.hard_decision.astype(bool)

    # least reliable first; stable sort breaks ties by column index
    col_order = np.argsort(np.abs(bp.posterior_llr), kind="stable")
    A = _packed_rows(Hc, syndrome)
    piv_cols, piv_rows = _rref(A, col_order.astype(np.int64))
    D = _unpack(A, n_cols + 1)
    is_piv = np.zeros(n_cols, dtype=bool)
    is_piv[piv_cols] = True
    non_piv = col_order[~is_piv[col_order]]  # least reliable first
    R = D[np.ix_(piv_rows, non_piv)].T  # (n_info, rank)

    base_info = hard[non_piv]
    s_piv = D[piv_rows, n_cols].copy()
    if base_info.any():
        s_piv ^= np.logical_xor.reduce(R[base_info], axis=0)
    free_rows = np.setdiff1d(np.arange(n_rows), piv_rows)
    if len(free_rows) and np.any(D[free_rows, n_cols]):
        raise InfeasibleSyndrome("syndrome is not in the column space of H")

    w = np.log1p(-priors) - np.log(priors)  # cost of setting a bit: -log-likelihood ratio
    w_piv = w[piv_cols]
    w_info = w[non_piv]

    def cost(info_bits, piv_bits):
        return float(np.dot(w_info, info_bits) + np.dot(w_piv, piv_bits))

    best_info = base_info.copy()
    best_piv = s_piv.copy()
    best_cost = cost(best_info, best_piv)

    def consider(flip):
        nonlocal best_info, best_piv, best_cost
        info = base_info.copy()
        info[list(flip)] ^= True
        piv = s_piv ^ np.logical_xor.reduce(R[list(flip)], axis=0)
        c = cost(info, piv)
        if c < best_cost - 1e-12:
            best_info, best_piv, best_cost = info, piv, c

    n_info = len(non_piv)
    if order > 0 and n_info:
        if mode == "exhaustive":
            for k in range(1, min(order, n_info) + 1):
                for flip in itertools.combinations(range(n_info), k):
                    consider(flip)
        else:
            # weight-1: vectorised over every information-set column
            sign_info = np.where(base_info, -1.0, 1.0)
            sign_piv = np.where(s_piv, -1.0, 1.0)
            delta = w_info * sign_info + R.astype(float) @ (w_piv * sign_piv)
            j = int(np.argmin(delta))
            if delta[j] < 0:
                consider((j,))
            lim = min(2 * order, n_info)
            if lim >= 2:
                # all weight-2 flips among the first `lim` columns at once
                iu, ju = np.triu_indices(lim, k=1)
                piv = s_piv[None, :] ^ R[iu] ^ R[ju]
                c2 = piv.astype(float) @ w_piv + float(np.dot(w_info, base_info))
                c2 += w_info[iu] * sign_info[iu] + w_info[ju] * sign_info[ju]
                k = int(np.argmin(c2))
                if c2[k] < best_cost - 1e-12:
                    consider((int(iu[k]), int(ju[k])))

    e = np.zeros(n_cols, dtype=np.uint8)
    e[non_piv] = best_info
    e[piv_cols] = best_piv
    if np.any((Hc @ e.astype(np.int64)) % 2 != syndrome):
        raise AssertionError("OSD produced an inconsistent solution")
    return DecodeResult(e, np.zeros(0, dtype=np.uint8), "bp+osd", bp)


def predict_observable(O, e) -> np.ndarray:
    O = O.O if hasattr(O, "O") and sp.issparse(getattr(O, "O")) else O
    return ((O @ np.asarray(e, dtype=np.int64)) % 2).astype(np.uint8)


def decode(dem, priors, syndrome, max_iters: int = 20, osd_order: int = 10, osd_mode: str = "combination_sweep", use_osd: bool = True, graph=None) -> DecodeResult:
    """BP, then OSD unless BP already converged and ``use_osd`` is False."""
    H = dem.H if hasattr(dem, "H") else dem
    g = graph if graph is not None else TannerGraph(H)
    bp = bp_decode(g, priors, syndrome, max_iters)
    if use_osd:
        res = osd_postprocess(H, bp, syndrome, priors, osd_order, osd_mode)
    else:
        res = DecodeResult(bp.hard_decision, np.zeros(0, dtype=np.uint8), "bp", bp)
    if hasattr(dem, "O"):
        res.observables = predict_observable(dem.O, res.hard_decisions)
    return res
