"""Chip geometry, graph-Laplacian diffusion and quasiparticle (QP) dynamics.

The QP field lives on a set of sites (one per physical qubit for inference,
optionally a finer grid for the synthetic ground truth).  Time is measured in
QEC cycles: trapping rate ``s`` and diffusion constant ``kappa`` are per-cycle
quantities and the transition matrix uses a step of one cycle.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

X_FLOOR = 1e-10
BASELINE_DENSITY = 1e-8
CYCLE_DURATION_S = 921e-9

ROLES = ("data", "ancilla", "none")


@dataclass(frozen=True)
class ChipGeometry:
    """Site coordinates (mm) and the qubit -> site placement."""

    sites: np.ndarray
    qubit_site: np.ndarray
    width_mm: float = 40.0
    height_mm: float = 40.0
    roles: tuple[str, ...] = ()

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float).reshape(-1, 2)
        qs = np.asarray(self.qubit_site, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "qubit_site", qs)
        if not self.roles:
            roles = ["none"] * len(sites)
            object.__setattr__(self, "roles", tuple(roles))
        if len(self.roles) != len(sites):
            raise ValueError("roles must have one entry per site")
        if any(r not in ROLES for r in self.roles):
            raise ValueError(f"roles must be in {ROLES}")
        if sites.size and (
            sites[:, 0].min() < 0
            or sites[:, 1].min() < 0
            or sites[:, 0].max() > self.width_mm
            or sites[:, 1].max() > self.height_mm
        ):
            raise ValueError("site coordinates outside chip bounds")
        if qs.size:
            if qs.min() < 0 or qs.max() >= len(sites):
                raise ValueError("qubit_site index out of range")
            if len(np.unique(qs)) != len(qs):
                raise ValueError("qubit_site must be injective")

    @property
    def J(self) -> int:
        return len(self.sites)

    @property
    def N(self) -> int:
        return len(self.qubit_site)

    def distances(self) -> np.ndarray:
        diff = self.sites[:, None, :] - self.sites[None, :, :]
        return np.sqrt((diff**2).sum(-1))


def grid_geometry(nx: int = 32, ny: int = 32, width_mm: float = 40.0, height_mm: float = 40.0) -> ChipGeometry:
    """Regular cell-centred grid with no qubits; used for finer ground truth."""
    xs = (np.arange(nx) + 0.5) * width_mm / nx
    ys = (np.arange(ny) + 0.5) * height_mm / ny
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    sites = np.column_stack([gx.ravel(), gy.ravel()])
    return ChipGeometry(sites, np.zeros(0, dtype=np.int64), width_mm, height_mm)


@dataclass(frozen=True)
class DiffusionParams:
    kappa: float = 0.5
    s: float = 0.05
    delta_t: float = CYCLE_DURATION_S
    rho: float = 4.0
    sigma_kernel: float = 2.5
    gamma: float = 1e-7
    r: float = 0.0

    def __post_init__(self):
        if self.kappa < 0 or self.s < 0:
            raise ValueError("kappa and s must be non-negative")
        if self.rho <= 0 or self.sigma_kernel <= 0:
            raise ValueError("rho and sigma_kernel must be positive")
        if self.r < 0:
            raise ValueError("recombination rate must be non-negative")


@dataclass(frozen=True)
class InjectionEvent:
    """A QP burst: Gaussian profile centred on site ``site`` at cycle ``t0``."""

    t0: int
    site: int
    amplitude: float
    spatial_spread: float = 5.0

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("injection amplitude must be positive")
        if self.t0 < 1:
            raise ValueError("injection cycle t0 must be >= 1")
        if self.spatial_spread <= 0:
            raise ValueError("spatial_spread must be positive")


@dataclass
class QpTrajectory:
    """Positive QP density, ``values[i, t-1]`` is site i at cycle t."""

    values: np.ndarray
    cycle_duration: float = CYCLE_DURATION_S

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be J x T")
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise ValueError("QP density must be finite and strictly positive")

    @property
    def J(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)

    @classmethod
    def uniform(cls, J: int, T: int, level: float = BASELINE_DENSITY) -> "QpTrajectory":
        return cls(np.full((J, T), float(level)))


def build_laplacian(geom: ChipGeometry, rho: float, sigma_kernel: float, diagnostics: list | None = None) -> sp.csr_matrix:
    """Random-walk normalised Laplacian ``I - D^-1 W`` of a Gaussian radius graph.

    Sites with no neighbour inside ``rho`` get an all-zero row; their indices
    are appended to ``diagnostics`` when a list is supplied.
    """
    if rho <= 0 or sigma_kernel <= 0:
        raise ValueError("rho and sigma_kernel must be positive")
    J = geom.J
    pairs = np.array(sorted(cKDTree(geom.sites).query_pairs(rho)), dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        d2 = ((geom.sites[pairs[:, 0]] - geom.sites[pairs[:, 1]]) ** 2).sum(1)
        w = np.exp(-d2 / (2.0 * sigma_kernel**2))
        W = sp.coo_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(J, J)).tocsr()
        W = W + W.T
    else:
        W = sp.csr_matrix((J, J))
    W = ((W + W.T) * 0.5).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    isolated = np.flatnonzero(deg == 0)
    if diagnostics is not None:
        diagnostics.extend(int(i) for i in isolated)
    inv = np.zeros(J)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    eye = sp.diags((deg > 0).astype(float))
    L = (eye - sp.diags(inv) @ W).tocsr()
    L.eliminate_zeros()
    return L


def transition_matrix(L: sp.spmatrix, params: DiffusionParams) -> sp.csr_matrix:
    """``A = I - (sI + kappa L)`` for a one-cycle step."""
    J = L.shape[0]
    A = (sp.identity(J, format="csr") - (params.s * sp.identity(J, format="csr") + params.kappa * L)).tocsr()
    diag = A.diagonal()
    if np.any(diag < 0):
        warnings.warn("transition matrix has negative diagonal entries; step too coarse for (kappa, s)", RuntimeWarning)
    if not np.all(np.isfinite(A.data)):
        raise ValueError("non-finite transition matrix")
    if abs(A).sum(axis=1).max() > 1.0 + params.s + 1e-12:
        warnings.warn("||A||_inf exceeds 1 + s", RuntimeWarning)
    return A


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5)


def injection_vector(geom: ChipGeometry, event: InjectionEvent) -> np.ndarray:
    """Integer injection counts C_t for one event (Gaussian profile, round half up)."""
    d2 = ((geom.sites - geom.sites[event.site]) ** 2).sum(1)
    return _round_half_up(event.amplitude * np.exp(-d2 / (2.0 * event.spatial_spread**2)))


def simulate_qp(
    geom: ChipGeometry,
    params: DiffusionParams,
    injections: Sequence[InjectionEvent],
    T: int,
    mode: str = "linear",
    seed: int | None = None,
    x0: np.ndarray | float | None = None,
    floor: float = X_FLOOR,
    process_noise: float = 0.0,
    substeps: int = 1,
    background: float = 0.0,
) -> QpTrajectory:
    """Generate a QP density trajectory over ``T`` cycles.

    ``linear`` iterates ``X_t = A X_{t-1} + gamma C_t``; ``nonlinear`` takes
    explicit Euler steps of ``dx/dt = -r x^2 - s x - kappa L x + g`` with
    ``g = gamma C_t`` per cycle.  Values are floored at ``floor`` after every
    cycle.  ``process_noise`` is an optional log-normal multiplicative jitter
    (standard deviation in nats) drawn from ``seed``.  ``background`` adds
    the uniform source that holds a quiet chip at that density, so bursts
    relax back to it instead of to zero.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if mode not in ("linear", "nonlinear"):
        raise ValueError("mode must be 'linear' or 'nonlinear'")
    for ev in injections:
        if ev.amplitude < 0:
            raise ValueError("negative injection amplitude")
        if not 0 <= ev.site < geom.J:
            raise ValueError("injection site out of range")
    rng = np.random.default_rng(seed)
    L = build_laplacian(geom, params.rho, params.sigma_kernel)
    J = geom.J
    C = np.zeros((J, T))
    for ev in injections:
        if ev.t0 <= T:
            C[:, ev.t0 - 1] += injection_vector(geom, ev)
    if x0 is None:
        x = np.full(J, floor)
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (J,)).copy()
    out = np.empty((J, T))
    if background < 0:
        raise ValueError("background density must be non-negative")
    src = params.s * background + params.r * background**2
    if mode == "linear":
        A = transition_matrix(L, params)
        for t in range(T):
            x = A @ x + params.gamma * C[:, t] + src
            if process_noise > 0:
                x = x * np.exp(process_noise * rng.standard_normal(J))
            x = np.maximum(x, floor)
            out[:, t] = x
    else:
        h = 1.0 / substeps
        for t in range(T):
            for k in range(substeps):
                drift = src - params.r * x * x - params.s * x - params.kappa * (L @ x)
                x = x + h * drift
                if k == 0:
                    x = x + params.gamma * C[:, t]
            if process_noise > 0:
                x = x * np.exp(process_noise * rng.standard_normal(J))
            x = np.maximum(x, floor)
            out[:, t] = x
    return QpTrajectory(out, params.delta_t)


def sample_at_sites(traj: QpTrajectory, source: ChipGeometry, target: ChipGeometry) -> QpTrajectory:
    """Nearest-neighbour lookup of a trajectory from ``source`` sites onto ``target`` sites."""
    _, idx = cKDTree(source.sites).query(target.sites)
    return QpTrajectory(traj.values[idx], traj.cycle_duration)


def spectral_radius(A: sp.spmatrix, iters: int = 500, seed: int = 0) -> float:
    """Power-iteration estimate of max |eig(A)|."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = A @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = math.sqrt(nrm / np.linalg.norm(v))
        v = w / nrm
    return lam


# file formats


def write_trajectory(traj: QpTrajectory, path, binary: bool = False) -> None:
    path = Path(path)
    J, T = traj.values.shape
    if binary:
        traj.values.T.astype("<f8").tofile(path)
        sidecar = {"J": J, "T": T, "cycle_duration_s": traj.cycle_duration}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))
        return
    with open(path, "w") as fh:
        fh.write(f"{J} {T} {traj.cycle_duration!r}\n")
        for t in range(T):
            fh.write(" ".join(repr(float(v)) for v in traj.values[:, t]) + "\n")


def read_trajectory(path) -> QpTrajectory:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        raw = np.fromfile(path, dtype="<f8").reshape(meta["T"], meta["J"])
        return QpTrajectory(raw.T.copy(), float(meta["cycle_duration_s"]))
    with open(path) as fh:
        J, T, dur = fh.readline().split()
        rows = [np.array(line.split(), dtype=float) for line in fh if line.strip()]
    vals = np.array(rows).reshape(int(T), int(J)).T.copy()
    return QpTrajectory(vals, float(dur))


def write_geometry(geom: ChipGeometry, path) -> None:
    with open(path, "w") as fh:
        for i, (x, y) in enumerate(geom.sites):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {geom.roles[i]}\n")


def read_geometry(path, width_mm: float = 40.0, height_mm: float = 40.0) -> ChipGeometry:
    """Read a geometry file; sites with role data/ancilla become qubits in file order."""
    idx, xy, roles = [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            i, x, y, role = line.split()
            idx.append(int(i))
            xy.append((float(x), float(y)))
            roles.append(role)
    order = np.argsort(idx)
    xy = np.array(xy)[order]
    roles = tuple(roles[k] for k in order)
    qubits = [k for k, r in enumerate(roles) if r != "none"]
    return ChipGeometry(xy, np.array(qubits, dtype=np.int64), width_mm, height_mm, roles)
