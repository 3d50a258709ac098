"""Rotated surface-code memory circuit and batched Pauli-frame propagation.

Each QEC cycle has seven rounds: H on X-ancillas, four CX rounds, H on
X-ancillas, then measure+reset of every ancilla.  After cycle T all data
qubits are read out in the Z basis, which yields one extra block of detectors
(one per Z-ancilla) and the logical-Z observable.

Detector rows are block-major: block t (1 <= t <= T) holds one detector per
ancilla, block T+1 holds the readout detectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chip_qp import ChipGeometry

ROUND_DURATIONS = (25e-9, 34e-9, 34e-9, 34e-9, 34e-9, 25e-9, 735e-9)
N_ROUNDS = 7
PAULI_NAMES = {1: "X", 2: "Y", 3: "Z"}
PAULI_CODES = {"I": 0, "X": 1, "Y": 2, "Z": 3}

# Offsets (dx, dy) from ancilla to data for the four CX steps.  The last two
# data qubits of each X-check form a horizontal pair and of each Z-check a
# vertical pair, so hook errors run perpendicular to same-type logicals.
X_ORDER = ((1, 1), (-1, 1), (1, -1), (-1, -1))
Z_ORDER = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class Circuit:
    d: int
    coords: np.ndarray  # (N, 2) lattice coordinates
    n_data: int
    anc_is_x: np.ndarray  # (n_anc,) bool
    stabilizers: tuple  # data supports per ancilla
    layers: tuple  # 7 rounds of gate tuples
    round_durations: tuple
    logical_z: tuple
    logical_x: tuple
    geometry: ChipGeometry

    @property
    def N(self) -> int:
        return len(self.coords)

    @property
    def n_anc(self) -> int:
        return self.N - self.n_data

    @property
    def data_qubits(self) -> np.ndarray:
        return np.arange(self.n_data)

    @property
    def ancillas(self) -> np.ndarray:
        return np.arange(self.n_data, self.N)

    @property
    def z_ancilla_idx(self) -> np.ndarray:
        """Positions (within the ancilla list) of Z-type ancillas."""
        return np.flatnonzero(~self.anc_is_x)

    def n_detectors(self, T: int) -> int:
        return T * self.n_anc + len(self.z_ancilla_idx)

    def detector_block(self, T: int) -> np.ndarray:
        """Block index (1..T+1) of every detector row."""
        return np.concatenate(
            [np.repeat(np.arange(1, T + 1), self.n_anc), np.full(len(self.z_ancilla_idx), T + 1)]
        )

    def gate_list(self, T: int) -> list[str]:
        lines = []
        for t in range(1, T + 1):
            for tau, layer in enumerate(self.layers, start=1):
                for op, qs in layer:
                    lines.append(f"{t} {tau} {op} " + " ".join(str(q) for q in qs))
        lines.append(f"{T + 1} 0 M " + " ".join(str(q) for q in range(self.n_data)))
        return lines


@dataclass(frozen=True)
class PauliFault:
    t: int
    tau: int
    q: int
    pauli: str

    def __post_init__(self):
        if self.pauli not in ("I", "X", "Y", "Z"):
            raise ValueError("pauli must be one of I, X, Y, Z")
        if not 1 <= self.tau <= N_ROUNDS:
            raise ValueError("round index out of range")


@dataclass(frozen=True)
class DetectorPattern:
    detectors: frozenset  # {(t, i)}
    observables: tuple

    def lines(self) -> list[str]:
        return [f"{t} {i}" for t, i in sorted(self.detectors)]


@dataclass
class SyndromeShot:
    detectors: np.ndarray  # (n_det,) uint8
    observables: np.ndarray  # (n_obs,) uint8


def build_surface_code(d: int, pitch_mm: float = 2.5, chip_mm: float = 40.0) -> Circuit:
    """Distance-d rotated surface code with the N/Z interleaved CX schedule."""
    if d < 3 or d % 2 == 0:
        raise ValueError("distance must be odd and >= 3")
    data = [(2 * i + 1, 2 * j + 1) for j in range(d) for i in range(d)]
    anc, is_x = [], []
    for b in range(d + 1):
        for a in range(d + 1):
            x_type = (a + b) % 2 == 0
            bulk = 1 <= a <= d - 1 and 1 <= b <= d - 1
            top_bottom = (b == 0 or b == d) and 1 <= a <= d - 1
            left_right = (a == 0 or a == d) and 1 <= b <= d - 1
            if bulk or (top_bottom and x_type) or (left_right and not x_type):
                anc.append((2 * a, 2 * b))
                is_x.append(x_type)
    coords = np.array(data + anc)
    index = {tuple(c): k for k, c in enumerate(coords.tolist())}
    n_data = len(data)
    anc_is_x = np.array(is_x)
    stabs = []
    for k, (ax, ay) in enumerate(anc):
        sup = [index[(ax + dx, ay + dy)] for dx, dy in X_ORDER if (ax + dx, ay + dy) in index and index[(ax + dx, ay + dy)] < n_data]
        stabs.append(tuple(sorted(sup)))
    xs = [n_data + k for k in range(len(anc)) if anc_is_x[k]]
    h_layer = tuple(("H", (q,)) for q in xs)
    cx_layers = []
    for step in range(4):
        gates = []
        for k, (ax, ay) in enumerate(anc):
            q_anc = n_data + k
            dx, dy = (X_ORDER if anc_is_x[k] else Z_ORDER)[step]
            q_data = index.get((ax + dx, ay + dy))
            if q_data is None or q_data >= n_data:
                continue
            gates.append(("CX", (q_anc, q_data)) if anc_is_x[k] else ("CX", (q_data, q_anc)))
        cx_layers.append(tuple(gates))
    mr_layer = tuple(("MR", (n_data + k,)) for k in range(len(anc)))
    layers = (h_layer, *cx_layers, h_layer, mr_layer)

    # logical operators: a data row/column commuting with the other type's stabilizers
    rows = [tuple(j * d + i for i in range(d)) for j in range(d)]
    cols = [tuple(j * d + i for j in range(d)) for i in range(d)]
    x_stabs = [set(s) for k, s in enumerate(stabs) if anc_is_x[k]]
    z_stabs = [set(s) for k, s in enumerate(stabs) if not anc_is_x[k]]

    def commutes(op, group):
        return all(len(set(op) & g) % 2 == 0 for g in group)

    logical_z = next(op for op in rows + cols if commutes(op, x_stabs))
    logical_x = next(op for op in rows + cols if commutes(op, z_stabs) and len(set(op) & set(logical_z)) % 2 == 1)

    # staggered layout: nearest data-ancilla separation equals the pitch
    unit = pitch_mm / np.sqrt(2.0)
    pos = coords * unit
    pos = pos - pos.mean(axis=0) + chip_mm / 2.0
    roles = tuple(["data"] * n_data + ["ancilla"] * len(anc))
    geom = ChipGeometry(pos, np.arange(len(coords)), chip_mm, chip_mm, roles)
    return Circuit(
        d=d,
        coords=coords,
        n_data=n_data,
        anc_is_x=anc_is_x,
        stabilizers=tuple(stabs),
        layers=layers,
        round_durations=ROUND_DURATIONS,
        logical_z=logical_z,
        logical_x=logical_x,
        geometry=geom,
    )


class _Batch:
    """Compiled per-round index arrays for vectorised frame updates."""

    def __init__(self, circ: Circuit):
        self.h = []
        self.cx_c = []
        self.cx_t = []
        self.mr = []
        for layer in circ.layers:
            h = [qs[0] for op, qs in layer if op == "H"]
            c = [qs[0] for op, qs in layer if op == "CX"]
            t = [qs[1] for op, qs in layer if op == "CX"]
            m = [qs[0] for op, qs in layer if op == "MR"]
            self.h.append(np.array(h, dtype=np.int64))
            self.cx_c.append(np.array(c, dtype=np.int64))
            self.cx_t.append(np.array(t, dtype=np.int64))
            self.mr.append(np.array(m, dtype=np.int64))


def _apply_round(bx: np.ndarray, bz: np.ndarray, comp: _Batch, tau: int, meas_out: np.ndarray | None):
    h = comp.h[tau]
    if h.size:
        tmp = bx[:, h].copy()
        bx[:, h] = bz[:, h]
        bz[:, h] = tmp
    c, t = comp.cx_c[tau], comp.cx_t[tau]
    if c.size:
        bx[:, t] ^= bx[:, c]
        bz[:, c] ^= bz[:, t]
    m = comp.mr[tau]
    if m.size:
        if meas_out is not None:
            meas_out[:] = bx[:, m]
        bx[:, m] = False
        bz[:, m] = False


def run_frames(circ: Circuit, T: int, inject):
    """Propagate a batch of Pauli frames through T cycles plus final readout.

    ``inject(t, tau)`` returns ``(x_flips, z_flips)`` boolean arrays of shape
    (batch, N) to XOR into the frames after round ``tau`` of cycle ``t`` (or
    ``None`` for nothing).  Returns ``(detectors, observables)`` as bool arrays
    of shapes (batch, n_det) and (batch, 1).
    """
    comp = _Batch(circ)
    n_anc = circ.n_anc
    probe = inject(1, 1)
    batch = probe[0].shape[0] if probe is not None else inject.batch
    bx = np.zeros((batch, circ.N), dtype=bool)
    bz = np.zeros((batch, circ.N), dtype=bool)
    dets = np.zeros((batch, circ.n_detectors(T)), dtype=bool)
    prev = np.zeros((batch, n_anc), dtype=bool)
    cur = np.zeros((batch, n_anc), dtype=bool)
    for t in range(1, T + 1):
        for tau in range(1, N_ROUNDS + 1):
            _apply_round(bx, bz, comp, tau - 1, cur if tau == N_ROUNDS else None)
            flips = probe if (t, tau) == (1, 1) else inject(t, tau)
            if flips is not None:
                bx ^= flips[0]
                bz ^= flips[1]
        dets[:, (t - 1) * n_anc : t * n_anc] = cur ^ prev
        prev, cur = cur, prev
    data_flip = bx[:, : circ.n_data]
    zi = circ.z_ancilla_idx
    final = np.zeros((batch, len(zi)), dtype=bool)
    for k, a in enumerate(zi):
        sup = list(circ.stabilizers[a])
        final[:, k] = np.logical_xor.reduce(data_flip[:, sup], axis=1) ^ prev[:, a]
    dets[:, T * n_anc :] = final
    obs = np.logical_xor.reduce(data_flip[:, list(circ.logical_z)], axis=1)[:, None]
    return dets, obs


def propagate_faults(circ: Circuit, T: int, t: np.ndarray, tau: np.ndarray, q: np.ndarray, pauli: np.ndarray):
    """Detector/observable signatures of many single faults at once.

    Arrays give, per fault, the cycle (1..T), round (1..7), qubit and Pauli
    code (1=X, 2=Y, 3=Z).  Returns bool arrays (F, n_det) and (F, 1).
    """
    t = np.asarray(t)
    tau = np.asarray(tau)
    q = np.asarray(q)
    pauli = np.asarray(pauli)
    F = len(t)
    rows = np.arange(F)
    has_x = (pauli == 1) | (pauli == 2)
    has_z = (pauli == 2) | (pauli == 3)
    order = np.lexsort((tau, t))
    key_t, key_tau = t[order], tau[order]
    bounds = {}
    if F:
        change = np.flatnonzero(np.diff(key_t * 16 + key_tau)) + 1
        starts = np.concatenate([[0], change])
        ends = np.concatenate([change, [F]])
        for s, e in zip(starts, ends):
            bounds[(int(key_t[s]), int(key_tau[s]))] = order[s:e]

    def inject(tt, rr):
        idx = bounds.get((tt, rr))
        if idx is None:
            return None
        fx = np.zeros((F, circ.N), dtype=bool)
        fz = np.zeros((F, circ.N), dtype=bool)
        fx[rows[idx], q[idx]] = has_x[idx]
        fz[rows[idx], q[idx]] = has_z[idx]
        return fx, fz

    inject.batch = F
    return run_frames(circ, T, inject)


def propagate_fault(circ: Circuit, fault: PauliFault, T: int) -> DetectorPattern:
    """Signature phi(E) of a single Pauli fault."""
    if not 1 <= fault.t <= T:
        raise ValueError("fault cycle outside [1, T]")
    if fault.pauli == "I":
        return DetectorPattern(frozenset(), (0,))
    dets, obs = propagate_faults(circ, T, [fault.t], [fault.tau], [fault.q], [PAULI_CODES[fault.pauli]])
    n_anc = circ.n_anc
    flipped = set()
    for r in np.flatnonzero(dets[0]):
        if r < T * n_anc:
            flipped.add((int(r // n_anc) + 1, int(r % n_anc)))
        else:
            flipped.add((T + 1, int(circ.z_ancilla_idx[r - T * n_anc])))
    return DetectorPattern(frozenset(flipped), tuple(int(v) for v in obs[0]))


def fault_probabilities(circ: Circuit, qp_values: np.ndarray, consts=None) -> np.ndarray:
    """Per-location Pauli probabilities, shape (T, 7, N, 3) for (X, Y, Z).

    ``qp_values`` is J x T; qubit q reads site ``geometry.qubit_site[q]``.
    """
    from .noise_model import NOMINAL, pauli_px_pz

    consts = consts or NOMINAL
    x = np.asarray(qp_values)[circ.geometry.qubit_site].T  # (T, N)
    T = x.shape[0]
    out = np.empty((T, N_ROUNDS, circ.N, 3))
    cache = {}
    for k, dt in enumerate(circ.round_durations):
        if dt not in cache:
            cache[dt] = pauli_px_pz(x, dt, consts)
        px, pz = cache[dt]
        out[:, k, :, 0] = px
        out[:, k, :, 1] = px
        out[:, k, :, 2] = pz
    return out


def sample_shots(circ: Circuit, T: int, probs: np.ndarray, shots: int, seed=None):
    """Monte Carlo Pauli-frame sampling of ``shots`` independent memory runs.

    ``probs`` has shape (T, 7, N, 3) or is broadcastable to it.  Returns
    uint8 arrays (shots, n_det) and (shots, 1).
    """
    rng = np.random.default_rng(seed)
    probs = np.broadcast_to(np.asarray(probs, dtype=float), (T, N_ROUNDS, circ.N, 3))
    cum = np.cumsum(probs, axis=-1)

    def inject(t, tau):
        c = cum[t - 1, tau - 1]
        r = rng.random((shots, circ.N))
        is_x = r < c[:, 0]
        is_y = (r >= c[:, 0]) & (r < c[:, 1])
        is_z = (r >= c[:, 1]) & (r < c[:, 2])
        return is_x | is_y, is_y | is_z

    inject.batch = shots
    dets, obs = run_frames(circ, T, inject)
    return dets.astype(np.uint8), obs.astype(np.uint8)


def sample_shot(circ: Circuit, qp_traj, T: int, seed=None, consts=None) -> SyndromeShot:
    """One memory-experiment shot under QP-conditioned circuit noise."""
    if qp_traj.T < T:
        raise ValueError("trajectory shorter than T")
    probs = fault_probabilities(circ, qp_traj.values[:, :T], consts)
    dets, obs = sample_shots(circ, T, probs, 1, seed)
    return SyndromeShot(dets[0], obs[0])
