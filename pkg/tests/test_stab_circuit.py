import numpy as np
import pytest

from oracles import chp_signature
from qpdec.chip_qp import QpTrajectory
from qpdec.stab_circuit import (
    N_ROUNDS,
    ROUND_DURATIONS,
    PauliFault,
    build_surface_code,
    fault_probabilities,
    propagate_fault,
    propagate_faults,
    sample_shot,
    sample_shots,
)


@pytest.fixture(scope="module")
def circ():
    return build_surface_code(3)


class TestLayout:
    @pytest.mark.parametrize("d", [3, 5, 7])
    def test_counts(self, d):
        c = build_surface_code(d)
        assert c.n_data == d * d and c.n_anc == d * d - 1 and c.N == 2 * d * d - 1

    def test_distance_seven(self):
        c = build_surface_code(7)
        assert c.N == 97 and c.n_anc == 48

    @pytest.mark.parametrize("d", [2, 4, 1])
    def test_rejects_bad_distance(self, d):
        with pytest.raises(ValueError):
            build_surface_code(d)

    def test_round_structure(self, circ):
        assert len(circ.layers) == N_ROUNDS == 7
        assert {op for op, _ in circ.layers[0]} == {"H"} and {op for op, _ in circ.layers[5]} == {"H"}
        for layer in circ.layers[1:5]:
            assert {op for op, _ in layer} == {"CX"}
            touched = [q for _, qs in layer for q in qs]
            assert len(touched) == len(set(touched))
        assert {op for op, _ in circ.layers[6]} == {"MR"}

    def test_durations(self, circ):
        assert circ.round_durations == ROUND_DURATIONS
        assert sum(ROUND_DURATIONS) == pytest.approx(921e-9)

    def test_stabilizer_weights(self):
        c = build_surface_code(5)
        weights = sorted(len(s) for s in c.stabilizers)
        assert weights.count(2) == 2 * (5 - 1) and weights.count(4) == (5 - 1) ** 2

    def test_logicals_commute_with_checks(self, circ):
        for k, sup in enumerate(circ.stabilizers):
            other = circ.logical_z if circ.anc_is_x[k] else circ.logical_x
            assert len(set(sup) & set(other)) % 2 == 0
        assert len(set(circ.logical_x) & set(circ.logical_z)) % 2 == 1

    def test_gate_list_format(self, circ):
        lines = circ.gate_list(2)
        assert lines[0].split()[:3] == ["1", "1", "H"]
        assert lines[-1].startswith("3 0 M ")
        n_cx = sum(len(s) for s in circ.stabilizers)
        assert sum(1 for ln in lines if " CX " in ln) == 2 * n_cx


class TestPropagation:
    def test_identity_is_empty(self, circ):
        pat = propagate_fault(circ, PauliFault(2, 3, 0, "I"), 4)
        assert pat.detectors == frozenset() and pat.observables == (0,)

    def test_noiseless_run_is_silent(self, circ):
        dets, obs = sample_shots(circ, 5, 0.0, 10, seed=0)
        assert not dets.any() and not obs.any()

    def test_measurement_flip_on_z_ancilla(self, circ):
        T = 4
        for a in circ.z_ancilla_idx:
            if len(circ.stabilizers[a]) != 4:
                continue
            pat = propagate_fault(circ, PauliFault(2, 6, circ.n_data + int(a), "X"), T)
            assert pat.detectors == frozenset({(2, int(a)), (3, int(a))})

    def test_z_on_bulk_data_after_readout_round(self, circ):
        centre = 4
        pat = propagate_fault(circ, PauliFault(2, 7, centre, "Z"), 4)
        x_checks = {k for k, s in enumerate(circ.stabilizers) if circ.anc_is_x[k] and centre in s}
        assert len(x_checks) == 2
        assert pat.detectors == frozenset((3, k) for k in x_checks)

    def test_support_in_two_consecutive_cycles(self, circ):
        T = 4
        F = T * 7 * circ.N * 3
        t, tau, q, p = np.meshgrid(np.arange(1, T + 1), np.arange(1, 8), np.arange(circ.N), [1, 2, 3], indexing="ij")
        dets, _ = propagate_faults(circ, T, t.ravel(), tau.ravel(), q.ravel(), p.ravel())
        block = circ.detector_block(T)
        for f in range(F):
            cycles = set(block[dets[f]].tolist())
            # a fault after the reset round acts at the start of the next cycle
            tt = int(t.ravel()[f]) + (int(tau.ravel()[f]) == 7)
            assert cycles <= {tt, tt + 1}

    def test_linearity(self, circ):
        rng = np.random.default_rng(3)
        T = 3
        for _ in range(20):
            f1 = PauliFault(int(rng.integers(1, T + 1)), int(rng.integers(1, 8)), int(rng.integers(circ.N)), "XYZ"[rng.integers(3)])
            f2 = PauliFault(int(rng.integers(1, T + 1)), int(rng.integers(1, 8)), int(rng.integers(circ.N)), "XYZ"[rng.integers(3)])
            p1, p2 = propagate_fault(circ, f1, T), propagate_fault(circ, f2, T)
            codes = {"X": 1, "Y": 2, "Z": 3}
            both = {}

            def inject(tt, rr, faults=(f1, f2)):
                fx = np.zeros((1, circ.N), bool)
                fz = np.zeros((1, circ.N), bool)
                hit = False
                for f in faults:
                    if (f.t, f.tau) == (tt, rr):
                        hit = True
                        fx[0, f.q] ^= codes[f.pauli] in (1, 2)
                        fz[0, f.q] ^= codes[f.pauli] in (2, 3)
                return (fx, fz) if hit else None

            inject.batch = 1
            from qpdec.stab_circuit import run_frames

            dets, obs = run_frames(circ, T, inject)
            n_anc = circ.n_anc
            got = set()
            for r in np.flatnonzero(dets[0]):
                got.add((int(r // n_anc) + 1, int(r % n_anc)) if r < T * n_anc else (T + 1, int(circ.z_ancilla_idx[r - T * n_anc])))
            assert got == set(p1.detectors ^ p2.detectors)
            assert int(obs[0, 0]) == p1.observables[0] ^ p2.observables[0]

    def test_matches_tableau_simulator(self, circ):
        T = 2
        rng = np.random.default_rng(11)
        for _ in range(60):
            f = PauliFault(int(rng.integers(1, T + 1)), int(rng.integers(1, 8)), int(rng.integers(circ.N)), "XYZ"[rng.integers(3)])
            pat = propagate_fault(circ, f, T)
            sup, obs = chp_signature(circ, T, f)
            assert pat.detectors == sup and pat.observables == obs

    def test_pattern_lines(self, circ):
        pat = propagate_fault(circ, PauliFault(1, 7, 4, "Z"), 3)
        for ln in pat.lines():
            t, i = map(int, ln.split())
            assert (t, i) in pat.detectors

    def test_fault_validation(self, circ):
        with pytest.raises(ValueError):
            PauliFault(1, 8, 0, "X")
        with pytest.raises(ValueError):
            PauliFault(1, 1, 0, "W")
        with pytest.raises(ValueError):
            propagate_fault(circ, PauliFault(5, 1, 0, "X"), 4)


class TestSampling:
    def test_zero_duration_limit_is_silent(self, circ):
        traj = QpTrajectory(np.full((circ.N, 4), 1e-10))
        probs = fault_probabilities(circ, traj.values) * 0.0
        dets, obs = sample_shots(circ, 4, probs, 50, seed=1)
        assert not dets.any() and not obs.any()

    def test_single_shot(self, circ):
        traj = QpTrajectory(np.full((circ.N, 3), 1e-6))
        shot = sample_shot(circ, traj, 3, seed=2)
        assert shot.detectors.shape == (circ.n_detectors(3),) and shot.observables.shape == (1,)

    def test_seed_reproducible(self, circ):
        a = sample_shots(circ, 3, 1e-3, 20, seed=5)
        b = sample_shots(circ, 3, 1e-3, 20, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_detector_rates_match_exact_union(self, circ):
        T, shots = 3, 100_000
        x = np.full((circ.N, T), 1.0)
        probs = fault_probabilities(circ, x * 1e-8)
        probs = np.full_like(probs, 1e-3)
        t, tau, q, p = np.meshgrid(np.arange(1, T + 1), np.arange(1, 8), np.arange(circ.N), [1, 2, 3], indexing="ij")
        sig, _ = propagate_faults(circ, T, t.ravel(), tau.ravel(), q.ravel(), p.ravel())
        # per location the three Paulis are exclusive; locations are independent
        per_loc = sig.reshape(T * 7 * circ.N, 3, -1).astype(float).sum(axis=1) * 1e-3
        exact = 0.5 * (1 - np.prod(1 - 2 * per_loc, axis=0))
        dets, _ = sample_shots(circ, T, probs, shots, seed=9)
        emp = dets.mean(axis=0)
        sigma = np.sqrt(exact * (1 - exact) / shots)
        assert np.all(np.abs(emp - exact) < 3 * sigma + 1e-12)

    def test_bulk_translation_symmetry(self):
        c = build_surface_code(5)
        T, shots = 3, 20000
        dets, _ = sample_shots(c, T, 2e-3, shots, seed=4)
        rate = dets[:, c.n_anc : 2 * c.n_anc].mean(axis=0)  # middle cycle
        coords = c.coords[c.n_data :]
        bulk = [k for k, s in enumerate(c.stabilizers) if len(s) == 4 and not c.anc_is_x[k]]
        inner = [k for k in bulk if 2 < coords[k, 0] < 8 and 2 < coords[k, 1] < 8]
        assert len(inner) >= 2
        r = rate[inner]
        sigma = np.sqrt(r.mean() * (1 - r.mean()) / shots)
        assert r.max() - r.min() < 6 * sigma
