import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from qpdec.chip_qp import (
    X_FLOOR,
    ChipGeometry,
    DiffusionParams,
    InjectionEvent,
    QpTrajectory,
    build_laplacian,
    grid_geometry,
    injection_vector,
    read_geometry,
    read_trajectory,
    sample_at_sites,
    simulate_qp,
    spectral_radius,
    transition_matrix,
    write_geometry,
    write_trajectory,
)
from qpdec.stab_circuit import build_surface_code


def two_sites():
    return ChipGeometry(np.array([[10.0, 10.0], [11.0, 10.0]]), np.array([0, 1]))


class TestGeometry:
    def test_bounds_and_injectivity(self):
        with pytest.raises(ValueError):
            ChipGeometry(np.array([[41.0, 1.0]]), np.array([0]))
        with pytest.raises(ValueError):
            ChipGeometry(np.array([[1.0, 1.0], [2.0, 2.0]]), np.array([0, 0]))

    def test_surface_code_layout(self):
        g = build_surface_code(3).geometry
        assert g.J == g.N == 17
        d = g.distances()
        nearest = np.sort(d + np.eye(g.J) * 1e9, axis=1)[:, 0]
        assert np.allclose(nearest, 2.5)
        assert np.allclose(g.sites.mean(0), [20.0, 20.0], atol=2.5)

    def test_geometry_file_round_trip(self, tmp_path):
        g = build_surface_code(3).geometry
        write_geometry(g, tmp_path / "geo.txt")
        back = read_geometry(tmp_path / "geo.txt")
        assert np.array_equal(back.sites, g.sites)
        assert back.roles == g.roles
        assert np.array_equal(back.qubit_site, g.qubit_site)


class TestLaplacian:
    def test_single_site(self):
        g = ChipGeometry(np.array([[5.0, 5.0]]), np.array([0]))
        diag = []
        L = build_laplacian(g, 4.0, 2.5, diag)
        assert L.toarray().tolist() == [[0.0]]
        assert diag == [0]

    def test_two_sites(self):
        L = build_laplacian(two_sites(), 4.0, 2.5).toarray()
        assert np.allclose(L, [[1, -1], [-1, 1]])

    def test_rows_sum_to_zero(self):
        g = grid_geometry(8, 8)
        L = build_laplacian(g, 6.0, 2.5)
        assert np.allclose(np.asarray(L.sum(axis=1)).ravel(), 0, atol=1e-12)
        pattern = (L != 0).astype(int)
        assert (pattern != pattern.T).nnz == 0

    def test_isolated_rows_are_zero(self):
        g = ChipGeometry(np.array([[1.0, 1.0], [2.0, 1.0], [30.0, 30.0]]), np.array([0, 1, 2]))
        diag = []
        L = build_laplacian(g, 4.0, 2.5, diag).toarray()
        assert diag == [2] and np.all(L[2] == 0)

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_laplacian(two_sites(), 0.0, 1.0)


class TestTransition:
    def test_identity(self):
        L = build_laplacian(two_sites(), 4.0, 2.5)
        A = transition_matrix(L, DiffusionParams(kappa=0.0, s=0.0))
        assert np.array_equal(A.toarray(), np.eye(2))

    def test_two_site_mixing(self):
        L = build_laplacian(two_sites(), 4.0, 2.5)
        A = transition_matrix(L, DiffusionParams(kappa=0.5, s=0.0)).toarray()
        assert np.allclose(A, 0.5)

    @given(st.floats(0.0, 0.7), st.floats(0.0, 0.5))
    @settings(max_examples=25, deadline=None)
    def test_uniform_field_eigenvector(self, kappa, s):
        L = build_laplacian(build_surface_code(3).geometry, 4.0, 2.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            A = transition_matrix(L, DiffusionParams(kappa=kappa, s=s))
        assert np.allclose(A @ np.ones(17), 1 - s)

    @pytest.mark.parametrize("d", [3, 7])
    def test_spectral_radius_bounded(self, d):
        L = build_laplacian(build_surface_code(d).geometry, 4.0, 2.5)
        for kappa in (0.0, 0.35, 0.7):
            for s in (0.0, 0.25, 0.5):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    A = transition_matrix(L, DiffusionParams(kappa=kappa, s=s))
                assert spectral_radius(A) <= 1.0 + 1e-9

    def test_coarse_step_warns(self):
        L = build_laplacian(two_sites(), 4.0, 2.5)
        with pytest.warns(RuntimeWarning):
            transition_matrix(L, DiffusionParams(kappa=0.9, s=0.5))


class TestSimulate:
    def test_uniform_decay(self):
        g = build_surface_code(3).geometry
        p = DiffusionParams(kappa=0.3, s=0.2)
        tr = simulate_qp(g, p, [], 12, x0=1e-8)
        t = np.arange(1, 13)
        assert np.allclose(tr.values, np.maximum(0.8**t * 1e-8, X_FLOOR)[None, :], rtol=1e-12)

    def test_scalar_injection(self):
        g = ChipGeometry(np.array([[1.0, 1.0]]), np.array([0]))
        p = DiffusionParams(kappa=0.0, s=0.1, gamma=1.0)
        tr = simulate_qp(g, p, [InjectionEvent(1, 0, 1.0, 1.0)], 6, x0=0.0, floor=1e-30)
        assert np.allclose(tr.values[0], 0.9 ** np.arange(6))

    def test_nonlinear_reduces_to_linear(self):
        g = build_surface_code(3).geometry
        events = [InjectionEvent(2, 4, 50.0, 2.0)]
        p = DiffusionParams(kappa=0.2, s=0.1)
        lin = simulate_qp(g, p, events, 10, mode="linear", x0=1e-8)
        non = simulate_qp(g, p, events, 10, mode="nonlinear", x0=1e-8)
        assert np.allclose(lin.values, non.values, rtol=1e-12)

    def test_recombination_lowers_density(self):
        g = build_surface_code(3).geometry
        events = [InjectionEvent(1, 4, 1000.0, 2.0)]
        base = simulate_qp(g, DiffusionParams(s=0.1), events, 8, mode="nonlinear", substeps=4)
        rec = simulate_qp(g, DiffusionParams(s=0.1, r=1e4), events, 8, mode="nonlinear", substeps=4)
        assert np.all(rec.values <= base.values + 1e-18)
        assert rec.values.max() < base.values.max()

    @given(st.floats(0.0, 0.7), st.floats(0.0, 0.5))
    @settings(max_examples=20, deadline=None)
    def test_floor_finite_and_monotone(self, kappa, s):
        g = build_surface_code(3).geometry
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = simulate_qp(g, DiffusionParams(kappa=kappa, s=s), [], 15, x0=1e-8)
        assert np.all(np.isfinite(tr.values)) and np.all(tr.values >= X_FLOOR)
        assert np.all(np.diff(tr.values, axis=1) <= 1e-14 * tr.values[:, 1:])

    def test_background_holds_baseline(self):
        g = build_surface_code(3).geometry
        tr = simulate_qp(g, DiffusionParams(kappa=0.1, s=0.3), [], 20, x0=1e-8, background=1e-8)
        assert np.allclose(tr.values, 1e-8, rtol=1e-12)

    def test_injection_rounding_half_up(self):
        g = ChipGeometry(np.array([[1.0, 1.0], [2.0, 1.0]]), np.array([0, 1]))
        # second site gets 3 * exp(-1/2) = 1.82 -> 2
        c = injection_vector(g, InjectionEvent(1, 0, 3.0, 1.0))
        assert c.tolist() == [3.0, 2.0]

    def test_burst_peaks_at_injection_site(self):
        g = build_surface_code(3).geometry
        tr = simulate_qp(g, DiffusionParams(kappa=0.1), [InjectionEvent(3, 4, 300.0, 2.0)], 10, x0=1e-8)
        assert np.argmax(tr.values[:, 2]) == 4
        assert np.all(tr.values[:, :2] < 1e-8)

    def test_reproducible_process_noise(self):
        g = build_surface_code(3).geometry
        a = simulate_qp(g, DiffusionParams(), [], 5, seed=4, x0=1e-8, process_noise=0.3)
        b = simulate_qp(g, DiffusionParams(), [], 5, seed=4, x0=1e-8, process_noise=0.3)
        assert np.array_equal(a.values, b.values)

    def test_rejections(self):
        g = build_surface_code(3).geometry
        with pytest.raises(ValueError):
            simulate_qp(g, DiffusionParams(), [], 0)
        with pytest.raises(ValueError):
            InjectionEvent(1, 0, -1.0)
        with pytest.raises(ValueError):
            simulate_qp(g, DiffusionParams(), [InjectionEvent(1, 99, 1.0)], 3)

    def test_fine_grid_sampling(self):
        fine = grid_geometry(32, 32)
        qubits = build_surface_code(3).geometry
        tr = simulate_qp(fine, DiffusionParams(), [InjectionEvent(1, 528, 100.0, 2.0)], 3, x0=1e-8)
        sub = sample_at_sites(tr, fine, qubits)
        assert sub.values.shape == (17, 3)


class TestTrajectoryFiles:
    def test_text_round_trip(self, tmp_path):
        tr = QpTrajectory(np.random.default_rng(0).uniform(1e-9, 1e-5, (17, 6)))
        write_trajectory(tr, tmp_path / "x.txt")
        head = (tmp_path / "x.txt").read_text().splitlines()[0].split()
        assert head[:2] == ["17", "6"]
        back = read_trajectory(tmp_path / "x.txt")
        assert np.array_equal(back.values, tr.values) and back.cycle_duration == tr.cycle_duration

    def test_binary_round_trip(self, tmp_path):
        tr = QpTrajectory(np.random.default_rng(1).uniform(1e-9, 1e-5, (5, 4)))
        write_trajectory(tr, tmp_path / "x.bin", binary=True)
        assert (tmp_path / "x.bin.json").exists()
        assert np.array_equal(read_trajectory(tmp_path / "x.bin").values, tr.values)

    def test_positivity(self):
        with pytest.raises(ValueError):
            QpTrajectory(np.zeros((2, 2)))
