import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from fracdisp.dispersive import sup_region
from fracdisp.errors import NearSingularError
from fracdisp.numerics import FracParams, make_grid
from fracdisp.perturbed import (
    Potential,
    birman_schwinger_norm,
    born_series_sum,
    bound_states,
    build_m_matrix,
    discretize_hamiltonian,
    dump_matrix,
    free_matrix,
    free_operator_matrix,
    free_spectrum,
    lap_norm,
    lap_scaling,
    load_matrix,
    load_potential,
    parse_potential_config,
    perturbed_resolvent,
    sample_potential,
)

P = FracParams


@pytest.fixture(scope="module")
def grid2():
    return make_grid(2, 4.0, 16)


@pytest.fixture(scope="module")
def radial3():
    return make_grid(3, 8.0, 64, "radial")


class TestPotential:
    def test_zero(self, grid2):
        pot = sample_potential("gaussian-well", 0.0, 1.0, 10, grid2)
        assert pot.is_zero
        assert not np.any(pot.v)
        assert np.all(pot.U == 1)

    def test_gaussian_minimum(self):
        g = make_grid(3, 4.0, 32, "radial")
        pot = sample_potential("gaussian-well", -5.0, 1.0, 10, g)
        assert pot.samples.min() == pytest.approx(-5 * math.exp(-(g.spacing / 2) ** 2))
        assert np.argmin(pot.samples) == 0

    def test_polynomial_decay(self):
        g = make_grid(3, 8 / 3, 8, "radial")  # radii 1/3, 1, 5/3, 7/3
        pot = sample_potential("polynomial-decay", 1.0, 1.0, 5.0, g)
        assert g.radii[1] == pytest.approx(1.0)
        assert pot.samples[1] == pytest.approx(2**-2.5)

    def test_bump_support(self, grid2):
        pot = sample_potential("bump", 2.0, 1.5, 10, grid2)
        assert np.all(pot.samples[grid2.radii >= 1.5] == 0)
        assert pot.samples.max() <= 2.0

    @given(st.lists(st.floats(-10, 10), min_size=16, max_size=16))
    def test_sign_and_root(self, vals):
        g = make_grid(1, 2.0, 16)
        pot = Potential(np.array(vals), g, 2.0)
        np.testing.assert_allclose(pot.v**2, np.abs(pot.samples))
        np.testing.assert_allclose(pot.U * pot.v**2, pot.samples)
        assert pot.bound_constant >= np.max(np.abs(pot.samples)) - 1e-12

    def test_validation(self, grid2):
        with pytest.raises(ValueError):
            sample_potential("square", 1.0, 1.0, 2.0, grid2)
        with pytest.raises(ValueError):
            sample_potential("bump", 1.0, 0.0, 2.0, grid2)
        with pytest.raises(ValueError):
            Potential(np.zeros(3), grid2, 2.0)

    def test_config_file(self, tmp_path, grid2):
        path = tmp_path / "pot.cfg"
        path.write_text("# well\nkind = bump\namplitude = -2\nwidth = 1.5\nbeta = 8\n")
        pot = load_potential(path, grid2)
        assert pot.config() == {"kind": "bump", "amplitude": -2.0, "width": 1.5, "beta": 8.0}
        with pytest.raises(ValueError):
            parse_potential_config("kind = bump\n")
        with pytest.raises(ValueError):
            parse_potential_config("colour = red\n")


def test_matrix_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    path = tmp_path / "m.bin"
    dump_matrix(path, m, {"lambda": 2.0})
    back, header = load_matrix(path)
    np.testing.assert_array_equal(back, m)
    assert header["meta"]["lambda"] == 2.0
    assert header["shape"] == [5, 7]
    raw = path.read_bytes()
    assert raw[:8] == b"FDMAT001"
    # entries are little-endian (re, im) float64 pairs at the end of the file
    assert np.frombuffer(raw[-16:], "<f8")[0] == m[-1, -1].real


class TestBSOperator:
    def test_zero_potential_rejected(self, grid2):
        pot = sample_potential("gaussian-well", 0.0, 1.0, 10, grid2)
        with pytest.raises(ValueError):
            build_m_matrix(1.0, 1, pot, P(0.75, 2))

    def test_tiny_well_near_unitary(self, grid2):
        pot = sample_potential("gaussian-well", -1e-6, 1.0, 10, grid2)
        T0 = build_m_matrix(0.0, 1, pot, P(0.75, 2)).matrix
        s = linalg.svdvals(T0)
        assert s[-1] == pytest.approx(1.0, abs=1e-5)
        np.testing.assert_allclose(T0, T0.T)
        assert np.isrealobj(T0) or np.max(np.abs(T0.imag)) == 0

    def test_sign_conjugation(self, grid2):
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, grid2)
        mp = build_m_matrix(1.5, 1, pot, P(0.75, 2)).matrix
        mm = build_m_matrix(1.5, -1, pot, P(0.75, 2)).matrix
        np.testing.assert_array_equal(mm, np.conj(mp))

    def test_high_energy_decay(self, radial3):
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, radial3)
        norms = [birman_schwinger_norm(lam, pot, p) for lam in (4.0, 8.0, 16.0)]
        assert norms[0] > norms[1] > norms[2]
        assert norms[-1] < 0.5
        slope = np.polyfit(np.log([4, 8, 16]), np.log(norms), 1)[0]
        assert slope == pytest.approx(1 - 2 * p.alpha, abs=0.25)

    def test_refinement_consistent(self):
        p = P(1.25, 3)
        vals = []
        for pts in (64, 128):
            g = make_grid(3, 8.0, pts, "radial")
            pot = sample_potential("gaussian-well", -1.0, 1.0, 10, g)
            vals.append(birman_schwinger_norm(2.0, pot, p))
        assert abs(vals[1] - vals[0]) < 0.02 * vals[1]


class TestPerturbedResolvent:
    def test_zero_potential_is_free(self, grid2):
        pot = sample_potential("gaussian-well", 0.0, 1.0, 10, grid2)
        np.testing.assert_array_equal(perturbed_resolvent(1.0, 1, pot, P(0.75, 2)), free_matrix(P(0.75, 2), grid2, 1.0))

    def test_sign_conjugation(self, grid2):
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, grid2)
        rp = perturbed_resolvent(1.2, 1, pot, P(0.75, 2))
        rm = perturbed_resolvent(1.2, -1, pot, P(0.75, 2))
        np.testing.assert_allclose(rm, np.conj(rp), rtol=1e-12, atol=1e-14)

    def test_symmetric_identity_solves_resolvent_equation(self, radial3):
        """R_V = R_0 - R_0 V R_V (second resolvent identity)."""
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -2.0, 1.0, 10, radial3)
        R0 = free_matrix(p, radial3, 1.5)
        RV = perturbed_resolvent(1.5, 1, pot, p)
        rhs = R0 - (R0 * (pot.samples * radial3.weights)[None, :]) @ RV
        assert np.max(np.abs(RV - rhs)) < 1e-10 * np.max(np.abs(RV))

    def test_near_singular_reported(self, radial3):
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, radial3)
        with pytest.raises(NearSingularError) as info:
            perturbed_resolvent(1.0, 1, pot, p, cond_max=1.0)
        assert "sigma_min" in info.value.details

    @pytest.mark.slow
    def test_eigenbasis_oracle(self):
        """Off the axis, R_V matches (H_disc - z)^{-1} on the interior of the box."""
        p = P(0.75, 2)
        g = make_grid(2, 8.0, 48)
        pot = sample_potential("gaussian-well", -0.5, 1.0, 100, g)
        lam, eps = 1.0, 1.0
        R = perturbed_resolvent(lam, 1, pot, p, eps=eps)
        sw = np.sqrt(g.weights)
        A = sw[:, None] * R * sw[None, :]
        H = discretize_hamiltonian(p, pot)
        B = np.linalg.inv(H.matrix - (lam**1.5 + 1j * eps) * np.eye(g.size))
        sub = np.ix_(*(2 * [sup_region(g, 0.5)]))
        assert np.linalg.norm(A[sub] - B[sub], 2) < 0.02 * np.linalg.norm(B[sub], 2)


class TestBorn:
    def test_zeroth_term_is_free(self, radial3):
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, radial3)
        res = born_series_sum(0, 2.0, 1, pot, p)
        np.testing.assert_array_equal(res.matrix, free_matrix(p, radial3, 2.0))
        assert len(res.term_norms) == 1

    def test_geometric_convergence(self, radial3):
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, radial3)
        lam = 4.0
        q = birman_schwinger_norm(lam, pot, p)
        assert q < 0.5
        RV = perturbed_resolvent(lam, 1, pot, p)
        errs = [np.linalg.norm(RV - born_series_sum(K, lam, 1, pot, p).matrix) for K in range(1, 5)]
        assert all(e1 / e2 > 3 for e1, e2 in zip(errs, errs[1:]))

    def test_divergence_flagged(self, radial3):
        p = P(1.25, 3)
        pot = sample_potential("gaussian-well", -200.0, 1.0, 10, radial3)
        res = born_series_sum(12, 0.5, 1, pot, p, growth_guard=1e3)
        assert res.diverged

    def test_depth_guard(self, radial3):
        pot = sample_potential("gaussian-well", -1.0, 1.0, 10, radial3)
        with pytest.raises(ValueError):
            born_series_sum(13, 1.0, 1, pot, P(1.25, 3))


class TestHamiltonian:
    def test_free_eigenvalues(self, grid2):
        p = P(0.75, 2)
        H = discretize_hamiltonian(p, sample_potential("gaussian-well", 0.0, 1.0, 10, grid2))
        E = np.linalg.eigvalsh(H.matrix)
        np.testing.assert_allclose(E, np.sort(free_spectrum(p, grid2).ravel()), atol=1e-10)
        assert np.max(np.abs(H.matrix - H.matrix.conj().T)) <= 1e-10

    def test_laplacian_is_spectral_second_derivative(self):
        g = make_grid(1, math.pi, 32)
        H0 = free_operator_matrix(P(1, 1), g)
        x = g.nodes[:, 0]
        f = np.sin(3 * x) + np.cos(5 * x)
        np.testing.assert_allclose(H0 @ f, 9 * np.sin(3 * x) + 25 * np.cos(5 * x), atol=1e-10)

    def test_radial_sine_spectrum(self):
        g = make_grid(3, 10.0, 64, "radial")
        H = discretize_hamiltonian(P(0.75, 3), sample_potential("gaussian-well", 0.0, 1.0, 10, g))
        E = np.linalg.eigvalsh(H.matrix)
        k = math.pi * np.arange(1, g.size + 1) / 10.0
        np.testing.assert_allclose(E, k**1.5, rtol=1e-10)

    def test_zero_potential_no_bound_states(self, grid2):
        H = discretize_hamiltonian(P(0.75, 2), sample_potential("gaussian-well", 0.0, 1.0, 10, grid2))
        bs, Pac = bound_states(H)
        assert len(bs) == 0
        np.testing.assert_allclose(Pac, np.eye(grid2.size))

    def test_deep_well_negative_eigenvalue(self):
        g = make_grid(2, 6.0, 24)
        H = discretize_hamiltonian(P(0.75, 2), sample_potential("gaussian-well", -5.0, 1.0, 100, g))
        assert np.linalg.eigvalsh(H.matrix)[0] < 0

    def test_deep_well_bound_state(self):
        # the continuum tolerance is 10x the lowest free level, so the box must be wide
        g = make_grid(2, 12.0, 32)
        p = P(0.75, 2)
        H = discretize_hamiltonian(p, sample_potential("gaussian-well", -5.0, 1.0, 100, g))
        bs, Pac = bound_states(H)
        assert len(bs) >= 1 and bs.eigenvalues[0] < -H.continuum_tolerance
        assert np.max(np.abs(Pac @ Pac - Pac)) < 1e-8
        assert np.max(np.abs(Pac @ H.matrix - H.matrix @ Pac)) < 1e-8
        psi = np.abs(bs.eigenvectors[:, 0])
        assert psi[np.argmin(g.radii)] > 20 * psi[np.argmax(g.radii)]
        assert np.sum(g.weights * psi**2) == pytest.approx(1.0)
        res = H.matrix @ (np.sqrt(g.weights) * bs.eigenvectors[:, 0]) - bs.eigenvalues[0] * np.sqrt(g.weights) * bs.eigenvectors[:, 0]
        assert np.linalg.norm(res) < 1e-8

    def test_radial_ground_state_against_finite_differences(self):
        g = make_grid(3, 20.0, 400, "radial")
        pot = sample_potential("gaussian-well", -5.0, 1.0, 100, g)
        bs, _ = bound_states(discretize_hamiltonian(P(1, 3), pot))
        # -u'' + V u = E u, u(0) = 0, second-order differences on a fine mesh
        m = 20000
        h = 20.0 / (m + 1)
        r = h * np.arange(1, m + 1)
        d = 2 / h**2 - 5 * np.exp(-r**2)
        e = np.full(m - 1, -1 / h**2)
        E_fd = linalg.eigh_tridiagonal(d, e, select="i", select_range=(0, 0))[0][0]
        assert bs.eigenvalues[0] == pytest.approx(E_fd, rel=1e-4)

    def test_rejects(self):
        g3 = make_grid(3, 2.0, 8)
        with pytest.raises(ValueError):
            discretize_hamiltonian(P(1, 3), sample_potential("gaussian-well", -1.0, 1.0, 10, g3))


class TestLAP:
    def test_free_scaling(self):
        g = make_grid(3, 6.0, 192, "radial")
        p = P(1.25, 3)
        fit = lap_scaling(np.geomspace(2, 16, 4), 0.55, 0, None, p, g)
        assert fit.exponent == pytest.approx(1 - 2 * p.alpha, abs=0.15)

    def test_derivative_norm_finite(self, radial3):
        pot = sample_potential("gaussian-well", -0.5, 1.0, 10, radial3)
        v = lap_norm(3.0, 1.55, 1, pot, P(1.25, 3), radial3)
        assert np.isfinite(v) and v > 0

    def test_preconditions(self, radial3):
        p = P(1.25, 3)
        with pytest.raises(ValueError):
            lap_scaling([1.0, 4.0], 0.55, 0, None, p, radial3)
        with pytest.raises(ValueError):
            lap_scaling([2.0, 4.0], 0.5, 0, None, p, radial3)
        pot = sample_potential("gaussian-well", -0.5, 1.0, 2.0, radial3)
        with pytest.raises(ValueError):
            lap_scaling([2.0, 4.0], 1.6, 1, pot, p, radial3)
