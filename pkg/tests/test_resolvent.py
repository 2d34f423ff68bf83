import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdisp.errors import ConvergenceError
from fracdisp.numerics import FracParams
from fracdisp.resolvent import (
    KernelProfile,
    SpectralPoint,
    central_weights,
    extract_F,
    extract_Fpm,
    free_resolvent_kernel,
    j_correction,
    jump_closed_form,
    kernel_values,
    low_energy_error,
    normalized_jump,
    riesz_constant,
    riesz_gamma_constant,
    spectral_measure_kernel,
    symbol_decomposition,
    tail_fourier_bound,
    unit_F,
    unit_kernel_contour,
    unit_kernel_decomposition,
    unit_remainder,
    unit_remainder_fast,
    verify_derivative_bounds,
)

P = FracParams


class TestClosedForms:
    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_helmholtz_3d(self, lam):
        r = np.geomspace(0.1, 20, 40)
        prof = free_resolvent_kernel(SpectralPoint(lam), P(1, 3), r)
        exact = np.exp(1j * lam * r) / (4 * math.pi * r)
        assert np.max(np.abs(prof.values / exact - 1)) < 1e-6

    def test_helmholtz_1d(self):
        lam = 1.5
        r = np.linspace(0.1, 10, 30)
        prof = free_resolvent_kernel(SpectralPoint(lam), P(1, 1), r)
        np.testing.assert_allclose(prof.values, 1j * np.exp(1j * lam * r) / (2 * lam), rtol=1e-6)

    def test_minus_sign_is_conjugate(self):
        r = np.linspace(0.2, 5, 12)
        p = free_resolvent_kernel(SpectralPoint(1.3, 0, 1), P(0.75, 2), r)
        m = free_resolvent_kernel(SpectralPoint(1.3, 0, -1), P(0.75, 2), r)
        np.testing.assert_allclose(m.values, np.conj(p.values), rtol=1e-10)

    def test_off_axis_laplacian(self):
        lam, eps = 1.0, 0.3
        r = np.linspace(0.2, 6, 15)
        prof = free_resolvent_kernel(SpectralPoint(lam, eps), P(1, 3), r)
        k = np.sqrt(lam**2 + 1j * eps)
        np.testing.assert_allclose(prof.values, np.exp(1j * k * r) / (4 * math.pi * r), rtol=1e-8)

    def test_direct_boundary_matches_ladder(self):
        r = np.linspace(0.3, 8, 10)
        a = free_resolvent_kernel(SpectralPoint(1.0), P(1.25, 3), r, boundary="direct")
        b = free_resolvent_kernel(SpectralPoint(1.0), P(1.25, 3), r, boundary="ladder")
        assert np.max(np.abs(a.values - b.values)) / np.max(np.abs(a.values)) < 1e-6

    def test_F_of_laplacian_is_constant(self):
        r = np.linspace(0.2, 10, 12)
        F = extract_F(free_resolvent_kernel(SpectralPoint(1.0), P(1, 3), r))
        np.testing.assert_allclose(F.values, 1 / (4 * math.pi), rtol=1e-6)
        np.testing.assert_allclose(unit_F(r, P(1, 3)), 1 / (4 * math.pi), rtol=1e-8)


@pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3), P(0.5, 3), P(0.9, 2)])
def test_contour_and_decomposition_agree(params):
    rho = np.geomspace(0.02, 50, 12)
    c = unit_kernel_contour(rho, params)
    d = unit_kernel_decomposition(rho, params)
    assert np.max(np.abs(c - d) / np.abs(c)) < 1e-6


@pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3)])
def test_remainder_spline_matches_quadrature(params):
    rho = np.geomspace(0.01, 80, 17)
    fast = unit_remainder_fast(rho, params)
    slow = unit_remainder(rho, params).real
    scale = np.abs(unit_kernel_contour(rho, params))
    assert np.max(np.abs(fast - slow) / scale) < 5e-6


@given(st.floats(0.3, 3.0), st.floats(0.3, 4.0))
@settings(max_examples=12, deadline=None)
def test_scaling_law(mu, r):
    """R(mu^{2a} w)(r) = mu^{n - 2a} R(w)(mu r)."""
    params = P(0.75, 2)
    lhs = kernel_values(params, [r], lam=mu)[0]
    rhs = mu ** (params.n - 2 * params.alpha) * kernel_values(params, [mu * r], lam=1.0)[0]
    assert abs(lhs - rhs) <= 1e-9 * abs(rhs)


class TestJump:
    @pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3)])
    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_ladder_matches_bessel_form(self, params, lam):
        r = np.linspace(0.1, 12, 30)
        prof = spectral_measure_kernel(lam, params, r)
        assert prof.meta["fit_disagreement"] < 1e-5
        assert prof.meta["c_numeric_re"] == pytest.approx(1 / params.alpha, rel=1e-5)
        assert abs(prof.meta["c_numeric_im"]) < 1e-5

    def test_laplacian_closed_forms(self):
        lam, r = 1.7, np.linspace(0.1, 9, 20)
        np.testing.assert_allclose(jump_closed_form(lam, r, P(1, 3)), 2j * np.sin(lam * r) / (4 * math.pi * r),
                                   rtol=1e-12)
        np.testing.assert_allclose(jump_closed_form(lam, r, P(1, 1)), 1j * np.cos(lam * r) / lam, rtol=1e-12)

    @pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3), P(0.5, 3)])
    def test_finite_at_origin(self, params):
        v = normalized_jump(np.array([1e-8, 1e-4]), params)
        assert np.all(np.isfinite(v))
        assert abs(v[0] - v[1]) < 1e-6 * abs(v[0])

    @pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3)])
    def test_Fpm_reconstruct_jump(self, params):
        rho = np.geomspace(0.01, 100, 60)
        fp, fm = extract_Fpm(rho, params)
        recon = np.exp(1j * rho) * fp + np.exp(-1j * rho) * fm
        np.testing.assert_allclose(recon, normalized_jump(rho, params), rtol=1e-12, atol=1e-300)

    def test_Fplus_decay_laplacian(self):
        rho = np.geomspace(1, 100, 20)
        fp, _ = extract_Fpm(rho, P(1, 3))
        assert np.all(np.abs(fp) * rho < 0.1)


class TestBounds:
    @pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3)])
    @pytest.mark.parametrize("kind,N", [("F", 0), ("F", 1), ("F", 2), ("F+", 0), ("F+", 1), ("F-", 0), ("F-", 1)])
    def test_suites_pass(self, params, kind, N):
        rep = verify_derivative_bounds(kind, N, params)
        assert rep.passed, rep.to_dict()

    def test_laplacian_constant_ratio(self):
        rep = verify_derivative_bounds("F", 0, P(1, 3))
        assert rep.passed
        assert rep.sup_ratio == pytest.approx(1 / (4 * math.pi), rel=1e-6)

    def test_rejects_large_N(self):
        with pytest.raises(ValueError):
            verify_derivative_bounds("F", 5, P(0.75, 2))
        with pytest.raises(ValueError):
            verify_derivative_bounds("G", 0, P(0.75, 2))

    def test_central_weights(self):
        offs, w = central_weights(2)
        x = 0.3
        h = 1e-3
        assert np.dot(w, np.sin(x + offs * h)) / h**2 == pytest.approx(-math.sin(x), rel=1e-5)

    @pytest.mark.slow
    @pytest.mark.parametrize("piece", ["tail", "ctr"])
    def test_symbol_piece_bounds(self, piece):
        assert tail_fourier_bound(0, P(0.75, 2), piece).passed


class TestLowEnergy:
    def test_riesz_constant_laplacian(self):
        assert riesz_gamma_constant(P(1, 3)) == pytest.approx(1 / (4 * math.pi))
        rk = riesz_constant(P(1, 3))
        assert rk.C_alpha == pytest.approx(1 / (4 * math.pi), rel=1e-4)

    @pytest.mark.parametrize("params", [P(0.75, 2), P(1.25, 3), P(1, 5), P(0.5, 3)])
    def test_numeric_matches_gamma_formula(self, params):
        rk = riesz_constant(params)
        assert rk.C_alpha == pytest.approx(rk.gamma_formula, rel=1e-4)

    def test_rejects_when_not_regular(self):
        with pytest.raises(ValueError):
            riesz_constant(P(1, 2))

    def test_error_vanishes(self):
        p = P(1.25, 3)
        rk = riesz_constant(p)
        e = [abs(low_energy_error(lam, 1.0, p, rk).E_value) for lam in (1e-2, 1e-3, 1e-4)]
        assert e[0] > e[1] > e[2]
        with pytest.raises(ValueError):
            low_energy_error(2.0, 1.0, p, rk)

    def test_lambda_exponent(self):
        p = P(1.25, 3)
        rk = riesz_constant(p)
        lams = np.geomspace(1e-4, 0.5, 12)
        E = [abs(low_energy_error(l, 1.0, p, rk).E_value) for l in lams]
        assert np.polyfit(np.log(lams), np.log(E), 1)[0] == pytest.approx(0.5, abs=0.1)

    def test_r_exponent_subcritical(self):
        p = P(0.5, 3)
        rk = riesz_constant(p)
        rs = np.geomspace(0.01, 0.1, 10)
        E = [abs(low_energy_error(1e-3, r, p, rk).E_value) for r in rs]
        assert np.polyfit(np.log(rs), np.log(E), 1)[0] == pytest.approx(-1.0, abs=0.15)


class TestSymbol:
    def test_pieces_sum(self):
        xi = np.linspace(0.01, 6, 200)
        z = np.exp(0.1j)
        d = symbol_decomposition(z, P(0.75, 2), xi)
        h = 1 / (xi**1.5 - z**1.5)
        np.testing.assert_allclose(d.h_ctr + d.h_tail + d.h_ann, h, rtol=1e-12)
        assert np.all(d.h_ann[xi <= 0.25] == 0)
        assert np.all(d.h_tail[xi >= 4] == h[xi >= 4])

    def test_j_taylor_matches_direct_formula(self):
        z, a = np.exp(0.2j), 0.75
        zeta = 1 + np.array([-1.9e-3, 1.5e-3, 1.9e-3])
        J = j_correction(z, zeta, a)
        p, q = zeta ** (2 * a) - 1, zeta**2 - 1
        direct = (a * q - p) / (a * z ** (2 * a) * p * q)
        np.testing.assert_allclose(J, direct, rtol=1e-8)

    def test_rejects_bad_argument(self):
        with pytest.raises(ValueError):
            symbol_decomposition(-1.0 + 0j, P(0.75, 2), [1.0])


class TestProfile:
    def test_csv_roundtrip(self, tmp_path):
        prof = free_resolvent_kernel(SpectralPoint(1.0), P(1, 3), np.linspace(0.5, 3, 7))
        path = tmp_path / "k.csv"
        prof.to_csv(path)
        back = KernelProfile.from_csv(path)
        np.testing.assert_array_equal(back.values, prof.values)
        np.testing.assert_array_equal(back.radii, prof.radii)
        assert path.read_text().splitlines()[0] == "r,re,im"

    def test_validation(self):
        with pytest.raises(ValueError):
            KernelProfile([1.0], [np.nan], P(1, 3), "F")
        with pytest.raises(ValueError):
            KernelProfile([1.0], [1.0], P(1, 3), "bogus")
        with pytest.raises(ValueError):
            SpectralPoint(-1.0)
        with pytest.raises(ValueError):
            SpectralPoint(1.0, 0.0, 2)
