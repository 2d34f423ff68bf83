import math

import numpy as np
import pytest
from scipy import integrate, special

from fracdisp import kernels
from fracdisp._accel import HAVE_NUMBA
from fracdisp.discretize import ball_average, free_kernel, kernel_matrix, offset_table
from fracdisp.numerics import FracParams, make_grid

P = FracParams


class TestFreeKernel:
    def test_helmholtz(self):
        k = free_kernel(P(1, 3), lam=1.5)
        d = np.linspace(0.1, 10, 20)
        np.testing.assert_allclose(k(d), np.exp(1.5j * d) / (4 * math.pi * d), rtol=1e-12)
        km = free_kernel(P(1, 3), lam=1.5, sign=-1)
        np.testing.assert_allclose(km(d), np.exp(-1.5j * d) / (4 * math.pi * d), rtol=1e-12)

    def test_green(self):
        k = free_kernel(P(0.75, 2))
        d = np.array([0.5, 2.0])
        assert k.p == pytest.approx(-0.5)
        np.testing.assert_allclose(k(d), k.C * d**-0.5)
        with pytest.raises(ValueError):
            free_kernel(P(1, 2))

    def test_singular_part_is_riesz(self):
        k = free_kernel(P(1.25, 3), lam=2.0)
        d = np.array([1e-3, 1e-4, 1e-5])
        reg = k.regular(d)
        # k - C d^p stays bounded while C d^p diverges
        assert abs(reg[2] - reg[1]) < 1e-5 * abs(reg[1])
        assert abs(reg[1] - reg[0]) < 1e-3 * abs(reg[1])

    def test_off_axis(self):
        w = 1 + 0.5j
        k = free_kernel(P(1, 3), w=w)
        d = np.linspace(0.2, 5, 9)
        np.testing.assert_allclose(k(d), np.exp(1j * np.sqrt(w) * d) / (4 * math.pi * d), rtol=1e-8)


class TestBallAverage:
    def test_newton_kernel(self):
        a = 0.3
        val = ball_average(free_kernel(P(1, 3)), 3, a)
        assert val.real == pytest.approx(3 / (8 * math.pi * a), rel=1e-12)

    def test_matches_quadrature(self):
        k = free_kernel(P(1.25, 3), lam=1.0)
        a = 0.2
        re = integrate.quad(lambda u: (k(np.array([u]))[0] * 4 * math.pi * u * u).real, 0, a, limit=200)[0]
        vol = 4 * math.pi * a**3 / 3
        assert ball_average(k, 3, a).real == pytest.approx(re / vol, rel=1e-7)


class TestFullGrid:
    def test_offset_table_symmetry(self):
        g = make_grid(2, 3.0, 12)
        t = offset_table(free_kernel(P(0.75, 2), lam=1.0), g)
        np.testing.assert_allclose(t, t.T)

    def test_matrix_symmetric(self):
        g = make_grid(2, 3.0, 12)
        K = kernel_matrix(free_kernel(P(0.75, 2), lam=1.0), g)
        np.testing.assert_allclose(K, K.T)


class TestRadialGrid:
    def test_3d_laplacian_exact_angular_average(self):
        g = make_grid(3, 6.0, 48, "radial")
        lam = 1.3
        K = kernel_matrix(free_kernel(P(1, 3), lam=lam), g)
        r = g.radii
        R, S = np.meshgrid(r, r, indexing="ij")
        exact = (np.exp(1j * lam * (R + S)) - np.exp(1j * lam * np.abs(R - S))) / (8j * math.pi * lam * R * S)
        far = np.abs(np.subtract.outer(np.arange(len(r)), np.arange(len(r)))) >= 2
        np.testing.assert_allclose(K[far], exact[far], rtol=1e-10, atol=1e-14)

    def test_3d_newton_radial_second_order(self):
        errs = []
        for pts in (128, 256):
            g = make_grid(3, 8.0, pts, "radial")
            K = kernel_matrix(free_kernel(P(1, 3)), g).real
            u = K @ (g.weights * np.exp(-g.radii**2))
            exact = math.sqrt(math.pi) / 4 * special.erf(g.radii) / g.radii
            errs.append(np.max(np.abs(u - exact)) / np.max(exact))
        assert errs[1] < 2e-3
        assert errs[0] / errs[1] > 2.5  # h^1.5 near the origin, h^2 elsewhere

    def test_3d_fractional_entries(self):
        """Off-diagonal entries against a direct angular quadrature."""
        p = P(1.25, 3)
        k = free_kernel(p, lam=1.0)
        g = make_grid(3, 4.0, 16, "radial")
        K = kernel_matrix(k, g)
        r = g.radii
        for i, j in ((0, 4), (2, 6), (7, 3)):
            f = lambda c: k(np.array([math.sqrt(r[i] ** 2 + r[j] ** 2 - 2 * r[i] * r[j] * c)]))[0]
            re = integrate.quad(lambda c: f(c).real, -1, 1, limit=200)[0] / 2
            im = integrate.quad(lambda c: f(c).imag, -1, 1, limit=200)[0] / 2
            assert abs(K[i, j] - (re + 1j * im)) < 1e-6 * abs(re + 1j * im)

    def test_2d_radial_matches_full(self):
        """l = 0 sector: the full-grid apply on a radial function equals the radial apply."""
        p = P(0.75, 2)
        k = free_kernel(p, lam=1.0)
        gr = make_grid(2, 6.0, 96, "radial")
        u_rad = kernel_matrix(k, gr) @ (gr.weights * np.exp(-gr.radii**2))
        gf = make_grid(2, 6.0, 96)
        u_full = kernel_matrix(k, gf) @ (gf.weights * np.exp(-gf.radii**2))
        order = np.argsort(gf.radii)
        sel = gf.radii[order] < 3
        interp = np.interp(gf.radii[order][sel], gr.radii, u_rad.real) + 1j * np.interp(
            gf.radii[order][sel], gr.radii, u_rad.imag)
        assert np.max(np.abs(interp - u_full[order][sel])) / np.max(np.abs(u_rad)) < 1e-2

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError):
            kernel_matrix(free_kernel(P(0.75, 2), lam=1.0), make_grid(3, 2.0, 8))


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
class TestBackendParity:
    def test_full_grid_matrix(self):
        g = make_grid(2, 3.0, 16)
        k = free_kernel(P(0.75, 2), lam=1.0)
        a = kernel_matrix(k, g, backend="numba")
        b = kernel_matrix(k, g, backend="numpy")
        np.testing.assert_array_equal(a, b)

    def test_radial_2d_matrix(self):
        g = make_grid(2, 3.0, 32, "radial")
        k = free_kernel(P(0.75, 2), lam=1.0)
        np.testing.assert_allclose(kernel_matrix(k, g, backend="numba"), kernel_matrix(k, g, backend="numpy"),
                                   rtol=1e-12, atol=1e-14)

    def test_kernels(self):
        rng = np.random.default_rng(3)
        coords = rng.uniform(-2, 2, (200, 2))
        fw = rng.standard_normal(200)
        np.testing.assert_allclose(kernels.riesz_apply(coords, fw, 0.2, -0.5, 1.0, backend="numba"),
                                   kernels.riesz_apply(coords, fw, 0.2, -0.5, 1.0, backend="numpy"), rtol=1e-12)
        table = rng.standard_normal((20, 20)) + 0j
        idx = rng.integers(0, 10, (30, 2))
        for periodic in (False, True):
            np.testing.assert_array_equal(kernels.pair_gather(table, idx, periodic, backend="numba"),
                                          kernels.pair_gather(table, idx, periodic, backend="numpy"))
        acc1 = np.zeros((3, 4, 4), complex)
        acc2 = np.zeros((3, 4, 4), complex)
        coef = np.array([1, 1j, -2])
        mat = rng.standard_normal((4, 4)) + 0j
        kernels.stone_accumulate(acc1, coef, mat, backend="numba")
        kernels.stone_accumulate(acc2, coef, mat, backend="numpy")
        np.testing.assert_allclose(acc1, acc2)

    def test_bad_backend(self):
        with pytest.raises(ValueError):
            kernels.riesz_apply(np.zeros((2, 1)), np.zeros(2), 1.0, -1.0, 0.0, backend="cuda")


def test_env_var_disables_numba(monkeypatch):
    from fracdisp import _accel

    monkeypatch.setenv("FRACDISP_DISABLE_NUMBA", "1")
    assert not _accel.use_numba()
    assert _accel.resolve_backend() == "numpy"
    monkeypatch.setenv("FRACDISP_DISABLE_NUMBA", "0")
    assert _accel.use_numba() == HAVE_NUMBA
