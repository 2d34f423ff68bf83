import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracdisp.numerics import FracParams
from fracdisp.free import PropagatorSpec, free_propagator_kernel, propagator_sup_norm, symbol, unit_propagator

P = FracParams


def schrodinger_kernel(t, r, n):
    """Kernel of the multiplier e^{it|xi|^2}: (-4 pi i t)^{-n/2} e^{-i r^2/(4t)}."""
    return (-4j * math.pi * t) ** (-n / 2) * np.exp(-1j * r**2 / (4 * t))


class TestSymbol:
    def test_values(self):
        assert symbol(0.0, P(0.5, 1)) == 0.0
        assert symbol(1.0, P(0.75, 2)) == 1.0
        assert symbol(2.0, P(1.25, 3)) == pytest.approx(2**2.5)

    @given(st.floats(0, 10), st.floats(0, 10))
    def test_monotone(self, a, b):
        p = P(0.75, 2)
        lo, hi = sorted((a, b))
        assert symbol(lo, p) <= symbol(hi, p)


class TestPropagator:
    @pytest.mark.parametrize("t", [1.0, 10.0, -3.0])
    def test_schrodinger_3d(self, t):
        r = np.linspace(0, 8, 9)
        prof = free_propagator_kernel(PropagatorSpec(P(1, 3), t, r_samples=r))
        np.testing.assert_allclose(prof.values, schrodinger_kernel(t, r, 3), rtol=2e-5)

    def test_schrodinger_1d_modulus(self):
        r = np.linspace(0, 5, 6)
        prof = free_propagator_kernel(PropagatorSpec(P(1, 1), 2.0, r_samples=r))
        np.testing.assert_allclose(np.abs(prof.values), (8 * math.pi) ** -0.5, rtol=2e-5)

    def test_sup_norm_3d(self):
        for t in (10.0, 100.0, 1000.0):
            sup = propagator_sup_norm(PropagatorSpec(P(1, 3), t, r_samples=np.linspace(0, 5, 6)))
            assert sup == pytest.approx((4 * math.pi * t) ** -1.5, rel=1e-3)

    def test_doubling_halves_sup_2d(self):
        s1 = propagator_sup_norm(PropagatorSpec(P(1, 2), 5.0, r_samples=np.linspace(0, 4, 5)))
        s2 = propagator_sup_norm(PropagatorSpec(P(1, 2), 10.0, r_samples=np.linspace(0, 4, 5)))
        assert s1 / s2 == pytest.approx(2.0, rel=1e-4)

    def test_time_reversal(self):
        r = np.linspace(0, 3, 4)
        a = free_propagator_kernel(PropagatorSpec(P(1.25, 3), 2.0, r_samples=r)).values
        b = free_propagator_kernel(PropagatorSpec(P(1.25, 3), -2.0, r_samples=r)).values
        np.testing.assert_allclose(b, np.conj(a), rtol=1e-12)

    @given(st.floats(0.5, 50.0), st.floats(0.0, 3.0))
    @settings(max_examples=8, deadline=None)
    def test_self_similarity(self, t, rho):
        """K(t, r) = t^{-n/(2a)} K(1, r t^{-1/(2a)})."""
        p = P(1.25, 3)
        r = rho * t ** (1 / 2.5)
        val = free_propagator_kernel(PropagatorSpec(p, t, r_samples=np.array([r]))).values[0]
        ref = t ** (-3 / 2.5) * unit_propagator(rho, p)[0]
        assert abs(val - ref) <= 1e-10 * abs(ref)

    def test_smoothed_bounded_times_t(self):
        p = P(0.75, 2)
        vals = []
        for t in np.geomspace(10, 1000, 5):
            r = np.linspace(0, 4, 17) * t ** (1 / 1.5)
            vals.append(t * propagator_sup_norm(PropagatorSpec(p, t, gamma=1.5, r_samples=r)))
        assert max(vals) / min(vals) < 1.01

    def test_validation(self):
        with pytest.raises(ValueError):
            PropagatorSpec(P(1, 3), 0.0)
        with pytest.raises(ValueError):
            PropagatorSpec(P(0.5, 3), 1.0)
        with pytest.raises(ValueError):
            PropagatorSpec(P(0.75, 2), 1.0, gamma=1.6)
        with pytest.raises(ValueError):
            PropagatorSpec(P(1, 3), 1.0, r_samples=np.array([-1.0]))
