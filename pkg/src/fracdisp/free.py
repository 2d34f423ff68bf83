"""Symbol and free propagator of (-Delta)^alpha.

The propagator kernel is the radial Fourier transform of
e^{it|xi|^{2 alpha}} |xi|^{gamma - n}.  It is computed at t = +-1 and rescaled,

    K(t, r) = |t|^{-gamma/(2 alpha)} K(sign t, r |t|^{-1/(2 alpha)}),

with K(-1, .) = conj K(1, .).  The frequency integral is only conditionally
convergent, so it is taken along a slightly rotated ray k = s e^{i theta}
(where e^{ik^{2 alpha}} decays) times a Gaussian regularizer e^{-eta k^2};
three eta-levels are Richardson-extrapolated to eta = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import special

from .errors import ConvergenceError
from .numerics import FracParams, PhaseSpec, oscillatory_edges, panel_rule
from .resolvent import KernelProfile


def symbol(xi_norm, params: FracParams):
    """|xi|^{2 alpha}."""
    return np.asarray(xi_norm, dtype=float) ** (2 * params.alpha)


@dataclass
class PropagatorSpec:
    """Parameters of e^{it(-Delta)^alpha}(-Delta)^{(gamma - n)/2}."""

    params: FracParams
    t: float
    gamma: float | None = None
    r_samples: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 10.0, 101))

    def __post_init__(self):
        a, n = self.params.alpha, self.params.n
        if self.gamma is None:
            self.gamma = float(n)
        if self.t == 0:
            raise ValueError("t must be nonzero")
        if a <= 0.5:
            raise ValueError("the propagator quadrature needs alpha > 1/2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if a < 1 and self.gamma > n * a + 1e-12:
            raise ValueError("for alpha < 1 the smoothing exponent must satisfy gamma <= n alpha")
        self.r_samples = np.asarray(self.r_samples, dtype=float)
        if np.any(self.r_samples < 0):
            raise ValueError("radii must be nonnegative")


_GROWTH = 4.0  # allowed log-growth of |J_nu| against the decay of e^{ik^{2a}}
_DECAY = 46.0  # integrand truncated once it is below e^{-46}


def _growth(theta, rho, a):
    """max_s [rho s sin(theta) - s^{2a} sin(2 a theta)]."""
    if rho == 0:
        return 0.0
    st, s2 = math.sin(theta), math.sin(2 * a * theta)
    s_star = (rho * st / (2 * a * s2)) ** (1.0 / (2 * a - 1))
    return rho * s_star * st * (1 - 1 / (2 * a))


def _ray_angle(rho, a):
    theta_max = min(math.pi / (4 * a), math.pi / 4)
    if _growth(theta_max, rho, a) <= _GROWTH:
        return theta_max
    lo, hi = 0.0, theta_max
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _growth(mid, rho, a) <= _GROWTH:
            lo = mid
        else:
            hi = mid
    return lo


def _bessel_weight(nu, k, rho):
    """rho^{-nu} J_nu(k rho) for complex k, continuous at rho = 0."""
    if rho == 0:
        return k ** nu * 2.0 ** (-nu) / special.gamma(nu + 1)
    return rho ** (-nu) * special.jv(nu, k * rho)


def _unit_propagator(rho, a, n, gamma, eta_levels):
    """K(+1, rho) for each eta in ``eta_levels`` (no extrapolation)."""
    nu = n / 2 - 1
    theta = _ray_angle(rho, a)
    e = complex(math.cos(theta), math.sin(theta))
    # truncation point
    smax = 1.0
    while (smax ** (2 * a) * math.sin(2 * a * theta) - rho * smax * math.sin(theta)) < _DECAY:
        smax *= 1.5
    edges = oscillatory_edges(PhaseSpec(1.0, rho, a), 0.0, smax, step=math.pi / 2, max_width=0.5)
    s, w = panel_rule(edges, 16)
    k = s * e
    base = (w * e) * k ** (n / 2) * _bessel_weight(nu, k, rho) * np.exp(1j * k ** (2 * a)) * k ** (gamma - n)
    k2 = k * k
    return [complex(np.sum(base * np.exp(-eta * k2))) for eta in eta_levels]


def unit_propagator(rho, params: FracParams, gamma=None, rtol: float = 1e-4):
    """K(+1, rho) with Richardson extrapolation over eta0, eta0/4, eta0/16.

    eta0 = 2e-3 / max(1, k*^2), where k* is the stationary frequency of the
    phase k^{2 alpha} - k rho, so the regularizer acts at a fixed relative
    strength on the local oscillation.
    """
    a, n = params.alpha, params.n
    gamma = float(n) if gamma is None else float(gamma)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.empty(rho.shape, dtype=complex)
    norm = (2 * math.pi) ** (-n / 2)
    for i, r in enumerate(rho):
        kstar = (r / (2 * a)) ** (1 / (2 * a - 1)) if r > 0 else 0.0
        eta0 = 2e-3 / max(1.0, kstar * kstar)
        v1, v2, v3 = _unit_propagator(r, a, n, gamma, (eta0, eta0 / 4, eta0 / 16))
        e12 = (4 * v2 - v1) / 3
        e23 = (4 * v3 - v2) / 3
        best = (16 * e23 - e12) / 15
        if abs(e23 - e12) > rtol * max(abs(best), 1e-300):
            raise ConvergenceError("regularizer levels disagree", rho=float(r), levels=[v1, v2, v3])
        out[i] = norm * best
    return out


def free_propagator_kernel(spec: PropagatorSpec) -> KernelProfile:
    """Radial samples of the kernel of e^{it(-Delta)^alpha}(-Delta)^{(gamma-n)/2}."""
    a = spec.params.alpha
    t = spec.t
    scale = abs(t) ** (-1 / (2 * a))
    vals = unit_propagator(spec.r_samples * scale, spec.params, spec.gamma)
    vals = abs(t) ** (-spec.gamma / (2 * a)) * vals
    if t < 0:
        vals = np.conj(vals)
    meta = {"t": t, "gamma": spec.gamma}
    return KernelProfile(spec.r_samples, vals, spec.params, "propagator", meta)


def propagator_sup_norm(spec: PropagatorSpec) -> float:
    """max over the radial samples of |K(t, r)|."""
    return float(np.max(np.abs(free_propagator_kernel(spec).values)))
