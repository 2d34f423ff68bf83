"""Free resolvent kernels of the fractional Laplacian and their diagnostics.

The kernel of ((-Delta)^alpha - w)^{-1} is radial; with ``k_w = w^{1/(2 alpha)}``
it splits as

    R(w)(r) = (1/alpha) k_w^{2 - 2 alpha} R_Lap(k_w^2)(r) + remainder(r),

where R_Lap is the classical Helmholtz resolvent (the residue of the only
pole of 1/(k^{2 alpha} - w) that is crossed when the Fourier integral is
rotated onto the imaginary axis) and the remainder is a non-oscillatory
integral against K_nu.  This is the "contour" method.  The "decomposition"
method integrates the regular part J(z, k) of the symbol along the real axis
instead; the two are independent numerically.

All kernels obey the scaling R(mu^{2 alpha} w)(r) = mu^{n - 2 alpha} R(w)(mu r),
so the heavy lifting is done at unit spectral modulus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import json
import math

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError
from .numerics import (
    DEFAULT_CUTOFF,
    CutoffSpec,
    FracParams,
    graded_edges,
    japanese,
    panel_rule,
    radial_fourier_transform,
)

KINDS = ("resolvent+", "resolvent-", "difference", "F", "F+", "F-", "propagator", "riesz")


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter lam^{2 alpha} + i*sign*eps."""

    lam: float
    epsilon: float = 0.0
    sign: int = 1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def w(self, alpha: float) -> complex:
        return self.lam ** (2 * alpha) + 1j * self.sign * self.epsilon

    def z(self, alpha: float) -> complex:
        """The 2 alpha-th root of w on the principal branch."""
        return complex(self.w(alpha)) ** (1.0 / (2 * alpha))


@dataclass
class KernelProfile:
    """Radial samples of a complex kernel."""

    radii: np.ndarray
    values: np.ndarray
    params: FracParams
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.radii.shape != self.values.shape:
            raise ValueError("radii and values must have the same shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel profile has non-finite values")

    def metadata(self) -> dict:
        return {"alpha": self.params.alpha, "n": self.params.n, "kind": self.kind, **self.meta}

    def to_csv(self, path) -> None:
        """Write ``r,re,im`` rows (17 significant digits) plus ``path.json``."""
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("r,re,im\n")
            for r, v in zip(self.radii, self.values):
                fh.write(f"{r:.17g},{v.real:.17g},{v.imag:.17g}\n")
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path) -> "KernelProfile":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        with open(str(path) + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
        params = FracParams(meta.pop("alpha"), meta.pop("n"))
        kind = meta.pop("kind")
        return cls(data[:, 0], data[:, 1] + 1j * data[:, 2], params, kind, meta)


@dataclass
class RieszKernel:
    C_alpha: float
    exponent: float
    gamma_formula: float = float("nan")
    radius_spread: float = 0.0

    def __call__(self, r):
        return self.C_alpha * np.asarray(r, dtype=float) ** self.exponent


@dataclass
class ExpansionError:
    lam: float
    r: float
    E_value: complex
    regime: str
    predicted_bound: float

    @property
    def ratio(self) -> float:
        return abs(self.E_value) / self.predicted_bound


@dataclass
class SymbolDecomposition:
    xi: np.ndarray
    z: complex
    h_ctr: np.ndarray
    h_tail: np.ndarray
    h_ann: np.ndarray
    J_ann: np.ndarray


@dataclass
class BoundReport:
    """Sup of a bound ratio at two refinement levels.

    ``passed`` requires both sups finite and a relative drift below
    ``drift_tol``.  ``noise_samples`` lists sample locations where the finite
    difference fell below the estimated round-off floor.
    """

    kind: str
    N: int
    sup_ratio: float
    sup_ratio_fine: float
    sup_small: float
    sup_small_fine: float
    drift: float
    passed: bool
    drift_tol: float = 0.1
    noise_samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "kind", "N", "sup_ratio", "sup_ratio_fine", "sup_small", "sup_small_fine",
            "drift", "passed", "drift_tol", "noise_samples")}


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def riesz_gamma_constant(params: FracParams) -> float:
    """Gamma((n - 2a)/2) / (4^a pi^{n/2} Gamma(a))."""
    a, n = params.alpha, params.n
    return math.gamma((n - 2 * a) / 2) / (4 ** a * math.pi ** (n / 2) * math.gamma(a))


def laplace_resolvent(k, d, n: int):
    """Outgoing Helmholtz kernel (-Delta - k^2)^{-1}(d) for Im k >= 0."""
    nu = n / 2 - 1
    d = np.asarray(d, dtype=float)
    k = np.asarray(k, dtype=complex)
    if n == 1:
        return 1j * np.exp(1j * k * d) / (2 * k)
    if n == 3:
        return np.exp(1j * k * d) / (4 * math.pi * d)
    return 0.25j * (k / (2 * math.pi * d)) ** nu * special.hankel1(nu, k * d)


def laplace_jump(lam, r, n: int):
    """[R_Lap^+ - R_Lap^-](lam^2)(r) = (i/2) (2 pi)^{-nu} lam^{n-2} (lam r)^{-nu} J_nu(lam r)."""
    nu = n / 2 - 1
    rho = lam * np.asarray(r, dtype=float)
    return 0.5j * (2 * math.pi) ** (-nu) * lam ** (n - 2) * _bessel_ratio(nu, rho)


def _bessel_ratio(nu, rho):
    """rho^{-nu} J_nu(rho), continuous at rho = 0."""
    rho = np.asarray(rho, dtype=float)
    out = np.empty_like(rho)
    small = rho < 1e-6
    out[~small] = rho[~small] ** (-nu) * special.jv(nu, rho[~small])
    x = rho[small]
    out[small] = (2.0 ** (-nu) / special.gamma(nu + 1)) * (1 - x * x / (4 * (nu + 1)))
    return out


# ---------------------------------------------------------------------------
# method 1: contour-rotated representation
# ---------------------------------------------------------------------------

_SEG_PANELS = 12
_SEG_ORDER = 24


def _log_nodes(lo, mid, hi):
    """Log-space Gauss-Legendre nodes on [lo, mid] and [mid, hi], row-wise."""
    x, w = np.polynomial.legendre.leggauss(_SEG_ORDER)
    tl = np.linspace(0.0, 1.0, _SEG_PANELS + 1)
    a, b = tl[:-1], tl[1:]
    u = (0.5 * (b - a)[:, None] * x + 0.5 * (a + b)[:, None]).ravel()
    wu = (0.5 * (b - a)[:, None] * w).ravel()
    nodes, weights = [], []
    for p, q in ((lo, mid), (mid, hi)):
        lp, lq = np.log(p), np.log(q)
        t = lp[:, None] + (lq - lp)[:, None] * u[None, :]
        y = np.exp(t)
        nodes.append(y)
        weights.append((lq - lp)[:, None] * wu[None, :] * y)
    return np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1)


def _remainder_weight(y, alpha, w):
    """(i/pi)[f(iy) - f(-iy)] with f(k) = 1/(k^{2a} - w)."""
    ya = y ** (2 * alpha)
    if w is None:
        if alpha == 1.0:
            return np.zeros_like(y)
        c = math.cos(math.pi * alpha)
        return (2 * math.sin(math.pi * alpha) / math.pi) * ya / (ya * ya - 2 * c * ya + 1.0)
    e = np.exp(1j * math.pi * alpha)
    return (1j / math.pi) * (1.0 / (ya * e - w) - 1.0 / (ya * np.conj(e) - w))


def unit_remainder(rho, params: FracParams, w=None):
    """Non-oscillatory part of the kernel at |w| = 1 (w=None: boundary value at 1).

    (2 pi)^{-n/2} rho^{-nu} int_0^inf y^{n/2} K_nu(y rho) g(y) dy, evaluated in
    s = y rho with log-spaced panels split at the feature s = rho.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    n, alpha, nu = params.n, params.alpha, params.nu
    if w is None and alpha == 1.0:
        return np.zeros(rho.shape, dtype=complex)
    lo = 1e-9 * np.minimum(rho, 1.0)
    hi = np.full_like(rho, 60.0)
    mid = np.clip(rho, lo * 10, hi / 1.0001)
    s, ws = _log_nodes(lo, mid, hi)
    g = _remainder_weight(s / rho[:, None], alpha, w)
    integrand = s ** (n / 2) * special.kv(nu, s) * g
    val = np.sum(ws * integrand, axis=1) * rho ** (-n / 2 - 1)
    return (2 * math.pi) ** (-n / 2) * rho ** (-nu) * val


def _pole_allowed(w, alpha):
    # The pole k_w = w^{1/2a} is crossed by the rotation iff 0 <= arg k_w < pi/2.
    return w is None or np.angle(w) / (2 * alpha) < math.pi / 2


def unit_pole(rho, params: FracParams, w=None):
    """Residue contribution (1/alpha) k^{2-2alpha} R_Lap(k^2) at |w| = 1."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    if not _pole_allowed(w, params.alpha):
        return np.zeros(rho.shape, dtype=complex)
    k = 1.0 if w is None else complex(w) ** (1.0 / (2 * params.alpha))
    return (1.0 / params.alpha) * k ** (2 - 2 * params.alpha) * laplace_resolvent(k, rho, params.n)


def unit_kernel_contour(rho, params: FracParams, w=None):
    """R(w)(rho) for |w| = 1 (w=None: the + boundary value at 1)."""
    return unit_pole(rho, params, w) + unit_remainder(rho, params, w)


# ---------------------------------------------------------------------------
# method 2: real-axis assembly of the annulus symbol
# ---------------------------------------------------------------------------


def j_correction(z, zeta, alpha: float):
    """J(z, zeta) = [a(zeta^2 - 1) - (zeta^{2a} - 1)] / [a z^{2a} (zeta^{2a} - 1)(zeta^2 - 1)].

    The removable singularity at zeta = 1 is filled with a Taylor quotient.
    """
    zeta = np.asarray(zeta, dtype=complex)
    a = alpha
    z2a = complex(z) ** (2 * a)
    out = np.empty(zeta.shape, dtype=complex)
    d = zeta - 1.0
    near = np.abs(d) < 2e-3
    zf = zeta[~near]
    p = zf ** (2 * a) - 1.0
    q = zf * zf - 1.0
    out[~near] = (a * q - p) / (a * z2a * p * q)
    if np.any(near):
        out[near] = _j_taylor(d[near], a, z2a)
    return out


def _binom_coeffs(a, m):
    """Coefficients of (1 + d)^{2a} - 1 = sum_{k>=1} c_k d^k, k = 1..m."""
    c, out = 1.0, []
    for k in range(1, m + 1):
        c *= (2 * a - (k - 1)) / k
        out.append(c)
    return out


def _j_taylor(d, a, z2a):
    c = _binom_coeffs(a, 6)
    # numerator a(2d + d^2) - sum c_k d^k, divided by d^2
    num = (a - c[1]) - c[2] * d - c[3] * d ** 2 - c[4] * d ** 3 - c[5] * d ** 4
    # denominator a z^{2a} (sum c_k d^k)(2d + d^2), divided by d^2
    p = c[0] + c[1] * d + c[2] * d ** 2 + c[3] * d ** 3 + c[4] * d ** 4
    return num / (a * z2a * p * (2.0 + d))


def unit_kernel_decomposition(rho, params: FracParams):
    """+ boundary value at lam = 1 via the annulus assembly.

    R = (1/alpha) R_Lap^+(1) + FT[J(1, k)] with the k^{-2 alpha} tail
    transformed exactly (Riesz kernel) whenever 2 alpha < n.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    a, n = params.alpha, params.n
    subtract = 2 * a < n
    C = riesz_gamma_constant(params) if subtract else 0.0

    def g(k):
        val = j_correction(1.0, k, a)
        if subtract:
            val = val - k ** (-2 * a)
        return val

    def g_tail(k):
        k = float(k)
        p = k ** (2 * a) - 1.0
        val = 1.0 / p - 1.0 / (a * (k * k - 1.0))
        if subtract:
            val -= k ** (-2 * a)
        return val

    out = np.empty(rho.shape, dtype=complex)
    for i, r in enumerate(rho):
        kmax = max(8.0, 40.0 / r)
        ft = radial_fourier_transform(g, [r], n, (0.0, kmax), breaks=(0.5, 1.0, 2.0), order=20,
                                      smallest=1e-100, tail=g_tail)[0]
        out[i] = ft
    lap = laplace_resolvent(1.0, rho, n) / a
    return lap + out + (C * rho ** (2 * a - n) if subtract else 0.0)


# ---------------------------------------------------------------------------
# remainder tables (the remainder at the boundary depends on rho only)
# ---------------------------------------------------------------------------

_TABLE_LO, _TABLE_HI, _TABLE_PER_DECADE = 1e-6, 1e4, 120


@lru_cache(maxsize=32)
def _remainder_spline(alpha: float, n: int):
    params = FracParams(alpha, n)
    rho = np.logspace(math.log10(_TABLE_LO), math.log10(_TABLE_HI),
                      int(math.log10(_TABLE_HI / _TABLE_LO) * _TABLE_PER_DECADE) + 1)
    vals = unit_remainder(rho, params).real
    # remove the leading singular power so the splined function is tame
    p = 2 * alpha - n
    C = riesz_gamma_constant(params) if p < 0 else 0.0
    scaled = (vals - C * rho ** p * _BLEND.chi(rho)) * japanese(rho) ** (n + 2 * alpha)
    return CubicSpline(np.log(rho), scaled), C, p


def unit_remainder_fast(rho, params: FracParams):
    """Boundary remainder via a cached spline, direct evaluation off-table."""
    rho = np.asarray(rho, dtype=float)
    if params.alpha == 1.0:
        return np.zeros(rho.shape)
    spline, C, p = _remainder_spline(params.alpha, params.n)
    out = np.empty(rho.shape)
    inside = (rho >= _TABLE_LO) & (rho <= _TABLE_HI)
    ri = rho[inside]
    out[inside] = (spline(np.log(ri)) * japanese(ri) ** (-(params.n + 2 * params.alpha))
                   + C * ri ** p * _BLEND.chi(ri))
    if np.any(~inside):
        out[~inside] = unit_remainder(rho[~inside], params).real
    return out


# ---------------------------------------------------------------------------
# public kernels
# ---------------------------------------------------------------------------


def kernel_values(params: FracParams, r, lam=None, w=None, sign: int = 1, fast: bool = False):
    """R_0 kernel at distances r for either a boundary point or complex w.

    Parameters
    ----------
    lam : float, optional
        Boundary value R_0^{sign}(lam^{2 alpha}).
    w : complex, optional
        Off-axis spectral parameter (Im w != 0).
    fast : bool
        Use the cached remainder spline (boundary values only).
    """
    r = np.asarray(r, dtype=float)
    if (lam is None) == (w is None):
        raise ValueError("give exactly one of lam or w")
    a, n = params.alpha, params.n
    if lam is not None:
        rho = lam * r
        if fast:
            val = unit_pole(rho, params) + unit_remainder_fast(rho, params)
        else:
            val = unit_kernel_contour(rho, params)
        val = lam ** (n - 2 * a) * val
        return val if sign > 0 else np.conj(val)
    w = complex(w)
    flip = w.imag < 0
    if flip:
        w = w.conjugate()
    mu = abs(w) ** (1.0 / (2 * a))
    val = mu ** (n - 2 * a) * unit_kernel_contour(mu * r, params, w / abs(w))
    return np.conj(val) if flip else val


def _ladder_eps(lam, alpha, radii, scale):
    return scale * lam ** (2 * alpha) / max(1.0, lam * float(np.max(radii)))


def ladder_values(params: FracParams, lam, radii, scale=2e-2, jump=False):
    """Kernel values at the three ladder levels eps0, eps0/2, eps0/4."""
    eps0 = _ladder_eps(lam, params.alpha, radii, scale)
    base = lam ** (2 * params.alpha)
    vals = []
    for e in (eps0, eps0 / 2, eps0 / 4):
        v = kernel_values(params, radii, w=base + 1j * e)
        vals.append(2j * v.imag if jump else v)
    return eps0, vals


def richardson3(v1, v2, v4):
    """Eliminate O(eps) and O(eps^2) from values at eps, eps/2, eps/4."""
    return (8 * v4 - 6 * v2 + v1) / 3


def free_resolvent_kernel(pt: SpectralPoint, params: FracParams, radii, boundary: str = "ladder",
                          method: str = "contour", ladder_tol: float = 1e-4,
                          ladder_scale: float = 2e-2) -> KernelProfile:
    """Free resolvent kernel at a spectral point.

    Parameters
    ----------
    pt : SpectralPoint
        ``epsilon > 0`` gives the off-axis kernel; ``epsilon = 0`` the
        boundary value R_0^{sign}(lam^{2 alpha}).
    boundary : {"ladder", "direct"}
        How the epsilon = 0 value is produced: Richardson extrapolation of
        the epsilon-ladder, or the contour formula evaluated on the axis.
    method : {"contour", "decomposition"}
        Representation used for boundary values with ``boundary="direct"``.

    Raises
    ------
    ConvergenceError
        If the two- and three-level ladder extrapolations disagree by more
        than ``ladder_tol`` (relative to the max modulus).
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    kind = "resolvent+" if pt.sign > 0 else "resolvent-"
    meta = {"lambda": pt.lam, "epsilon": pt.epsilon, "sign": pt.sign, "boundary": boundary, "method": method}
    if pt.epsilon > 0:
        vals = kernel_values(params, radii, w=pt.w(params.alpha))
        return KernelProfile(radii, vals, params, kind, meta)
    if boundary == "direct":
        if method == "contour":
            vals = kernel_values(params, radii, lam=pt.lam)
        elif method == "decomposition":
            vals = pt.lam ** (params.n - 2 * params.alpha) * unit_kernel_decomposition(pt.lam * radii, params)
        else:
            raise ValueError(f"unknown method {method!r}")
        return KernelProfile(radii, vals if pt.sign > 0 else np.conj(vals), params, kind, meta)
    if boundary != "ladder":
        raise ValueError(f"unknown boundary rule {boundary!r}")
    eps0, (v1, v2, v4) = ladder_values(params, pt.lam, radii, ladder_scale)
    r3 = richardson3(v1, v2, v4)
    r2 = 2 * v4 - v2
    scale = np.max(np.abs(r3))
    err = float(np.max(np.abs(r3 - r2)) / scale)
    meta.update(ladder_eps=[eps0, eps0 / 2, eps0 / 4], ladder_error=err)
    if err > ladder_tol:
        raise ConvergenceError("epsilon-ladder extrapolation did not settle",
                               ladder=[v1, v2, v4], error=err)
    return KernelProfile(radii, r3 if pt.sign > 0 else np.conj(r3), params, kind, meta)


def extract_F(profile: KernelProfile) -> KernelProfile:
    """F(lam r) = r^{n - 2 alpha} e^{-i lam r} R_0^+(lam^{2 alpha})(r)."""
    if profile.kind != "resolvent+":
        raise ValueError("extract_F needs a resolvent+ profile")
    lam = profile.meta["lambda"]
    p = profile.params
    r = profile.radii
    vals = r ** (p.n - 2 * p.alpha) * np.exp(-1j * lam * r) * profile.values
    return KernelProfile(r, vals, p, "F", dict(profile.meta))


def unit_F(rho, params: FracParams):
    """F(rho) = rho^{n - 2 alpha} e^{-i rho} R_1^+(rho)."""
    rho = np.asarray(rho, dtype=float)
    return rho ** (params.n - 2 * params.alpha) * np.exp(-1j * rho) * unit_kernel_contour(rho, params)


# ---------------------------------------------------------------------------
# spectral measure and the F+- split
# ---------------------------------------------------------------------------


def jump_closed_form(lam, r, params: FracParams, c=None):
    """c lam^{2 - 2 alpha} times the Laplacian jump (c defaults to 1/alpha)."""
    c = 1.0 / params.alpha if c is None else c
    return c * lam ** (2 - 2 * params.alpha) * laplace_jump(lam, r, params.n)


def spectral_measure_kernel(lam, params: FracParams, radii, tol: float = 1e-5,
                            ladder_scale: float = 2e-2) -> KernelProfile:
    """Jump [R_0^+ - R_0^-](lam^{2 alpha}) across the spectrum.

    The epsilon-extrapolated difference of off-axis kernels is compared with
    the Bessel closed form; the proportionality constant c is fitted by
    least squares and recorded in ``meta`` together with the residual
    disagreement.  The returned values are the closed form with c = 1/alpha,
    which makes the F+- reconstruction exact.
    """
    radii = np.asarray(radii, dtype=float)
    _, (d1, d2, d4) = ladder_values(params, lam, radii, ladder_scale, jump=True)
    ladder = richardson3(d1, d2, d4)
    base = lam ** (2 - 2 * params.alpha) * laplace_jump(lam, radii, params.n)
    c_num = complex(np.vdot(base, ladder) / np.vdot(base, base))
    scale = float(np.max(np.abs(ladder)))
    disagreement = float(np.max(np.abs(ladder - c_num * base)) / scale)
    closed = jump_closed_form(lam, radii, params)
    vs_inverse_alpha = float(np.max(np.abs(ladder - closed)) / scale)
    meta = {"lambda": lam, "c_numeric_re": c_num.real, "c_numeric_im": c_num.imag,
            "fit_disagreement": disagreement, "disagreement_vs_inverse_alpha": vs_inverse_alpha}
    if disagreement > tol:
        raise ConvergenceError("ladder jump disagrees with the Bessel closed form",
                               disagreement=disagreement, c=c_num)
    return KernelProfile(radii, closed, params, "difference", meta)


def normalized_jump(rho, params: FracParams):
    """lam^{2 alpha - n} [R^+ - R^-] as a function of rho = lam r."""
    nu = params.nu
    return 0.5j / params.alpha * (2 * math.pi) ** (-nu) * _bessel_ratio(nu, rho)


_BLEND = CutoffSpec(1.0, 2.0)


def extract_Fpm(rho, params: FracParams):
    """Split the normalized jump as e^{i rho} F_+(rho) + e^{-i rho} F_-(rho).

    For rho >= 2 the split is the Hankel one, J = (H1 + H2)/2; for rho <= 1 it
    is the symmetric e^{-+i rho} jump/2; in between the two are blended with
    the smooth cutoff.  Reconstruction holds to round-off everywhere.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    nu = params.nu
    j = normalized_jump(rho, params)
    small_p = np.exp(-1j * rho) * j / 2
    small_m = np.exp(1j * rho) * j / 2
    s = _BLEND.chi_tilde(rho)  # 0 below 1, 1 above 2
    fp, fm = small_p.copy(), small_m.copy()
    big = rho > 1.0
    if np.any(big):
        rb = rho[big]
        c = 0.25j / params.alpha * (2 * math.pi) ** (-nu) * rb ** (-nu)
        hp = c * special.hankel1(nu, rb) * np.exp(-1j * rb)
        hm = c * special.hankel2(nu, rb) * np.exp(1j * rb)
        sb = s[big]
        fp[big] = sb * hp + (1 - sb) * small_p[big]
        fm[big] = sb * hm + (1 - sb) * small_m[big]
    return fp, fm


# ---------------------------------------------------------------------------
# derivative-bound verification
# ---------------------------------------------------------------------------


def central_weights(N: int):
    """Offsets and weights of the narrowest central difference for d^N/dx^N."""
    m = (N + 1) // 2 if N > 0 else 0
    offs = np.arange(-m, m + 1, dtype=float)
    if N == 0:
        return offs, np.array([1.0])
    A = np.vander(offs, increasing=True).T
    b = np.zeros(len(offs))
    b[N] = math.factorial(N)
    return offs, np.linalg.solve(A, b)


def _bound_samples(kind, N, params, rho, step_frac, fn_eps=1e-12):
    offs, wts = central_weights(N)
    d = step_frac * rho
    pts = rho[:, None] + offs[None, :] * d[:, None]
    flat = pts.ravel()
    if kind == "F":
        vals = unit_F(flat, params)
        f = vals.reshape(pts.shape)
    else:
        fp, fm = extract_Fpm(flat, params)
        f = (fp if kind == "F+" else fm).reshape(pts.shape)
    deriv = (f @ wts) / d ** N
    noise = fn_eps * np.max(np.abs(f), axis=1) * np.sum(np.abs(wts)) / d ** N
    return deriv, noise


def verify_derivative_bounds(kind: str, N: int, params: FracParams, rho_range=(1e-2, 1e2),
                             samples: int = 320, drift_tol: float = 0.1,
                             delta: float = 0.01) -> BoundReport:
    """Check rho^N |d^N F| against the weight <rho>^{(n+1)/2 - 2 alpha} (F) or
    <rho>^{-(n-1)/2} (F+-), at two refinement levels.

    Derivatives are central differences in lam at r = 1 (so lam = rho) with
    steps 1e-2 rho and 5e-3 rho; the fine level also doubles the samples.
    For N >= 1 the small-argument ratio divides additionally by
    rho^{min(1, n - 2 alpha, 2 alpha - delta)} (F) or rho (F+-) on rho < 1.
    """
    if kind not in ("F", "F+", "F-"):
        raise ValueError(f"unknown kind {kind!r}")
    a, n = params.alpha, params.n
    if not (0 <= N <= (n + 1 + 4 * a) / 2):
        raise ValueError(f"N = {N} outside 0 <= N <= (n+1+4 alpha)/2")
    if kind == "F":
        weight_exp = (n + 1) / 2 - 2 * a
        small_exp = min(1.0, n - 2 * a, 2 * a - delta)
    else:
        weight_exp = -(n - 1) / 2
        small_exp = 1.0
    sups, smalls, noisy = [], [], []
    for level, (count, step) in enumerate(((samples, 1e-2), (2 * samples, 5e-3))):
        rho = np.geomspace(rho_range[0], rho_range[1], count)
        deriv, noise = _bound_samples(kind, N, params, rho, step)
        mag = rho ** N * np.abs(deriv)
        ratio = mag / japanese(rho) ** weight_exp
        bad = (np.abs(deriv) < 10 * noise) & (N > 0)
        noisy.extend((level, float(x)) for x in rho[bad])
        ok = ~bad
        sups.append(float(np.max(ratio[ok])) if np.any(ok) else float("nan"))
        sm = (rho < 1) & ok
        if N >= 1 and np.any(sm):
            smalls.append(float(np.max(ratio[sm] / rho[sm] ** small_exp)))
        else:
            smalls.append(float("nan"))
    drift = abs(sups[1] - sups[0]) / sups[0]
    if N >= 1 and np.isfinite(smalls[0]):
        drift = max(drift, abs(smalls[1] - smalls[0]) / smalls[0])
    finite = np.isfinite(sups).all() and (N == 0 or np.isfinite(smalls).all())
    return BoundReport(kind, N, sups[0], sups[1], smalls[0], smalls[1], float(drift),
                       bool(finite and drift < drift_tol), drift_tol, noisy)


# ---------------------------------------------------------------------------
# low energy
# ---------------------------------------------------------------------------


def regime(params: FracParams) -> str:
    a4, n = 4 * params.alpha, params.n
    if abs(a4 - n) < 1e-12:
        return "4a=n"
    return "4a>n" if a4 > n else "4a<n"


def predicted_bound(lam, r, params: FracParams) -> float:
    a, n = params.alpha, params.n
    reg = regime(params)
    base = lam ** (n - 2 * a)
    if reg == "4a>n":
        return base
    if reg == "4a=n":
        return base * (1 + max(0.0, -math.log(lam * r)))
    return base + lam ** (2 * a) * r ** (4 * a - n)


def low_energy_error(lam: float, r: float, params: FracParams, riesz: RieszKernel | None = None) -> ExpansionError:
    """E(lam, r) = R_0^+(lam^{2 alpha})(r) - C_alpha r^{2 alpha - n} for 0 < lam < 1."""
    if not (0 < lam < 1):
        raise ValueError("low-energy expansion needs 0 < lam < 1")
    if riesz is None:
        riesz = riesz_constant(params)
    val = complex(kernel_values(params, np.array([r]), lam=lam)[0])
    E = val - riesz.C_alpha * r ** (2 * params.alpha - params.n)
    return ExpansionError(lam, r, E, regime(params), predicted_bound(lam, r, params))


@lru_cache(maxsize=32)
def _riesz_cached(alpha: float, n: int, lam0: float, tol: float):
    params = FracParams(alpha, n)
    a = alpha
    p = min(2 * a, n - 2 * a)
    radii = np.array([0.5, 1.0, 2.0])
    ests = []
    for r in radii:
        v1 = kernel_values(params, [r], lam=lam0)[0].real * r ** (n - 2 * a)
        v2 = kernel_values(params, [r], lam=lam0 / 4)[0].real * r ** (n - 2 * a)
        f = 4.0 ** p
        ests.append((f * v2 - v1) / (f - 1))
    ests = np.array(ests)
    C = float(np.mean(ests))
    spread = float(np.max(np.abs(ests - C)) / abs(C))
    if spread > tol:
        raise ConvergenceError("Riesz constant inconsistent across radii", estimates=ests.tolist())
    return C, spread


def riesz_constant(params: FracParams, lam0: float = 1e-9, tol: float = 1e-4) -> RieszKernel:
    """C_alpha from the lam -> 0 limit of the resolvent at radii 0.5, 1, 2."""
    if not params.threshold_regular_free:
        raise ValueError("the Riesz kernel needs 2 alpha < n")
    C, spread = _riesz_cached(params.alpha, params.n, lam0, tol)
    return RieszKernel(C, 2 * params.alpha - params.n, riesz_gamma_constant(params), spread)


# ---------------------------------------------------------------------------
# symbol decomposition diagnostics
# ---------------------------------------------------------------------------


def symbol_decomposition(pt_or_z, params: FracParams, xi, cutoff: CutoffSpec = DEFAULT_CUTOFF) -> SymbolDecomposition:
    """Split 1/(|xi|^{2 alpha} - z^{2 alpha}) with chi(4|xi|) and 1 - chi(|xi|/2).

    ``pt_or_z`` is the complex z (|z| = 1, 0 < arg z < pi/(2 alpha)) or a
    SpectralPoint with lam = 1.
    """
    a = params.alpha
    z = pt_or_z.z(a) if isinstance(pt_or_z, SpectralPoint) else complex(pt_or_z)
    if abs(abs(z) - 1) > 1e-6:
        z = z / abs(z)
    if not (0 < np.angle(z) < math.pi / (2 * a)):
        raise ValueError("symbol_decomposition needs 0 < arg z < pi/(2 alpha)")
    xi = np.asarray(xi, dtype=float)
    h = 1.0 / (xi ** (2 * a) - z ** (2 * a))
    h_ctr = cutoff.chi(4 * xi) * h
    h_tail = cutoff.chi_tilde(xi / 2) * h
    h_ann = h - h_ctr - h_tail
    J = j_correction(z, xi / z, a)
    return SymbolDecomposition(xi, z, h_ctr, h_tail, h_ann, J)


def _hctr_transform(rho, params, cutoff):
    a = params.alpha

    def f(k):
        return cutoff.chi(4 * k) / (k ** (2 * a) - 1.0)

    return radial_fourier_transform(f, rho, params.n, (0.0, cutoff.outer / 4),
                                    breaks=(cutoff.inner / 4,), order=24, smallest=1e-100).real


def _htail_transform(rho, params, cutoff):
    """FT of (1 - chi(k/2))/(k^{2a} - 1) at arg z -> 0 (real on k >= 2)."""
    a, n = params.alpha, params.n
    C = riesz_gamma_constant(params)
    lo, hi = 2 * cutoff.inner, 2 * cutoff.outer

    # k^{-2a} - chi(k/2) k^{-2a}: Riesz kernel minus a compact transform
    def compact(k):
        return cutoff.chi(k / 2) * k ** (-2 * a)

    def rest(k):
        return cutoff.chi_tilde(k / 2) / (k ** (2 * a) * (k ** (2 * a) - 1.0))

    def rest_tail(k):
        return 1.0 / (k ** (2 * a) * (k ** (2 * a) - 1.0))

    part1 = C * rho ** (2 * a - n) - radial_fourier_transform(
        compact, rho, n, (0.0, hi), breaks=(lo,), order=24, smallest=1e-100)
    kmax = 2 * hi
    part2 = np.array([radial_fourier_transform(rest, [r], n, (lo, kmax), breaks=(hi,), order=24,
                                               tail=rest_tail)[0] for r in rho])
    return (part1 + part2).real


def tail_fourier_bound(N: int, params: FracParams, piece: str = "tail", rho_range=None,
                       samples: int | None = None, cutoff: CutoffSpec = DEFAULT_CUTOFF,
                       drift_tol: float = 0.1) -> BoundReport:
    """Bound ratios for the transformed center and tail symbols.

    ``piece="tail"``: |d^N h_tail^(rho)| / rho^{2a - n - N} on small rho.
    ``piece="ctr"``: |d^N h_ctr^(rho)| / <rho>^{-n - 2a - N} on large rho.
    """
    a, n = params.alpha, params.n
    if piece == "tail":
        rho_range = rho_range or (1e-2, 1.0)
        fn = _htail_transform
        samples = samples or 32
    elif piece == "ctr":
        rho_range = rho_range or (1.0, 1e2)
        fn = _hctr_transform
        # the transform oscillates with period ~ 4 pi / outer; sample it densely
        samples = samples or 256
    else:
        raise ValueError(f"unknown piece {piece!r}")
    offs, wts = central_weights(N)
    sups = []
    for count, step in ((samples, 1e-2), (2 * samples, 5e-3)):
        rho = np.geomspace(rho_range[0], rho_range[1], count)
        d = step * rho
        pts = (rho[:, None] + offs[None, :] * d[:, None]).ravel()
        f = fn(pts, params, cutoff).reshape(len(rho), len(offs))
        deriv = np.abs(f @ wts) / d ** N
        if piece == "tail":
            ratio = deriv / rho ** (2 * a - n - N)
        else:
            ratio = deriv / japanese(rho) ** (-n - 2 * a - N)
        sups.append(float(np.max(ratio)))
    drift = abs(sups[1] - sups[0]) / sups[0]
    return BoundReport(f"h_{piece}", N, sups[0], sups[1], float("nan"), float("nan"), float(drift),
                       bool(np.isfinite(sups).all() and drift < drift_tol), drift_tol)
