"""Grids, quadrature rules, cutoffs, weighted norms and oscillatory quadrature.

Everything here is shared by the resolvent, perturbation and dispersive code.
Quadrature is built from composite Gauss-Legendre panels; oscillatory
integrals get panels sized to the local phase rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FracParams:
    """Order ``alpha`` of the fractional Laplacian and the dimension ``n``."""

    alpha: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def threshold_regular_free(self) -> bool:
        """Zero is a regular point of the free operator (2 alpha < n)."""
        return 2 * self.alpha < self.n

    @property
    def high_energy_ok(self) -> bool:
        return (self.n + 1) / 4 <= self.alpha < self.n / 2

    @property
    def nu(self) -> float:
        """Bessel order n/2 - 1 of the radial Fourier transform."""
        return self.n / 2 - 1

    @property
    def sphere_area(self) -> float:
        return sphere_area(self.n)


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} (2 for n = 1)."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int) -> float:
    return sphere_area(n) / n


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialGrid:
    """Cell-centred grid on [-extent, extent]^dim, or its radial section.

    In ``full`` mode the nodes are the cell centres of a uniform tensor grid
    and every weight is ``spacing**dim``.  In ``radial`` mode the nodes are the
    radii ``(j + 1/2) * spacing`` covering [0, extent] and the weights are the
    exact volumes of the spherical shells around them, so that weights sum to
    the volume of the ball of radius ``extent``.
    """

    dim: int
    extent: float
    points_per_axis: int
    mode: str = "full"

    @property
    def spacing(self) -> float:
        return 2 * self.extent / self.points_per_axis

    @property
    def axis(self) -> np.ndarray:
        h = self.spacing
        return -self.extent + (np.arange(self.points_per_axis) + 0.5) * h

    @property
    def radii(self) -> np.ndarray:
        """Radii of the nodes (|x| in full mode)."""
        if self.mode == "radial":
            m = self.points_per_axis // 2
            return (np.arange(m) + 0.5) * self.spacing
        return np.sqrt(np.sum(self.nodes ** 2, axis=1))

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, dim) in full mode, (size,) radially."""
        if self.mode == "radial":
            return self.radii
        ax = self.axis
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def index(self) -> np.ndarray:
        """Integer lattice indices of the nodes (full mode), shape (size, dim)."""
        p = np.arange(self.points_per_axis)
        mesh = np.meshgrid(*([p] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)

    @property
    def size(self) -> int:
        if self.mode == "radial":
            return self.points_per_axis // 2
        return self.points_per_axis ** self.dim

    @property
    def weights(self) -> np.ndarray:
        h = self.spacing
        if self.mode == "radial":
            r = self.radii
            return sphere_area(self.dim) * ((r + h / 2) ** self.dim - (r - h / 2) ** self.dim) / self.dim
        return np.full(self.size, h ** self.dim)

    @property
    def measure(self) -> float:
        """Measure of the discretized domain."""
        if self.mode == "radial":
            return ball_volume(self.dim) * self.extent ** self.dim
        return (2 * self.extent) ** self.dim

    def refined(self, factor: int = 2) -> "SpatialGrid":
        return SpatialGrid(self.dim, self.extent, self.points_per_axis * factor, self.mode)

    def enlarged(self, factor: float = 2.0) -> "SpatialGrid":
        """Same spacing on a domain ``factor`` times wider."""
        pts = int(round(self.points_per_axis * factor))
        pts += pts % 2
        return SpatialGrid(self.dim, self.extent * pts / self.points_per_axis, pts, self.mode)


def make_grid(dim: int, extent: float, points: int, mode: str = "full") -> SpatialGrid:
    """Build a cell-centred grid.

    Parameters
    ----------
    dim : int
        Spatial dimension (1, 2 or 3).
    extent : float
        Half-width of the box; radial grids cover [0, extent].
    points : int
        Points per axis, even and at least 8.  A radial grid has points/2 radii.
    mode : {"full", "radial"}
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if int(points) != points or points < 8 or points % 2:
        raise ValueError(f"points must be an even integer >= 8, got {points}")
    if not extent > 0:
        raise ValueError(f"extent must be positive, got {extent}")
    if mode not in ("full", "radial"):
        raise ValueError(f"unknown grid mode {mode!r}")
    if mode == "full" and dim == 3 and points > 64:
        raise ValueError("full 3-d grids are limited to 64 points per axis; use mode='radial'")
    return SpatialGrid(int(dim), float(extent), int(points), mode)


def japanese(x):
    """<x> = sqrt(1 + |x|^2)."""
    return np.sqrt(1.0 + np.abs(x) ** 2)


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------


def _psi(x):
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth nonincreasing cutoff: 1 on [0, inner], 0 on [outer, inf)."""

    inner: float = 1.0
    outer: float = 2.0

    def __post_init__(self):
        if not (0 < self.inner < self.outer):
            raise ValueError("cutoff needs 0 < inner < outer")

    def chi(self, s):
        s = np.asarray(s, dtype=float)
        x = (np.abs(s) - self.inner) / (self.outer - self.inner)
        a, b = _psi(1.0 - x), _psi(x)
        return a / (a + b)

    def chi_tilde(self, s):
        return 1.0 - self.chi(s)

    __call__ = chi


DEFAULT_CUTOFF = CutoffSpec()


@dataclass(frozen=True)
class PhaseSpec:
    """Phase t*lam^(2 alpha) + lam*R of the Stone-formula integrals."""

    t: float
    R: float
    alpha: float

    @property
    def stationary_point(self):
        if self.t < 0 and self.R > 0 and self.alpha != 0.5:
            return (-self.R / (2 * self.alpha * self.t)) ** (1.0 / (2 * self.alpha - 1))
        return None

    def __call__(self, lam):
        return self.t * lam ** (2 * self.alpha) + lam * self.R

    def derivative(self, lam):
        return 2 * self.alpha * self.t * lam ** (2 * self.alpha - 1) + self.R

    def curvature(self, lam):
        a = self.alpha
        return 2 * a * (2 * a - 1) * self.t * lam ** (2 * a - 2)


# ---------------------------------------------------------------------------
# special functions and quadrature
# ---------------------------------------------------------------------------


def bessel_j(nu, x):
    """Bessel function of the first kind J_nu(x) for real x >= 0."""
    return special.jv(nu, x)


@lru_cache(maxsize=None)
def gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(edges, order: int = 16):
    """Composite Gauss-Legendre nodes and weights on consecutive panels."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    nodes = (half * x + 0.5 * (a + b)).ravel()
    weights = (half * w).ravel()
    return nodes, weights


def graded_edges(a: float, b: float, smallest: float, ratio: float = 0.25):
    """Panel edges on [a, b] refined geometrically towards ``a``.

    The first panel has width about ``smallest``; panels grow by 1/ratio.
    Suited to integrands with an integrable power singularity at ``a``.
    """
    if b <= a:
        return np.array([a, b])
    width = b - a
    levels = max(1, int(math.ceil(math.log(max(smallest, 1e-300) / width) / math.log(ratio))))
    inner = a + width * ratio ** np.arange(levels, 0, -1)
    return np.concatenate(([a], inner, [b]))


def log_panel_rule(lo: float, hi: float, breaks=(), order: int = 24, per_decade: float = 1.0):
    """Gauss-Legendre rule in the variable log(y) on [lo, hi].

    Returns nodes y and weights for dy (the Jacobian is folded in).
    """
    edges = [math.log(lo)]
    for b in sorted(breaks):
        if lo < b < hi:
            edges.append(math.log(b))
    edges.append(math.log(hi))
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((b - a) / math.log(10) * per_decade)))
        fine.extend(np.linspace(a, b, k + 1)[:-1])
    fine.append(edges[-1])
    t, wt = panel_rule(np.array(fine), order)
    y = np.exp(t)
    return y, wt * y


# ---------------------------------------------------------------------------
# weighted operator norms
# ---------------------------------------------------------------------------


def weighted_operator_norm(kernel, weights, positions, sigma: float = 0.0, method: str = "auto") -> float:
    """Norm of <x>^-sigma A <y>^-sigma on the discretized L^2.

    ``kernel`` holds A(x_i, x_j); the operator acts by
    (A f)_i = sum_j A_ij w_j f_j.  In orthonormal coordinates
    (g = sqrt(w) f) this is the matrix sqrt(W) D A D sqrt(W), whose largest
    singular value is returned.

    Parameters
    ----------
    kernel : (m, m) array
    weights : (m,) array
        Quadrature weights of the grid.
    positions : (m,) array
        |x_i| for each node (radii on radial grids).
    sigma : float
        Weight exponent, >= 0.
    method : {"auto", "dense", "iterative"}
    """
    kernel = np.asarray(kernel)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError("kernel must be a square matrix")
    if kernel.shape[0] != len(weights):
        raise ValueError("kernel does not match the grid")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not np.all(np.isfinite(kernel)):
        raise ValueError("kernel has non-finite entries")
    d = np.sqrt(np.asarray(weights, dtype=float)) * japanese(np.asarray(positions)) ** (-sigma)
    mat = d[:, None] * kernel * d[None, :]
    return spectral_norm(mat, method)


def spectral_norm(mat, method: str = "auto") -> float:
    m = mat.shape[0]
    if method == "auto":
        method = "dense" if m <= 800 else "iterative"
    if method == "dense":
        return float(np.linalg.norm(mat, 2))
    from scipy.sparse.linalg import svds

    try:
        s = svds(mat, k=1, return_singular_vectors=False, tol=1e-10, random_state=0)
    except TypeError:  # pragma: no cover - older scipy
        s = svds(mat, k=1, return_singular_vectors=False, tol=1e-10)
    return float(s[0])


# ---------------------------------------------------------------------------
# oscillatory quadrature
# ---------------------------------------------------------------------------


def _phase_rate(phase: PhaseSpec, lam):
    lam = np.maximum(lam, 1e-300)
    # near lam = 0 the curvature term is capped by 1/lam (geometric grading covers it)
    return np.abs(phase.derivative(lam)) + np.minimum(np.sqrt(np.abs(phase.curvature(lam))), 1.0 / lam)


def oscillatory_edges(phase: PhaseSpec, a: float, b: float, step: float = math.pi / 2,
                      max_width: float | None = None, grade_to: float | None = None):
    """Panel edges on [a, b] such that the phase moves by at most ``step``.

    The local rate combines |phi'| and sqrt|phi''| so panels stay small near
    stationary points.  Inside [lam0/2, 2 lam0] the step is halved.  When
    ``a == 0`` the first panel is graded geometrically towards 0.
    """
    if max_width is None:
        max_width = (b - a) / 8
    lam0 = phase.stationary_point
    brk = [a, b]
    if lam0 is not None:
        brk += [p for p in (lam0 / 2, lam0, 2 * lam0) if a < p < b]
    brk = sorted(set(brk))
    # sample the rate on a fine reference mesh and march in "phase units"
    ref = np.unique(np.concatenate([np.linspace(a, b, 4097), np.asarray(brk)]))
    if a == 0.0:
        first = ref[1]
        ref = np.unique(np.concatenate([ref, first * np.geomspace(1e-12, 1.0, 60)]))
    mid = 0.5 * (ref[1:] + ref[:-1])
    rate = _phase_rate(phase, mid)
    if lam0 is not None:
        near = (mid >= lam0 / 2) & (mid <= 2 * lam0)
        rate = np.where(near, 2 * rate, rate)
    rate = np.maximum(rate, step / max_width)
    seg = rate * np.diff(ref)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    npan = max(1, int(math.ceil(cum[-1] / step)))
    edges = np.interp(np.linspace(0.0, cum[-1], npan + 1), cum, ref)
    edges = np.unique(np.concatenate([edges, brk]))
    if a == 0.0 or (grade_to is not None and grade_to > 0):
        g = graded_edges(edges[0], edges[1], (grade_to or 1e-10) * max(edges[1], 1e-300))
        edges = np.concatenate([g, edges[2:]])
    return edges


def oscillatory_rule(phase: PhaseSpec, a: float, b: float, step: float = math.pi / 2,
                     order: int = 12, max_width: float | None = None):
    """Nodes and weights for integrals of e^{i phase} times a smooth amplitude."""
    edges = oscillatory_edges(phase, a, b, step=step, max_width=max_width)
    return panel_rule(edges, order)


def _as_callable(amplitude):
    if callable(amplitude):
        return amplitude
    lam, vals = amplitude
    lam = np.asarray(lam, dtype=float)
    vals = np.asarray(vals, dtype=complex)
    re, im = CubicSpline(lam, vals.real), CubicSpline(lam, vals.imag)
    return lambda x: re(x) + 1j * im(x)


def oscillatory_integral(phase: PhaseSpec, amplitude, interval, rtol: float = 1e-6,
                         atol: float = 1e-14, max_refinements: int = 6, order: int = 12,
                         step: float = math.pi / 2) -> complex:
    """Integral of exp(i (t lam^2a + lam R)) a(lam) over ``interval``.

    Parameters
    ----------
    phase : PhaseSpec
    amplitude : callable or (lam_samples, values)
        Vectorized amplitude, or samples that are interpolated by cubic splines.
    interval : (a, b)
        With 0 <= a < b.
    rtol, atol : float
        Successive refinements (halving the phase step) must agree to
        ``max(atol, rtol*|I|)``.
    step : float
        Initial phase increment per panel.

    Raises
    ------
    ConvergenceError
        If refinements keep disagreeing.
    """
    a, b = float(interval[0]), float(interval[1])
    if not (0 <= a < b):
        raise ValueError("interval must satisfy 0 <= a < b")
    f = _as_callable(amplitude)
    prev = None
    history = []
    for _ in range(max_refinements + 1):
        x, w = oscillatory_rule(phase, a, b, step=step, order=order)
        val = complex(np.sum(w * np.exp(1j * phase(x)) * f(x)))
        history.append(val)
        if prev is not None and abs(val - prev) <= max(atol, rtol * abs(val)):
            return val
        prev = val
        step /= 2
    raise ConvergenceError("oscillatory integral did not converge", history=history)


# ---------------------------------------------------------------------------
# radial Fourier transforms
# ---------------------------------------------------------------------------


def radial_fourier_transform(func, rho, n: int, support, breaks=(), order: int = 16,
                             smallest: float = 1e-12, tail=None):
    """Radial Fourier transform of a radial function given on frequency space.

    Computes (2 pi)^{-n/2} rho^{-nu} int k^{n/2} J_nu(k rho) func(k) dk over
    ``support = (0, kmax)`` with panels graded at 0 and sized to resolve the
    Bessel oscillation.  ``tail`` is an optional callable g(k) with a smooth,
    non-oscillatory amplitude on [kmax, inf); its contribution is added with
    scipy's Fourier-weighted QAWF rule using the large-argument Bessel
    expansion.

    Parameters
    ----------
    func : callable
        Vectorized function of k.
    rho : array_like
        Positive radii.
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    nu = n / 2 - 1
    k0, kmax = support
    out = np.empty(rho.shape, dtype=complex)
    for i, r in enumerate(rho):
        pts = sorted({k0, kmax, *[b for b in breaks if k0 < b < kmax]})
        edges = [graded_edges(pts[0], pts[1], smallest * (pts[1] - pts[0]))]
        for lo, hi in zip(pts[:-1], pts[1:]):
            if lo == pts[0]:
                continue
            width = min(math.pi / (2 * r), 0.25 * max(lo, 1e-3))
            width = min(width, (hi - lo))
            m = max(1, int(math.ceil((hi - lo) / width)))
            edges.append(np.linspace(lo, hi, m + 1)[1:])
        # subdivide the graded first block if it is long compared to the period
        e = np.concatenate(edges)
        long = np.diff(e) > math.pi / (2 * r)
        if np.any(long):
            parts = [e[:1]]
            for lo, hi in zip(e[:-1], e[1:]):
                m = max(1, int(math.ceil((hi - lo) / (math.pi / (2 * r)))))
                parts.append(np.linspace(lo, hi, m + 1)[1:])
            e = np.concatenate(parts)
        k, w = panel_rule(e, order)
        val = np.sum(w * k ** (n / 2) * special.jv(nu, k * r) * func(k))
        if tail is not None:
            val = val + _bessel_tail(tail, r, n, kmax)
        out[i] = (2 * math.pi) ** (-n / 2) * r ** (-nu) * val
    return out


def _bessel_tail(g, r: float, n: int, kmax: float):
    """int_kmax^inf k^{n/2} J_nu(k r) g(k) dk via the Hankel asymptotic form."""
    from scipy.integrate import quad

    nu = n / 2 - 1
    mu = 4 * nu * nu
    omega = nu * math.pi / 2 + math.pi / 4

    def P(x):
        return 1 - (mu - 1) * (mu - 9) / (2 * (8 * x) ** 2) + (mu - 1) * (mu - 9) * (mu - 25) * (mu - 49) / (24 * (8 * x) ** 4)

    def Q(x):
        return (mu - 1) / (8 * x) - (mu - 1) * (mu - 9) * (mu - 25) / (6 * (8 * x) ** 3)

    def amp_c(k):  # multiplies cos(k r - omega)
        return k ** (n / 2) * math.sqrt(2 / (math.pi * k * r)) * P(k * r) * g(k)

    def amp_s(k):  # multiplies -sin(k r - omega)
        return -k ** (n / 2) * math.sqrt(2 / (math.pi * k * r)) * Q(k * r) * g(k)

    co, so = math.cos(omega), math.sin(omega)

    def piece(fun, weight):
        return quad(fun, kmax, np.inf, weight=weight, wvar=r, limlst=200)[0]

    vals = []
    for part in (np.real, np.imag):
        fc = lambda k: float(part(amp_c(k)))  # noqa: E731
        fs = lambda k: float(part(amp_s(k)))  # noqa: E731
        # cos(kr - w) = cos kr cos w + sin kr sin w ; sin(kr - w) = sin kr cos w - cos kr sin w
        vals.append(piece(fc, "cos") * co + piece(fc, "sin") * so
                    + piece(fs, "sin") * co - piece(fs, "cos") * so)
    return vals[0] + 1j * vals[1]


# ---------------------------------------------------------------------------
# power-law fits
# ---------------------------------------------------------------------------


@dataclass
class DecayFit:
    """Least-squares power law y ~ prefactor * x^(+-exponent).

    ``residual`` is the RMS deviation in natural-log units.  For decay fits
    the exponent is the positive decay rate; for growth/scaling fits
    (:func:`fit_power_law`) it is the raw log-log slope.
    """

    exponent: float
    prefactor: float
    residual: float
    t_window: tuple
    flagged: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "residual": self.residual,
            "t_window": list(self.t_window),
            "flagged": self.flagged,
            **({"extra": self.extra} if self.extra else {}),
        }


def fit_power_law(x, y, residual_flag: float = 0.2) -> DecayFit:
    """Fit log y = log A + p log x; returns the slope p as ``exponent``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two samples")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("power-law fits need positive finite samples")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    res = float(np.sqrt(np.mean((ly - (slope * lx + icpt)) ** 2)))
    return DecayFit(float(slope), float(np.exp(icpt)), res, (float(x.min()), float(x.max())),
                    flagged=res > residual_flag)
