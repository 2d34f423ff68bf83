"""Quadrature matrices of radial convolution kernels on grids.

A kernel matrix ``K`` stores kernel values k(|x_i - x_j|); the discretized
integral operator acts as (A f)_i = sum_j K_ij w_j f_j with the grid weights.
Self-interaction entries are replaced by cell averages of the kernel (the
kernels are singular at 0).

On radial grids the matrix is the l = 0 sector: the kernel averaged over the
relative angle, K0(r, s) = <k(|r omega - s omega'|)>.  In three dimensions it
is exact through the antiderivative Phi(d) = int_0^d k(u) u du,

    K0(r, s) = (Phi(r + s) - Phi(|r - s|)) / (2 r s),

and in two dimensions the oscillatory Helmholtz part is averaged exactly with
Graf's addition theorem while the smooth remainder is averaged by quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from . import kernels
from .numerics import FracParams, SpatialGrid, ball_volume, graded_edges, panel_rule, sphere_area
from .resolvent import laplace_resolvent, riesz_gamma_constant, unit_remainder, unit_remainder_fast


@dataclass
class RadialKernel:
    """k(d) = pole_coef * R_Lap(kw^2)(d) + remainder(d), optionally conjugated.

    ``C`` and ``p`` describe the leading singularity C d^p of the whole
    kernel at d -> 0 (``C = 0`` when there is none of power type).
    """

    params: FracParams
    kw: complex | None
    pole_coef: complex
    remainder: object  # callable d -> values
    C: float
    p: float
    conj: bool = False
    label: str = ""

    def pole(self, d):
        d = np.asarray(d, dtype=float)
        if self.kw is None:
            return np.zeros(d.shape, dtype=complex)
        return self.pole_coef * laplace_resolvent(self.kw, d, self.params.n)

    def rem(self, d):
        return np.asarray(self.remainder(np.asarray(d, dtype=float)), dtype=complex)

    def _c(self, v):
        return np.conj(v) if self.conj else v

    def __call__(self, d):
        return self._c(self.pole(d) + self.rem(d))

    def regular(self, d):
        """k(d) - C d^p (before conjugation is applied)."""
        d = np.asarray(d, dtype=float)
        out = self.pole(d) + self.rem(d)
        if self.C:
            out = out - self.C * d ** self.p
        return out


def free_kernel(params: FracParams, lam=None, sign: int = 1, w=None, fast: bool = True) -> RadialKernel:
    """Radial kernel of R_0^{sign}(lam^{2 alpha}), of R_0(w), or of G_0 (lam = 0 / None).

    ``fast`` uses the cached spline of the boundary remainder.
    """
    a, n = params.alpha, params.n
    C = riesz_gamma_constant(params) if params.threshold_regular_free else 0.0
    p = 2 * a - n
    if w is None and (lam is None or lam == 0):
        if not params.threshold_regular_free:
            raise ValueError("G_0 needs 2 alpha < n")
        return RadialKernel(params, None, 0.0, lambda d: C * d ** p, C, p, label="G0")
    if w is None:
        lam = float(lam)
        scale = lam ** (n - 2 * a)
        if a == 1.0:
            rem = lambda d: np.zeros(np.shape(d))  # noqa: E731
        elif fast:
            rem = lambda d: scale * unit_remainder_fast(lam * d, params)  # noqa: E731
        else:
            rem = lambda d: scale * unit_remainder(lam * d, params).real  # noqa: E731
        return RadialKernel(params, complex(lam), lam ** (2 - 2 * a) / a, rem, C, p,
                            conj=sign < 0, label=f"R0{'+' if sign > 0 else '-'}({lam})")
    w = complex(w)
    flip = w.imag < 0
    if flip:
        w = w.conjugate()
    mu = abs(w) ** (1 / (2 * a))
    what = w / abs(w)
    kw = w ** (1 / (2 * a))
    rem = lambda d: mu ** (n - 2 * a) * unit_remainder(mu * d, params, what)  # noqa: E731
    if np.angle(w) / (2 * a) >= math.pi / 2:
        return RadialKernel(params, None, 0.0, rem, C, p, conj=flip, label=f"R0({w})")
    return RadialKernel(params, kw, kw ** (2 - 2 * a) / a, rem, C, p, conj=flip, label=f"R0({w})")


# ---------------------------------------------------------------------------
# full tensor grids
# ---------------------------------------------------------------------------


def ball_average(kernel: RadialKernel, dim: int, radius: float) -> complex:
    """Mean of the kernel over the ball of given radius centred at 0."""
    S = sphere_area(dim)
    vol = ball_volume(dim) * radius ** dim
    edges = graded_edges(0.0, radius, 1e-12 * radius)
    u, wu = panel_rule(edges, 16)
    reg = np.sum(wu * kernel.regular(u) * S * u ** (dim - 1))
    sing = 0.0
    if kernel.C:
        sing = kernel.C * S * radius ** (kernel.p + dim) / (kernel.p + dim)
    val = (reg + sing) / vol
    return np.conj(val) if kernel.conj else val


def offset_table(kernel: RadialKernel, grid: SpatialGrid) -> np.ndarray:
    """Kernel at all nonnegative lattice offsets, cell-averaged at offset 0."""
    N, dim, h = grid.points_per_axis, grid.dim, grid.spacing
    ax = np.arange(N)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    dist = h * np.sqrt(sum(m.astype(float) ** 2 for m in mesh))
    flat = dist.ravel()
    vals = np.empty(flat.shape, dtype=complex)
    nz = flat > 0
    uniq, inv = np.unique(flat[nz], return_inverse=True)
    vals[nz] = kernel(uniq)[inv]
    radius = h / ball_volume(dim) ** (1 / dim)  # ball with the cell's volume
    vals[~nz] = ball_average(kernel, dim, radius)
    return vals.reshape(dist.shape)


def kernel_matrix(kernel: RadialKernel, grid: SpatialGrid, backend=None) -> np.ndarray:
    """Dense matrix of kernel values on the grid (see module docstring)."""
    if grid.mode == "full":
        if grid.dim != kernel.params.n:
            raise ValueError("grid dimension does not match the kernel dimension")
        return kernels.pair_gather(offset_table(kernel, grid), grid.index, backend=backend)
    if kernel.params.n == 3 and grid.dim == 3:
        return _radial_matrix_3d(kernel, grid)
    if kernel.params.n == 2 and grid.dim == 2:
        return _radial_matrix_2d(kernel, grid, backend=backend)
    raise ValueError("radial kernel matrices are available for n = 2 and n = 3")


# ---------------------------------------------------------------------------
# radial grids, n = 3
# ---------------------------------------------------------------------------


class _Phi3:
    """Antiderivative Phi(d) = int_0^d k(u) u du of a three-dimensional kernel."""

    def __init__(self, kernel: RadialKernel, dmax: float, h: float, sub: int = 16):
        self.k = kernel
        self.delta = h / sub
        m = int(math.ceil(dmax / self.delta)) + 2
        grid = self.delta * np.arange(m + 1)
        self.grid = grid
        # regular part (k - C u^p - pole) u, integrated cell by cell
        edges = grid
        x, wx = np.polynomial.legendre.leggauss(8)
        a, b = edges[:-1, None], edges[1:, None]
        u = 0.5 * (b - a) * x + 0.5 * (a + b)
        wts = 0.5 * (b - a) * wx
        f = self._rem_reg(u.ravel()).reshape(u.shape) * u
        # the first cell carries a possibly singular integrand: grade it
        e0 = graded_edges(0.0, self.delta, 1e-12 * self.delta)
        u0, w0 = panel_rule(e0, 16)
        first = np.sum(w0 * self._rem_reg(u0) * u0)
        cells = np.sum(wts * f, axis=1)
        cells[0] = first
        cum = np.concatenate(([0.0], np.cumsum(cells)))
        self.cum = cum
        self._re = CubicSpline(grid, cum.real)
        self._im = CubicSpline(grid, cum.imag)

    def _rem_reg(self, u):
        out = self.k.rem(u)
        if self.k.C:
            out = out - self.k.C * u ** self.k.p
        return out

    def sing(self, d):
        C, p = self.k.C, self.k.p
        if not C:
            return np.zeros(np.shape(d))
        d = np.asarray(d, dtype=float)
        if abs(p + 2) < 1e-12:
            with np.errstate(divide="ignore"):
                return C * np.log(d)
        return C * d ** (p + 2) / (p + 2)

    def pole(self, d):
        if self.k.kw is None:
            return np.zeros(np.shape(d), dtype=complex)
        kw = self.k.kw
        d = np.asarray(d, dtype=float)
        return self.k.pole_coef * (np.exp(1j * kw * d) - 1.0) / (4j * math.pi * kw)

    def reg_at(self, d, exact_grid=False):
        d = np.asarray(d, dtype=float)
        if exact_grid:
            idx = np.rint(d / self.delta).astype(np.int64)
            return self.cum[idx]
        return self._re(d) + 1j * self._im(d)

    def __call__(self, d, exact_grid=False):
        return self.sing(d) + self.pole(d) + self.reg_at(d, exact_grid)


def _symmetrize_neighbours(K):
    """Source-cell averages differ slightly between (i, i+1) and (i+1, i); use their mean."""
    i = np.arange(K.shape[0] - 1)
    mean = 0.5 * (K[i, i + 1] + K[i + 1, i])
    K[i, i + 1] = mean
    K[i + 1, i] = mean


def _radial_matrix_3d(kernel: RadialKernel, grid: SpatialGrid) -> np.ndarray:
    r = grid.radii
    h = grid.spacing
    phi = _Phi3(kernel, 2 * r[-1] + 2 * h, h)
    plus = r[:, None] + r[None, :]
    minus = np.abs(r[:, None] - r[None, :])
    m = len(r)
    diff = np.zeros((m, m), dtype=complex)
    off = minus > 0
    diff[off] = phi(plus[off], exact_grid=True) - phi(minus[off], exact_grid=True)
    K = diff / (2 * r[:, None] * r[None, :])
    # near-diagonal entries: average over the source cell
    w = grid.weights
    x, wx = np.polynomial.legendre.leggauss(24)
    for i in range(m):
        for j in range(max(0, i - 1), min(m, i + 2)):
            lo, hi = r[j] - h / 2, r[j] + h / 2
            pts = [lo, hi] if j != i else [lo, r[i], hi]
            acc = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                s = 0.5 * (b - a) * x + 0.5 * (a + b)
                ws = 0.5 * (b - a) * wx
                val = (phi(r[i] + s) - phi(np.abs(r[i] - s))) / (2 * r[i] * s)
                acc = acc + np.sum(ws * val * 4 * math.pi * s * s)
            K[i, j] = acc / w[j]
    _symmetrize_neighbours(K)
    return np.conj(K) if kernel.conj else K


# ---------------------------------------------------------------------------
# radial grids, n = 2
# ---------------------------------------------------------------------------


def _theta_rule(order: int = 48):
    """Rule for (1/pi) int_0^pi f(theta) d theta graded towards theta = 0."""
    edges = graded_edges(0.0, math.pi, 1e-6, ratio=0.3)
    t, w = panel_rule(edges, order // 4 if order >= 16 else 4)
    return np.cos(t), w / math.pi


def _power_average(r, s, p):
    """(1/pi) int_0^pi (r^2 + s^2 - 2 r s cos t)^{p/2} dt via 2F1."""
    big = np.maximum(r, s)
    x = np.minimum(r, s) / big
    mu = -p / 2
    return big ** p * special.hyp2f1(mu, mu, 1.0, x * x)


def _graf_pole(kernel: RadialKernel, r, s):
    if kernel.kw is None:
        return np.zeros(np.broadcast(r, s).shape, dtype=complex)
    lo, hi = np.minimum(r, s), np.maximum(r, s)
    kw = kernel.kw
    return kernel.pole_coef * 0.25j * special.jv(0, kw * lo) * special.hankel1(0, kw * hi)


def _radial_matrix_2d(kernel: RadialKernel, grid: SpatialGrid, backend=None) -> np.ndarray:
    r = grid.radii
    h = grid.spacing
    m = len(r)
    # tabulate the regular part of the remainder: rem - C d^p
    dd = h / 64
    dgrid = dd * np.arange(int(math.ceil(2 * r[-1] / dd)) + 4)
    dsafe = np.maximum(dgrid, dd * 1e-3)

    def rem_reg(d):
        out = kernel.rem(d)
        if kernel.C:
            out = out - kernel.C * d ** kernel.p
        return out

    table = rem_reg(dsafe)
    cq, wq = _theta_rule()
    K = kernels.angular_average(r, r, 0.0, dd, table, cq, wq, backend=backend)
    K = K + _graf_pole(kernel, r[:, None], r[None, :])
    if kernel.C:
        with np.errstate(divide="ignore"):
            K = K + kernel.C * _power_average(r[:, None], r[None, :], kernel.p)
    # near-diagonal entries: average over the source cell, regular part exact
    w = grid.weights
    x, wx = np.polynomial.legendre.leggauss(24)
    t_edges = graded_edges(0.0, math.pi, 1e-9, ratio=0.25)
    tt, wt = panel_rule(t_edges, 16)
    for i in range(m):
        for j in range(max(0, i - 1), min(m, i + 2)):
            lo, hi = r[j] - h / 2, r[j] + h / 2
            pts = [lo, hi] if j != i else [lo, r[i], hi]
            acc = 0.0
            for a, b in zip(pts[:-1], pts[1:]):
                s = 0.5 * (b - a) * x + 0.5 * (a + b)
                ws = 0.5 * (b - a) * wx
                d = np.sqrt(np.maximum(r[i] ** 2 + s[:, None] ** 2 - 2 * r[i] * s[:, None] * np.cos(tt)[None, :], 1e-300))
                reg = (rem_reg(d.ravel()).reshape(d.shape) @ wt) / math.pi
                val = reg + _graf_pole(kernel, r[i], s)
                if kernel.C:
                    val = val + kernel.C * _power_average(r[i], s, kernel.p)
                acc = acc + np.sum(ws * val * 2 * math.pi * s)
            K[i, j] = acc / w[j]
    _symmetrize_neighbours(K)
    return np.conj(K) if kernel.conj else K
