"""Potentials, Birman-Schwinger matrices and the perturbed resolvent.

Conventions
-----------
Kernel matrices hold kernel values A(x_i, x_j) and act by
(A f)_i = sum_j A_ij w_j f_j.  Operators acting on L^2 functions themselves
(M = U + v R_0 v, H_disc, P_ac) are stored in orthonormal coordinates
g = sqrt(w) f, where the discrete L^2 inner product is the Euclidean one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import json
import math
import struct

import numpy as np
from scipy import linalg
from scipy.fft import dst, idst

from .discretize import free_kernel, kernel_matrix
from .errors import ConvergenceError, NearSingularError
from .numerics import FracParams, SpatialGrid, fit_power_law, japanese, weighted_operator_norm
from .resolvent import central_weights

POTENTIAL_KINDS = ("gaussian-well", "bump", "polynomial-decay")


@dataclass
class Potential:
    """Real potential samples on a grid with decay metadata.

    ``beta`` is the decay exponent the potential is declared to satisfy and
    ``bound_constant`` the recorded max of |V| <x>^beta over the grid.
    """

    samples: np.ndarray
    grid: SpatialGrid
    beta: float
    kind: str = "custom"
    amplitude: float = 0.0
    width: float = 1.0
    bound_constant: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape != (self.grid.size,):
            raise ValueError("potential samples do not match the grid")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("potential samples must be finite")
        if not self.bound_constant:
            self.bound_constant = float(np.max(np.abs(self.samples) * japanese(self.grid.radii) ** self.beta))

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(np.abs(self.samples))

    @property
    def U(self) -> np.ndarray:
        # sign(V) with +1 where V vanishes; v = 0 there decouples the point
        return np.where(self.samples < 0, -1.0, 1.0)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.samples)

    @property
    def is_radial(self) -> bool:
        return self.grid.mode == "radial" or self.kind in POTENTIAL_KINDS

    def scaled(self, factor: float) -> "Potential":
        return Potential(factor * self.samples, self.grid, self.beta, self.kind,
                         factor * self.amplitude, self.width)

    def config(self) -> dict:
        return {"kind": self.kind, "amplitude": self.amplitude, "width": self.width, "beta": self.beta}


def _bump(r, width):
    x = np.asarray(r, dtype=float) / width
    out = np.zeros_like(x)
    inside = x < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
    return out


def sample_potential(kind: str, amplitude: float, width: float, beta: float, grid: SpatialGrid) -> Potential:
    """Sample a radial model potential.

    Parameters
    ----------
    kind : {"gaussian-well", "bump", "polynomial-decay"}
        ``amplitude * exp(-|x|^2/width^2)``, ``amplitude`` times a smooth bump
        supported in |x| < width, or exactly ``amplitude * <x>^-beta``.
    beta : float
        Decay exponent recorded with the potential (for the first two kinds
        any beta holds; the value is metadata checked by the solvers).
    """
    if kind not in POTENTIAL_KINDS:
        raise ValueError(f"unknown potential kind {kind!r}")
    if not width > 0:
        raise ValueError("width must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    r = grid.radii
    if kind == "gaussian-well":
        vals = amplitude * np.exp(-(r / width) ** 2)
    elif kind == "bump":
        vals = amplitude * _bump(r, width)
    else:
        vals = amplitude * japanese(r) ** (-beta)
    return Potential(vals, grid, float(beta), kind, float(amplitude), float(width))


def parse_potential_config(text: str) -> dict:
    """Parse ``key = value`` lines (kind, amplitude, width, beta); '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "kind":
            out[key] = val
        elif key in ("amplitude", "width", "beta"):
            out[key] = float(val)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    missing = {"kind", "amplitude", "width", "beta"} - out.keys()
    if missing:
        raise ValueError(f"missing keys: {sorted(missing)}")
    return out


def load_potential(path, grid: SpatialGrid) -> Potential:
    with open(path, encoding="utf-8") as fh:
        cfg = parse_potential_config(fh.read())
    return sample_potential(cfg["kind"], cfg["amplitude"], cfg["width"], cfg["beta"], grid)


# ---------------------------------------------------------------------------
# binary matrix dumps
# ---------------------------------------------------------------------------

_MAGIC = b"FDMAT001"


def dump_matrix(path, matrix, meta: dict | None = None) -> None:
    """Write a complex matrix in the documented binary layout.

    Layout: 8-byte magic ``FDMAT001``, little-endian uint64 header length,
    UTF-8 JSON header (shape, dtype, order, user metadata), then the entries
    row-major as little-endian float64 (re, im) pairs.
    """
    mat = np.ascontiguousarray(matrix, dtype="<c16")
    header = {"shape": list(mat.shape), "dtype": "complex128", "order": "C", "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(mat.tobytes(order="C"))


def load_matrix(path):
    """Inverse of :func:`dump_matrix`; returns (matrix, header)."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a matrix dump")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<c16")
    return data.reshape(header["shape"]).astype(complex), header


# ---------------------------------------------------------------------------
# Birman-Schwinger matrices
# ---------------------------------------------------------------------------


@lru_cache(maxsize=24)
def _free_matrix_cached(alpha, n, grid, lam):
    params = FracParams(alpha, n)
    K = kernel_matrix(free_kernel(params, None if lam == 0 else lam), grid)
    K.setflags(write=False)
    return K


def free_matrix(params: FracParams, grid: SpatialGrid, lam: float = 0.0, sign: int = 1) -> np.ndarray:
    """Kernel matrix of R_0^{sign}(lam^{2 alpha}) on the grid (G_0 at lam = 0)."""
    K = _free_matrix_cached(params.alpha, params.n, grid, float(lam))
    if lam == 0:
        return K.real.copy()
    return K.copy() if sign > 0 else np.conj(K)


def _free_or_offaxis(params, grid, lam, sign, eps):
    if eps == 0:
        return free_matrix(params, grid, lam, sign)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    w = lam ** (2 * params.alpha) + 1j * sign * eps
    return kernel_matrix(free_kernel(params, w=w), grid)


@dataclass
class BSOperator:
    """M = U + v R_0^{sign} v (or T_0 at lam = 0) in orthonormal coordinates."""

    matrix: np.ndarray
    lam: float
    sign: int
    U: np.ndarray = field(repr=False)
    free: np.ndarray = field(repr=False)

    @property
    def coupling(self) -> np.ndarray:
        """The Birman-Schwinger part v R_0 v."""
        return self.matrix - np.diag(self.U)


def _check_pot(pot: Potential, params: FracParams, grid: SpatialGrid):
    if grid is not pot.grid and grid != pot.grid:
        raise ValueError("potential was sampled on a different grid")
    if grid.mode == "full" and grid.dim != params.n:
        raise ValueError("grid dimension does not match n")
    if grid.mode == "radial" and params.n not in (2, 3):
        raise ValueError("radial grids are supported for n = 2, 3")


def build_m_matrix(lam: float, sign: int, pot: Potential, params: FracParams, grid: SpatialGrid | None = None,
                   eps: float = 0.0) -> BSOperator:
    """Assemble U + v R_0^{sign}(lam^{2 alpha}) v, or T_0 = U + v G_0 v at lam = 0.

    The result acts on orthonormal coordinates: its entries are
    U_i delta_ij + v_i sqrt(w_i) K_ij sqrt(w_j) v_j.  With ``eps > 0`` the
    free kernel is taken at lam^{2 alpha} + i sign eps instead.
    """
    grid = pot.grid if grid is None else grid
    _check_pot(pot, params, grid)
    if pot.is_zero:
        raise ValueError("V = 0: U + vR0v is degenerate; use the free resolvent directly")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0 and not params.threshold_regular_free:
        raise ValueError("T_0 needs 2 alpha < n")
    K = _free_or_offaxis(params, grid, lam, sign, eps) if lam > 0 else free_matrix(params, grid, 0.0)
    d = pot.v * np.sqrt(grid.weights)
    M = d[:, None] * K * d[None, :]
    M[np.diag_indices_from(M)] += pot.U
    if lam == 0:
        M = 0.5 * (M + M.T)
    return BSOperator(M, float(lam), int(sign), pot.U, K)


def smallest_singular_value(mat) -> float:
    return float(linalg.svdvals(mat)[-1])


def _rcond(mat) -> float:
    lu, piv, info = linalg.lapack.zgetrf(np.asarray(mat, dtype=complex))
    if info > 0:
        return 0.0
    anorm = np.max(np.sum(np.abs(mat), axis=0))
    rcond, _ = linalg.lapack.zgecon(lu, anorm, norm="1")
    return float(rcond)


def perturbed_resolvent(lam: float, sign: int, pot: Potential, params: FracParams,
                        grid: SpatialGrid | None = None, cond_max: float = 1e8,
                        eps: float = 0.0) -> np.ndarray:
    """Kernel matrix of R_V^{sign}(lam^{2 alpha}) from the symmetric resolvent identity.

    R_V = R_0 - R_0 v M^{-1} v R_0.  Raises :class:`NearSingularError` when the
    estimated condition number of M exceeds ``cond_max``.  ``eps > 0`` gives
    R_V(lam^{2 alpha} + i sign eps) off the real axis.
    """
    grid = pot.grid if grid is None else grid
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if pot.is_zero:
        return _free_or_offaxis(params, grid, lam, sign, eps)
    op = build_m_matrix(lam, sign, pot, params, grid, eps)
    rc = _rcond(op.matrix)
    if rc < 1.0 / cond_max:
        raise NearSingularError("M is numerically singular", lam=lam, sign=sign,
                                sigma_min=smallest_singular_value(op.matrix), rcond=rc)
    K = op.free
    d = pot.v * np.sqrt(grid.weights)
    right = d[:, None] * K  # D K
    sol = linalg.solve(op.matrix, right)
    return K - (K * d[None, :]) @ sol


@dataclass
class BornResult:
    matrix: np.ndarray
    term_norms: list
    diverged: bool = False


def born_series_sum(K: int, lam: float, sign: int, pot: Potential, params: FracParams,
                    grid: SpatialGrid | None = None, sigma: float = 0.55, growth_guard: float = 1e12) -> BornResult:
    """sum_{k=0}^{2K} (-R_0 V)^k R_0 as a kernel matrix.

    ``term_norms[k]`` is the <x>^-sigma weighted norm of the k-th term.  If
    the norms grow past ``growth_guard`` times the first one the summation
    stops and ``diverged`` is set.
    """
    if int(K) != K or not 0 <= K <= 12:
        raise ValueError("K must be an integer in [0, 12]")
    grid = pot.grid if grid is None else grid
    R0 = free_matrix(params, grid, lam, sign)
    w = grid.weights
    pos = grid.radii
    term = R0.copy()
    total = R0.copy()
    norms = [weighted_operator_norm(term, w, pos, sigma)]
    diverged = False
    vw = pot.samples * w
    for _ in range(1, 2 * int(K) + 1):
        term = -(R0 * vw[None, :]) @ term
        total += term
        norms.append(weighted_operator_norm(term, w, pos, sigma))
        if norms[-1] > growth_guard * norms[0]:
            diverged = True
            break
    return BornResult(total, norms, diverged)


def birman_schwinger_norm(lam: float, pot: Potential, params: FracParams, grid: SpatialGrid | None = None) -> float:
    """||v R_0^+ v|| (lam > 0) or ||v G_0 v|| (lam = 0) on L^2."""
    grid = pot.grid if grid is None else grid
    K = free_matrix(params, grid, lam, 1)
    d = pot.v * np.sqrt(grid.weights)
    return float(np.linalg.norm(d[:, None] * K * d[None, :], 2))


# ---------------------------------------------------------------------------
# discretized Hamiltonian
# ---------------------------------------------------------------------------


@dataclass
class DiscreteHamiltonian:
    """Self-adjoint H_disc in orthonormal coordinates, with its free spectrum."""

    matrix: np.ndarray
    grid: SpatialGrid
    params: FracParams
    free_eigenvalues: np.ndarray

    @property
    def continuum_tolerance(self) -> float:
        """10 times the smallest positive free eigenvalue."""
        pos = self.free_eigenvalues[self.free_eigenvalues > 0]
        return 10.0 * float(pos.min())

    def to_grid_function(self, g):
        """Orthonormal coordinates -> grid samples (vectors or columns)."""
        g = np.asarray(g)
        sw = np.sqrt(self.grid.weights)
        return g / (sw if g.ndim == 1 else sw[:, None])


def free_spectrum(params: FracParams, grid: SpatialGrid):
    """Eigenvalues |xi|^{2 alpha} of the discrete free operator and its eigenbasis kind."""
    a = params.alpha
    if grid.mode == "full":
        N, L = grid.points_per_axis, 2 * grid.extent
        f = 2 * math.pi * np.fft.fftfreq(N, d=L / N)
        mesh = np.meshgrid(*([f] * grid.dim), indexing="ij")
        xi2 = sum(m ** 2 for m in mesh)
        return xi2 ** a
    M = grid.size
    xi = math.pi * np.arange(1, M + 1) / grid.extent
    return xi ** (2 * a)


def free_operator_matrix(params: FracParams, grid: SpatialGrid) -> np.ndarray:
    """(-Delta)^alpha in orthonormal coordinates.

    Full grids: periodic box, fractional power applied in the discrete Fourier
    basis.  Radial grids (l = 0 sector): Dirichlet sine basis for u = r f
    (n = 3) with cell-centred nodes, diagonalized by DST-II.
    """
    sym = free_spectrum(params, grid)
    if grid.mode == "full":
        shape = sym.shape
        m = grid.size
        eye = np.eye(m).reshape((m,) + shape)
        axes = tuple(range(1, grid.dim + 1))
        H = np.fft.ifftn(sym * np.fft.fftn(eye, axes=axes), axes=axes).reshape(m, m)
        H = H.real if np.allclose(H.imag, 0, atol=1e-12 * np.abs(H).max()) else H
        return 0.5 * (H + H.conj().T)
    if params.n != 3:
        raise ValueError("radial Hamiltonians are implemented for n = 3 (u = r f reduction)")
    M = grid.size
    eye = np.eye(M)
    # orthonormal DST-II / DST-III pair; the mode k has frequency pi k / extent
    coef = dst(eye, type=2, norm="ortho", axis=0)
    H = idst(sym[:, None] * coef, type=2, norm="ortho", axis=0)
    return 0.5 * (H + H.T)


def discretize_hamiltonian(params: FracParams, pot: Potential, grid: SpatialGrid | None = None) -> DiscreteHamiltonian:
    """H_disc = (-Delta)^alpha + V in orthonormal coordinates (see module docstring).

    On radial grids the coordinates are sqrt(w) f, proportional to u = r f,
    so the radial operator is the sine-series power of -d^2/dr^2 on u.
    """
    grid = pot.grid if grid is None else grid
    if grid.mode == "full" and params.n > 2:
        raise ValueError("full-tensor Hamiltonians are limited to n <= 2; use a radial grid for n = 3")
    if grid.mode == "full" and grid.dim != params.n:
        raise ValueError("grid dimension does not match n")
    if grid.mode == "radial" and not pot.is_radial:
        raise ValueError("radial grids need a radial potential")
    H0 = free_operator_matrix(params, grid)
    H = H0 + np.diag(pot.samples)
    return DiscreteHamiltonian(H, grid, params, np.sort(free_spectrum(params, grid).ravel()))


@dataclass
class BoundStateSet:
    """Eigenpairs of H_disc below -tolerance; eigenvectors are grid functions."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, sum_i w_i |psi_i|^2 = 1
    tolerance: float
    lowest: float

    def __len__(self):
        return len(self.eigenvalues)


def eigendecomposition(H: DiscreteHamiltonian):
    E, Q = linalg.eigh(H.matrix)
    return E, Q


def bound_states(H: DiscreteHamiltonian, eig=None):
    """Bound states and the projector P_ac = I - sum |psi_j><psi_j|.

    Returns ``(BoundStateSet, P_ac)``; P_ac is in orthonormal coordinates.
    """
    E, Q = eigendecomposition(H) if eig is None else eig
    tol = H.continuum_tolerance
    sel = E < -tol
    Qb = Q[:, sel]
    res = H.matrix @ Qb - Qb * E[sel][None, :]
    if Qb.size and np.max(np.linalg.norm(res, axis=0)) > 1e-8 * max(1.0, float(np.max(np.abs(E)))):
        raise ConvergenceError("eigenpair residual too large", residual=float(np.max(np.abs(res))))
    P = np.eye(H.matrix.shape[0], dtype=Q.dtype) - Qb @ Qb.conj().T
    psi = Qb / np.sqrt(H.grid.weights)[:, None]
    return BoundStateSet(E[sel], psi, tol, float(E[0])), P


# ---------------------------------------------------------------------------
# limiting absorption scaling
# ---------------------------------------------------------------------------


def _resolvent(lam, sign, pot, params, grid):
    if pot is None or pot.is_zero:
        return free_matrix(params, grid, lam, sign)
    return perturbed_resolvent(lam, sign, pot, params, grid)


def lap_norm(lam: float, sigma: float, j: int, pot: Potential | None, params: FracParams, grid: SpatialGrid,
             sign: int = 1, step: float = 0.02) -> float:
    """||<x>^-sigma d^j/dlam^j R_V^{sign}(lam^{2 alpha}) <y>^-sigma||.

    Derivatives are central differences with step ``step * lam``.
    """
    if j == 0:
        R = _resolvent(lam, sign, pot, params, grid)
    else:
        offs, wts = central_weights(j)
        dl = step * lam
        R = sum(c * _resolvent(lam + o * dl, sign, pot, params, grid) for o, c in zip(offs, wts)) / dl ** j
    return weighted_operator_norm(R, grid.weights, grid.radii, sigma)


def lap_scaling(lam_list, sigma: float, j: int, pot: Potential | None, params: FracParams,
                grid: SpatialGrid | None = None, sign: int = 1, excess: float = 0.05):
    """Power-law fit of the weighted norm of d^j R_V over lam_list.

    Returns a :class:`DecayFit` whose ``exponent`` is the raw log-log slope
    (about 1 - 2 alpha); per-lambda norms are in ``extra``.
    """
    lam_list = np.asarray(lam_list, dtype=float)
    if np.any(lam_list < 2 - 1e-12) or np.any(lam_list > 64 + 1e-12):
        raise ValueError("lambda values must lie in [2, 64]")
    if sigma < j + 0.5 + excess - 1e-12:
        raise ValueError(f"sigma must be >= j + 1/2 + {excess}")
    if pot is not None and not pot.beta > 1 + 2 * j:
        raise ValueError("the potential needs beta > 1 + 2j")
    grid = pot.grid if (grid is None and pot is not None) else grid
    if grid is None:
        raise ValueError("a grid is required")
    norms = np.array([lap_norm(lam, sigma, j, pot, params, grid, sign) for lam in lam_list])
    fit = fit_power_law(lam_list, norms)
    fit.extra = {"lambda": lam_list.tolist(), "norms": norms.tolist(), "sigma": sigma, "j": j}
    return fit
