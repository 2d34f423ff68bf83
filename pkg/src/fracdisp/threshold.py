"""Zero-energy analysis: T_0 = U + v G_0 v, resonance functions, coupling sweeps.

G_0 is the Riesz kernel C |x|^{2 alpha - n}, the inverse of (-Delta)^alpha
when 2 alpha < n.  A numerical null vector phi of T_0 gives the candidate
resonance psi = -G_0 v phi, which satisfies psi = -G_0 V psi and phi = U v psi.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np
from scipy import integrate, linalg, signal

from . import kernels
from .discretize import ball_average, free_kernel, offset_table
from .numerics import FracParams, SpatialGrid, ball_volume, fit_power_law, japanese
from .perturbed import (Potential, bound_states, build_m_matrix, discretize_hamiltonian,
                        free_matrix, sample_potential)
from .resolvent import riesz_gamma_constant

REGULAR, RESONANT = "Regular", "Resonant"


def _require_regular_free(params: FracParams):
    if not params.threshold_regular_free:
        raise ValueError("zero-energy analysis needs 2 alpha < n")


def resample(pot: Potential, grid: SpatialGrid) -> Potential:
    """The same model potential sampled on another grid."""
    if pot.kind == "custom":
        raise ValueError("only model potentials (sample_potential) can be resampled")
    return sample_potential(pot.kind, pot.amplitude, pot.width, pot.beta, grid)


def greens_operator_apply(f, params: FracParams, grid: SpatialGrid, method: str = "fft", backend=None):
    """(G_0 f)(x_i) = sum_j G_0(x_i - x_j) w_j f_j with a ball-averaged diagonal.

    On full grids ``method="fft"`` convolves with the lattice-offset table
    (zero-padded, O(m log m)); ``method="direct"`` sums over all pairs.
    """
    _require_regular_free(params)
    f = np.asarray(f)
    if f.shape != (grid.size,):
        raise ValueError("f does not match the grid")
    if grid.mode == "radial":
        return free_matrix(params, grid, 0.0) @ (grid.weights * f)
    fw = grid.weights * f
    if method == "fft":
        table = offset_table(free_kernel(params), grid).real
        N, dim = grid.points_per_axis, grid.dim
        idx = np.abs(np.arange(-(N - 1), N))
        full = table[np.ix_(*([idx] * dim))]
        conv = signal.fftconvolve(fw.reshape((N,) * dim), full, mode="full")
        return conv[(slice(N - 1, 2 * N - 1),) * dim].reshape(-1)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    C = riesz_gamma_constant(params)
    p = 2 * params.alpha - params.n
    radius = grid.spacing / ball_volume(grid.dim) ** (1 / grid.dim)
    diag = ball_average(free_kernel(params), grid.dim, radius).real
    if np.iscomplexobj(fw):
        re = kernels.riesz_apply(grid.nodes, fw.real, C, p, diag, backend=backend)
        im = kernels.riesz_apply(grid.nodes, fw.imag, C, p, diag, backend=backend)
        return re + 1j * im
    return kernels.riesz_apply(grid.nodes, fw, C, p, diag, backend=backend)


@dataclass
class ThresholdReport:
    """Outcome of the zero-energy classification.

    ``null_vectors`` are grid functions (orthonormal in weighted l^2): the
    right singular vectors of T_0 with singular value below ``tol``, or the
    one for ``sigma_min`` when there are none.
    """

    sigma_min: float
    sigma_min_fine: float
    classification: str
    null_vectors: np.ndarray = field(repr=False)
    refinement_consistency: float
    coupling: float
    tol: float

    def to_dict(self) -> dict:
        return {
            "sigma_min": self.sigma_min,
            "sigma_min_fine": self.sigma_min_fine,
            "classification": self.classification,
            "refinement_consistency": self.refinement_consistency,
            "coupling": self.coupling,
            "tol": self.tol,
            "null_space_dimension": int(self.null_vectors.shape[1]),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _check_beta(pot: Potential, params: FracParams):
    a, n = params.alpha, params.n
    need = 4 * a if a < n / 4 else 2 * a
    if not pot.beta > need:
        raise ValueError(f"potential decay beta = {pot.beta} must exceed {need}")


def t0_singular(pot: Potential, params: FracParams, grid: SpatialGrid | None = None):
    """Singular values and right singular vectors (grid functions) of T_0."""
    grid = pot.grid if grid is None else grid
    T0 = build_m_matrix(0.0, 1, pot, params, grid).matrix
    _, s, vh = linalg.svd(T0)
    vecs = vh.conj().T / np.sqrt(grid.weights)[:, None]
    return s, vecs


def classify_threshold(pot: Potential, params: FracParams, grid: SpatialGrid | None = None,
                       tol: float = 1e-3, min_points: int = 16) -> ThresholdReport:
    """Classify zero energy from T_0 on the grid and on its refinement.

    Resonant iff sigma_min < tol on the fine grid and it shrank by more than
    half under refinement; a small sigma_min alone never classifies.
    """
    _require_regular_free(params)
    grid = pot.grid if grid is None else grid
    _check_beta(pot, params)
    if grid.points_per_axis < min_points:
        raise ValueError(f"grid too coarse for the refinement check (< {min_points} points per axis)")
    s, vecs = t0_singular(pot, params, grid)
    fine = grid.refined()
    s_fine, _ = t0_singular(resample(pot, fine), params, fine)
    smin, smin_f = float(s[-1]), float(s_fine[-1])
    ratio = smin_f / smin if smin > 0 else 0.0
    resonant = smin_f < tol and ratio < 0.5
    sel = s < tol
    if not np.any(sel):
        sel = s == s[-1]
    return ThresholdReport(smin, smin_f, RESONANT if resonant else REGULAR, vecs[:, sel], ratio,
                           pot.amplitude, tol)


@dataclass
class ResonanceFunction:
    """psi = -G_0 v phi with its discretized norms and consistency residuals."""

    psi: np.ndarray = field(repr=False)
    weighted_norms: dict
    residual: float  # ||psi + G_0 V psi|| / ||psi||
    reconstruction_error: float  # ||phi - U v psi||
    in_kernel: bool

    def to_dict(self) -> dict:
        return {"weighted_norms": self.weighted_norms, "residual": self.residual,
                "reconstruction_error": self.reconstruction_error, "in_kernel": self.in_kernel}


def _l2(f, w, weight=None):
    weight = 1.0 if weight is None else weight
    return float(np.sqrt(np.sum(w * weight * np.abs(f) ** 2)))


def resonance_function(phi, pot: Potential, params: FracParams, grid: SpatialGrid | None = None,
                       delta: float = 0.05, tol: float = 1e-6) -> ResonanceFunction:
    """Candidate resonance psi = -G_0 v phi for a normalized grid function phi.

    ``in_kernel`` is set when phi = U v psi holds to ``tol``.
    """
    grid = pot.grid if grid is None else grid
    phi = np.asarray(phi)
    w = grid.weights
    nrm = _l2(phi, w)
    if not np.isclose(nrm, 1.0, rtol=1e-8):
        raise ValueError("phi must be normalized in L^2")
    v, U = pot.v, pot.U
    psi = -greens_operator_apply(v * phi, params, grid)
    recon = _l2(phi - U * v * psi, w)
    back = greens_operator_apply(pot.samples * psi, params, grid)
    psi_norm = _l2(psi, w)
    res = _l2(psi + back, w) / psi_norm if psi_norm > 0 else math.inf
    jx = japanese(grid.radii)
    norms = {
        "L2_weighted": _l2(psi, w, jx ** (-2 * (params.alpha + delta))),
        "L2": psi_norm,
        "Linf": float(np.max(np.abs(psi))),
        "weight_exponent": -(params.alpha + delta),
    }
    return ResonanceFunction(psi, norms, float(res), recon, bool(recon <= tol))


# ---------------------------------------------------------------------------
# coupling sweeps
# ---------------------------------------------------------------------------


def _birman_schwinger_symmetric(shape: Potential, params: FracParams, grid: SpatialGrid):
    """B = b^{1/2} G_0 b^{1/2} in orthonormal coordinates, for V = -c b with b >= 0."""
    d = np.sqrt(np.abs(shape.samples) * grid.weights)
    K = free_matrix(params, grid, 0.0)
    B = d[:, None] * K * d[None, :]
    return 0.5 * (B + B.T)


def critical_coupling(shape: Potential, params: FracParams, grid: SpatialGrid | None = None):
    """Coupling c* at which T_0 for V = -c |shape| first becomes singular.

    For a sign-definite well T_0 = -I + c B with B positive semidefinite, so
    c* = 1 / max eig(B) and the null vector is the top eigenvector.
    Returns ``(c_star, phi)`` with phi a normalized grid function.
    """
    _require_regular_free(params)
    grid = shape.grid if grid is None else grid
    B = _birman_schwinger_symmetric(shape, params, grid)
    mu, vec = linalg.eigh(B, subset_by_index=[B.shape[0] - 1, B.shape[0] - 1])
    phi = vec[:, 0] / np.sqrt(grid.weights)
    phi = phi if phi[np.argmax(np.abs(phi))] > 0 else -phi
    return 1.0 / float(mu[0]), phi


@dataclass
class SweepResult:
    """sigma_min(T_0) and H_disc ground-state data along a coupling sweep.

    ``scaling_exponent[i]`` is log2(E_0(L) / E_0(2L)) for the lowest
    eigenvalue on the box and on the box of twice the side (same spacing).
    """

    couplings: np.ndarray
    sigma_min: np.ndarray
    lowest_eigenvalue: np.ndarray
    lowest_eigenvalue_enlarged: np.ndarray
    scaling_exponent: np.ndarray
    eigen_tolerance: float
    critical_exponent: float
    sigma_crossing: float | None
    eigen_crossing: float | None
    tolerance_crossing: float | None

    @property
    def resolution(self) -> float:
        return float(np.max(np.diff(self.couplings)))

    def to_dict(self) -> dict:
        def arr(x):
            return [None if not np.isfinite(v) else float(v) for v in x]
        return {
            "couplings": arr(self.couplings),
            "sigma_min": arr(self.sigma_min),
            "lowest_eigenvalue": arr(self.lowest_eigenvalue),
            "lowest_eigenvalue_enlarged": arr(self.lowest_eigenvalue_enlarged),
            "scaling_exponent": arr(self.scaling_exponent),
            "eigen_tolerance": self.eigen_tolerance,
            "critical_exponent": self.critical_exponent,
            "sigma_crossing": self.sigma_crossing,
            "eigen_crossing": self.eigen_crossing,
            "tolerance_crossing": self.tolerance_crossing,
            "resolution": self.resolution,
        }


def _first_sign_change(x, y):
    for i in range(len(y) - 1):
        if not (np.isfinite(y[i]) and np.isfinite(y[i + 1])):
            continue
        if y[i] == 0:
            return float(x[i])
        if y[i] * y[i + 1] < 0:
            return float(x[i] - y[i] * (x[i + 1] - x[i]) / (y[i + 1] - y[i]))
    return None


def _ground_energy(params, shape_abs, c, grid):
    pot = Potential(-c * shape_abs, grid, 100.0)
    H = discretize_hamiltonian(params, pot, grid)
    return float(linalg.eigvalsh(H.matrix, subset_by_index=[0, 0])[0]), H.continuum_tolerance


def coupling_sweep(shape: Potential, params: FracParams, couplings, grid: SpatialGrid | None = None,
                   hamiltonian: bool = True) -> SweepResult:
    """Sweep V = -c |shape| and locate the zero-energy crossings.

    The T_0 crossing is where its eigenvalue nearest zero changes sign.  On a
    periodic box the lowest eigenvalue of H_disc is negative for every c > 0
    (the constant mode is pulled down by the well), so "crossing 0" is
    located by box scaling: |E_0| falls like L^{-n} below the critical
    coupling, tends to a bound-state energy above it, and scales like the
    free level spacing L^{-2 alpha} at it.  ``eigen_crossing`` is where
    log2(E_0(L)/E_0(2L)) passes 2 alpha.  ``tolerance_crossing`` is where
    E_0(L) first drops below minus the continuum tolerance.
    """
    grid = shape.grid if grid is None else grid
    couplings = np.asarray(couplings, dtype=float)
    B = _birman_schwinger_symmetric(shape, params, grid)
    mu = linalg.eigvalsh(B)
    sig, t0_top = [], []
    for c in couplings:
        ev = -1.0 + c * mu
        sig.append(float(np.min(np.abs(ev))))
        t0_top.append(float(ev[-1]))
    nan = np.full(len(couplings), np.nan)
    low, low2, tol = nan.copy(), nan.copy(), math.nan
    if hamiltonian:
        big = grid.enlarged(2.0)
        base, base2 = np.abs(shape.samples), np.abs(resample(shape, big).samples)
        for i, c in enumerate(couplings):
            low[i], tol = _ground_energy(params, base, c, grid)
            low2[i], _ = _ground_energy(params, base2, c, big)
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.log2(low / low2)
    crit = 2 * params.alpha
    s_cross = _first_sign_change(couplings, np.array(t0_top))
    e_cross = _first_sign_change(couplings, expo - crit) if hamiltonian else None
    t_cross = _first_sign_change(couplings, low + tol) if hamiltonian else None
    return SweepResult(couplings, np.array(sig), low, low2, expo, tol, crit, s_cross, e_cross, t_cross)


def enlargement_test(shape: Potential, params: FracParams, grid: SpatialGrid | None = None, factor: float = 2.0,
                     growth_limit: float = 1.1) -> dict:
    """Tell a threshold eigenvalue from a resonance by enlarging the domain.

    At the critical coupling of each domain psi = -G_0 v phi is formed; if
    its L^2 norm grows by more than ``growth_limit`` on the larger domain
    the zero-energy state is reported as a resonance.
    """
    grid = shape.grid if grid is None else grid
    out = {}
    for label, g in (("base", grid), ("enlarged", grid.enlarged(factor))):
        sh = resample(shape, g)
        c, phi = critical_coupling(sh, params, g)
        pot = sh.scaled(c / abs(sh.amplitude) if sh.amplitude else c)
        pot = Potential(-np.abs(pot.samples), g, sh.beta, sh.kind, -c, sh.width)
        rf = resonance_function(phi, pot, params, g, tol=1e-6)
        out[label] = {"coupling": c, **rf.weighted_norms}
    growth = out["enlarged"]["L2"] / out["base"]["L2"]
    out["L2_growth"] = growth
    out["kind"] = "resonance" if growth > growth_limit else "eigenvalue"
    return out


# ---------------------------------------------------------------------------
# singularity of iterated kernels (G_0 V)^k G_0, radial, n = 3
# ---------------------------------------------------------------------------


def _radial_pair_kernel(r, s, params: FracParams):
    """l = 0 average of G_0(|r omega - s omega'|) in three dimensions."""
    C = riesz_gamma_constant(params)
    p = 2 * params.alpha - 3
    if abs(p + 2) < 1e-12:
        return C * np.log((r + s) / np.abs(r - s)) / (2 * r * s)
    q = p + 2
    return C * ((r + s) ** q - np.abs(r - s) ** q) / (q * 2 * r * s)


def iterated_kernel(k: int, params: FracParams, V, r, s_max: float = 40.0):
    """[(G_0 V)^k G_0](x, 0) at |x| = r for a radial potential V(s), n = 3.

    Nested one-dimensional quadratures of the exact l = 0 kernel; the inner
    profile is tabulated on a log grid and interpolated.
    """
    if params.n != 3:
        raise ValueError("iterated kernels are implemented for n = 3")
    _require_regular_free(params)
    C = riesz_gamma_constant(params)
    p = 2 * params.alpha - 3
    r = np.atleast_1d(np.asarray(r, dtype=float))
    prev = lambda s: C * s ** p  # noqa: E731
    for level in range(k):
        targets = r if level == k - 1 else np.geomspace(1e-8, s_max, 400)
        vals = np.array([_apply_radial(prev, V, t, params, s_max) for t in targets])
        if level == k - 1:
            return vals
        logt, logv = np.log(targets), np.log(np.abs(vals))
        sign = np.sign(vals[0])
        prev = (lambda lt, lv, sg: (lambda s: sg * np.exp(np.interp(np.log(s), lt, lv))))(logt, logv, sign)
    return prev(r)


def _apply_radial(f, V, r, params, s_max):
    g = lambda s: _radial_pair_kernel(r, s, params) * V(s) * f(s) * 4 * math.pi * s * s  # noqa: E731
    pts = sorted({r, min(10 * r, s_max), min(100 * r, s_max), 1.0})
    edges = [1e-12] + [p for p in pts if 1e-12 < p < s_max] + [s_max]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(g, a, b, limit=400, epsabs=0, epsrel=1e-10)
        total += val
    return total


def singularity_exponent(k: int, params: FracParams, V, r_window=(1e-5, 1e-3), samples: int = 9):
    """Fitted small-r exponent s of (G_0 V)^k G_0 ~ r^{-s}, with its target."""
    r = np.geomspace(*r_window, samples)
    vals = np.abs(iterated_kernel(k, params, V, r))
    fit = fit_power_law(r, vals)
    target = max(0.0, params.n - 2 * (k + 1) * params.alpha)
    return {"k": k, "exponent": -fit.exponent, "target": target, "residual": fit.residual}
