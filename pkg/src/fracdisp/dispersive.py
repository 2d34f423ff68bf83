"""e^{itH} P_ac kernels by Stone's formula and by eigenbasis synthesis.

Stone's formula with E = lam^{2 alpha} gives

    e^{itH} P_ac (H^s) = alpha/(pi i) int_0^inf e^{it lam^{2a}} lam^{w} chi(lam/L)
                         [R_V^+ - R_V^-](lam^{2a}) d lam,

with w = 2 alpha - 1, or w = 4 alpha - 3 when the smoothing H^{1 - 1/alpha}
is folded in (n = 2, alpha < 1).  Two realizations are provided:

* free kernels (V = 0) per distance R: the jump is the Bessel closed form,
  split as e^{i lam R} F_+ + e^{-i lam R} F_-, and each branch is an
  oscillatory integral with phase t lam^{2a} +- lam R;
* perturbed kernels on a fixed lam mesh: J_V = 2i Im R_V^+ is computed once
  per node, interpolated on each panel, and integrated against the
  t-dependent factor with Filon-type weights (the t-dependence never touches
  the linear solves).

Times t < 0 are obtained as complex conjugates (real potentials).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import time

import numpy as np
from scipy import linalg
from scipy.interpolate import BarycentricInterpolator

from . import kernels
from .errors import ConvergenceError
from .numerics import (CutoffSpec, DecayFit, FracParams, PhaseSpec, SpatialGrid, gauss_legendre,
                       graded_edges, oscillatory_integral, panel_rule)
from .perturbed import Potential, bound_states, build_m_matrix, discretize_hamiltonian, free_matrix
from .resolvent import extract_Fpm, normalized_jump

CHI = CutoffSpec(1.0, 2.0)


def weight_exponent(params: FracParams, smoothing: bool) -> float:
    """lam-weight of the Stone integrand: 2 alpha - 1, or 4 alpha - 3 when smoothed."""
    if smoothing:
        if not (params.n == 2 and params.alpha < 1):
            raise ValueError("smoothing is defined for n = 2 and alpha < 1")
        return 4 * params.alpha - 3
    return 2 * params.alpha - 1


def _window(lam, L, band):
    """chi(lam/L) times the energy band selector (all, low = chi(lam), high = 1 - chi(lam))."""
    out = CHI.chi(np.asarray(lam) / L)
    if band == "low":
        out = out * CHI.chi(lam)
    elif band == "high":
        out = out * CHI.chi_tilde(lam)
    elif band != "all":
        raise ValueError(f"unknown band {band!r}")
    return out


def _band_edges(L, band):
    hi = 2.0 * L
    if band == "low":
        hi = min(hi, 2.0)
    lo = 1.0 if band == "high" else 0.0
    return lo, hi


# ---------------------------------------------------------------------------
# free kernels per distance
# ---------------------------------------------------------------------------


def free_stone_value(t: float, R: float, params: FracParams, smoothing: bool = False, L: float = 2.0,
                     band: str = "all", rtol: float = 1e-7) -> complex:
    """Free Stone integral at one distance R >= 0 for t != 0."""
    if t == 0:
        raise ValueError("t must be nonzero")
    if t < 0:
        return np.conj(free_stone_value(-t, R, params, smoothing, L, band, rtol))
    a, n = params.alpha, params.n
    w = weight_exponent(params, smoothing)
    lo, hi = _band_edges(L, band)
    if lo >= hi:
        return 0.0j
    pref = a / (math.pi * 1j)
    # normalized jump = lam^{2a - n} J; the factor lam^{n - 2a} joins the weight
    power = w + n - 2 * a

    def amp(lam, which):
        fp, fm = extract_Fpm(lam * R, params)
        f = fp if which > 0 else fm
        return pref * lam ** power * _window(lam, L, band) * f

    # absolute floor: round-off relative to the integral of |amplitude|
    xs = np.linspace(lo, hi, 2001)[1:]
    scale = float(np.sum(np.abs(amp(xs, 1)) + np.abs(amp(xs, -1))) * (hi - lo) / 2000)
    atol = 1e-11 * scale
    plus = oscillatory_integral(PhaseSpec(t, R, a), lambda x: amp(x, 1), (lo, hi), rtol=rtol, atol=atol,
                                step=2 * math.pi, order=16)
    minus = oscillatory_integral(PhaseSpec(-t, R, a), lambda x: np.conj(amp(x, -1)), (lo, hi), rtol=rtol,
                                 atol=atol, step=2 * math.pi, order=16)
    return complex(plus + np.conj(minus))


def free_stone_profile(t: float, radii, params: FracParams, smoothing: bool = False, L: float = 2.0,
                       band: str = "all") -> np.ndarray:
    """Free Stone kernel at each distance in ``radii``."""
    return np.array([free_stone_value(t, float(R), params, smoothing, L, band) for R in np.atleast_1d(radii)])


def covariant_radii(t: float, params: FracParams, rho_max: float = 6.0, samples: int = 25):
    """Distances R = rho |t|^{1/(2 alpha)}, rho in [0, rho_max].

    The free kernel is a function of R |t|^{-1/(2 alpha)}, so the same rho
    samples at every t give a consistent stand-in for the sup over all x, y.
    """
    return np.linspace(0.0, rho_max, samples) * abs(t) ** (1.0 / (2 * params.alpha))


# ---------------------------------------------------------------------------
# lam mesh with Filon-type weights
# ---------------------------------------------------------------------------


@dataclass
class LambdaMesh:
    """Panels on [0, lam_max] with Gauss-Legendre nodes.

    Panel edges sit at integer multiples of ``width`` so that meshes with
    the same width and order are nested, which lets a cached solver reuse
    its nodes across cutoffs. The first panel [0, width] is graded
    geometrically towards 0.
    """

    lam_max: float
    width: float = 0.2
    order: int = 8

    def __post_init__(self):
        npan = max(1, int(math.ceil(self.lam_max / self.width)))
        uniform = self.width * np.arange(npan + 1)
        first = graded_edges(0.0, uniform[1], 1e-4 * uniform[1], ratio=0.25)
        self.edges = np.concatenate([first, uniform[2:]])
        x, _ = gauss_legendre(self.order)
        a, b = self.edges[:-1, None], self.edges[1:, None]
        self.nodes = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()

    @property
    def panels(self):
        return len(self.edges) - 1

    def panel_nodes(self, p):
        return self.nodes[p * self.order:(p + 1) * self.order]


def filon_weights(mesh: LambdaMesh, t_list, params: FracParams, power: float, L: float,
                  band: str = "all", sub_step: float = math.pi / 2, sub_order: int = 12) -> np.ndarray:
    """c[t, k] = int e^{i t lam^{2a}} lam^power chi(lam/L) l_k(lam) d lam over the node's panel.

    l_k is the Lagrange basis polynomial of node k on its panel, so that
    sum_k c[t, k] f(lam_k) integrates the panelwise interpolant of f exactly
    against the oscillatory weight.
    """
    t_list = np.atleast_1d(np.asarray(t_list, dtype=float))
    a = params.alpha
    coef = np.zeros((len(t_list), len(mesh.nodes)), dtype=complex)
    lo, hi = _band_edges(L, band)
    for p in range(mesh.panels):
        pa, pb = mesh.edges[p], mesh.edges[p + 1]
        qa, qb = max(pa, lo), min(pb, hi)
        if qa >= qb:
            continue
        nodes = mesh.panel_nodes(p)
        # sub-quadrature resolving the fastest phase over all t on this panel
        tmax = float(np.max(np.abs(t_list)))
        dphi = tmax * (qb ** (2 * a) - qa ** (2 * a))
        nsub = max(1, int(math.ceil(dphi / sub_step)))
        sub = np.linspace(qa, qb, nsub + 1)
        if qa == 0.0:
            sub = np.concatenate([graded_edges(0.0, sub[1], 1e-10 * sub[1]), sub[2:]])
        x, wx = panel_rule(sub, sub_order)
        basis = np.empty((len(nodes), len(x)))
        for k in range(len(nodes)):
            yk = np.zeros(len(nodes))
            yk[k] = 1.0
            basis[k] = BarycentricInterpolator(nodes, yk)(x)
        base = wx * x ** power * _window(x, L, band)
        phase = np.exp(1j * np.outer(t_list, x ** (2 * a)))
        coef[:, p * mesh.order:(p + 1) * mesh.order] = (phase * base[None, :]) @ basis.T
    return coef


# ---------------------------------------------------------------------------
# Stone kernels on grids
# ---------------------------------------------------------------------------


def sup_region(grid: SpatialGrid, fraction: float = 0.5) -> np.ndarray:
    """Indices of nodes with |x| <= fraction * extent (boundary buffer)."""
    return np.nonzero(grid.radii <= fraction * grid.extent + 1e-12)[0]


class StoneSolver:
    """Perturbed Stone kernels with J_V cached per lam node.

    ``region`` restricts the output to pairs (x_i, x_j) with i, j in region.
    """

    def __init__(self, params: FracParams, pot: Potential | None, grid: SpatialGrid, region=None,
                 mesh_width: float = 0.3, mesh_order: int = 8, backend=None):
        if grid.mode != "full" and params.n != 3:
            raise ValueError("radial Stone kernels are implemented for n = 3")
        self.params = params
        self.pot = pot
        self.grid = grid
        self.region = np.arange(grid.size) if region is None else np.asarray(region)
        self.mesh_width = mesh_width
        self.mesh_order = mesh_order
        self.backend = backend
        self._cache = {}
        self.solve_time = 0.0

    def _free_jump(self, lam):
        """lam^{2a-n} [R_0^+ - R_0^-] at region pairs (closed form)."""
        g = self.grid
        if g.mode == "full":
            table = _jump_offset_table(lam, self.params, g)
            return kernels.pair_gather(table, g.index[self.region], backend=self.backend)
        raise ValueError("free jumps on radial grids go through the resolvent matrices")

    def normalized_jump(self, lam: float) -> np.ndarray:
        """lam^{2 alpha - n} [R_V^+ - R_V^-](lam^{2 alpha}) on region pairs."""
        key = float(lam)
        if key in self._cache:
            return self._cache[key]
        t0 = time.perf_counter()
        a, n = self.params.alpha, self.params.n
        reg = self.region
        if self.pot is None or self.pot.is_zero:
            if self.grid.mode == "full":
                J = self._free_jump(lam)
            else:
                K = free_matrix(self.params, self.grid, lam, 1)[np.ix_(reg, reg)]
                J = 2j * K.imag * lam ** (2 * a - n)
        else:
            g = self.grid
            K = free_matrix(self.params, g, lam, 1)
            M = build_m_matrix(lam, 1, self.pot, self.params, g).matrix
            d = self.pot.v * np.sqrt(g.weights)
            sol = linalg.solve(M, d[:, None] * K[:, reg])
            RV = K[np.ix_(reg, reg)] - (K[reg, :] * d[None, :]) @ sol
            # R_V^- = conj(R_V^+) entrywise for real V
            J = 2j * RV.imag * lam ** (2 * a - n)
        self._cache[key] = J
        self.solve_time += time.perf_counter() - t0
        return J

    def kernels(self, t_list, smoothing: bool = False, L: float = 2.0, band: str = "all") -> np.ndarray:
        """Stone kernels for every t in t_list, shape (len(t_list), r, r)."""
        t_list = np.atleast_1d(np.asarray(t_list, dtype=float))
        if np.any(t_list == 0):
            raise ValueError("t must be nonzero")
        a, n = self.params.alpha, self.params.n
        power = weight_exponent(self.params, smoothing) + n - 2 * a
        mesh = LambdaMesh(2.0 * L, self.mesh_width, self.mesh_order)
        tabs = np.abs(t_list)
        coef = filon_weights(mesh, tabs, self.params, power, L, band) * (a / (math.pi * 1j))
        r = len(self.region)
        acc = np.zeros((len(t_list), r, r), dtype=complex)
        lo, hi = _band_edges(L, band)
        for k, lam in enumerate(mesh.nodes):
            if lam < lo or lam > hi or not np.any(coef[:, k]):
                continue
            kernels.stone_accumulate(acc, coef[:, k], self.normalized_jump(lam), backend=self.backend)
        neg = t_list < 0
        acc[neg] = np.conj(acc[neg])
        return acc


def _jump_offset_table(lam, params: FracParams, grid: SpatialGrid):
    """Closed-form normalized jump at all lattice offsets."""
    N, dim, h = grid.points_per_axis, grid.dim, grid.spacing
    ax = np.arange(N)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    dist = h * np.sqrt(sum(m.astype(float) ** 2 for m in mesh))
    return normalized_jump(lam * dist, params)


def stone_evolution_kernel(t: float, params: FracParams, pot: Potential | None, grid: SpatialGrid,
                           smoothing: bool = False, L: float = 2.0, region=None, solver: StoneSolver | None = None):
    """Stone kernel of e^{itH} P_ac (H^{1-1/alpha} when smoothing) at region pairs."""
    solver = solver or StoneSolver(params, pot, grid, region)
    return solver.kernels([t], smoothing, L)[0]


# ---------------------------------------------------------------------------
# eigenbasis synthesis
# ---------------------------------------------------------------------------


class EigenbasisEvolution:
    """e^{itH} P_ac from a dense eigendecomposition of H_disc.

    The continuum modes are those in the range of P_ac (E >= -tolerance).
    With smoothing the weight |E|^{1 - 1/alpha} is applied; modes with
    |E| below 1e-12 of the spectral radius get weight 0 then.  An optional
    ``L`` applies the same cutoff chi(|E|^{1/(2 alpha)}/L) as the Stone
    integrals.
    """

    def __init__(self, params: FracParams, pot: Potential | None, grid: SpatialGrid, region=None):
        if grid.mode == "full" and grid.dim == 2 and grid.points_per_axis > 64:
            raise ValueError("eigenbasis synthesis is limited to 64^2 grids")
        pot = pot if pot is not None else Potential(np.zeros(grid.size), grid, 100.0)
        self.params = params
        self.grid = grid
        self.H = discretize_hamiltonian(params, pot, grid)
        E, Q = linalg.eigh(self.H.matrix)
        self.bound, self.P_ac = bound_states(self.H, (E, Q))
        keep = E >= -self.H.continuum_tolerance
        self.E = E[keep]
        self.region = np.arange(grid.size) if region is None else np.asarray(region)
        sw = np.sqrt(grid.weights)
        self.U = (Q[:, keep] / sw[:, None])[self.region]  # grid-function eigenvectors

    def weights(self, t, smoothing: bool = False, L: float | None = None):
        E = self.E
        f = np.exp(1j * t * E)
        if smoothing:
            s = 1.0 - 1.0 / self.params.alpha
            mag = np.abs(E)
            live = mag > 1e-12 * np.max(mag)
            f = np.where(live, f * np.where(live, mag, 1.0) ** s, 0.0)
        if L is not None:
            f = f * CHI.chi(np.abs(E) ** (1.0 / (2 * self.params.alpha)) / L)
        return f

    def kernel(self, t: float, smoothing: bool = False, L: float | None = None) -> np.ndarray:
        f = self.weights(t, smoothing, L)
        return (self.U * f[None, :]) @ self.U.conj().T


def eigenbasis_evolution_kernel(t: float, params: FracParams, pot: Potential | None, grid: SpatialGrid,
                                smoothing: bool = False, L: float | None = None, region=None) -> np.ndarray:
    """Kernel of e^{itH} P_ac (|H|^{1-1/alpha} when smoothing) from eigenpairs."""
    return EigenbasisEvolution(params, pot, grid, region).kernel(t, smoothing, L)


# ---------------------------------------------------------------------------
# fits and experiments
# ---------------------------------------------------------------------------


def decay_rate_fit(t_list, sup_norms, residual_flag: float = 0.2) -> DecayFit:
    """Least-squares decay rate p in sup ~ A |t|^{-p} (p reported positive)."""
    t = np.abs(np.asarray(t_list, dtype=float))
    y = np.asarray(sup_norms, dtype=float)
    if len(t) < 8:
        raise ValueError("need at least 8 time samples")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("sup-norms must be positive and finite")
    if np.any(t <= 0):
        raise ValueError("times must be nonzero")
    ratios = t[1:] / t[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6):
        raise ValueError("t_list must be geometric")
    lt, ly = np.log(t), np.log(y)
    slope, icpt = np.polyfit(lt, ly, 1)
    res = float(np.sqrt(np.mean((ly - (slope * lt + icpt)) ** 2)))
    return DecayFit(float(-slope), float(np.exp(icpt)), res, (float(t.min()), float(t.max())),
                    flagged=res > residual_flag)


def decay_target(params: FracParams, smoothing: bool) -> float:
    """Decay rate targeted by the dispersive estimates."""
    return 1.0 if smoothing else params.n / (2 * params.alpha)


@dataclass
class ExperimentConfig:
    alpha: float
    n: int
    method: str = "stone"  # stone | eigenbasis | both
    smoothing: bool = False
    free: bool = False
    t_min: float = 10.0
    t_max: float = 1000.0
    t_count: int = 9
    L: float = 2.0
    extent: float = 6.0
    points: int = 24
    potential: dict = field(default_factory=dict)
    rho_max: float = 6.0
    radii: int = 25
    sigma_flag: float = 0.05


def dispersive_experiment(cfg: ExperimentConfig) -> dict:
    """Sup-norm table, decay fit and target comparison for one configuration.

    Every stage is attempted; failures are recorded under ``errors`` with the
    partial results kept.
    """
    from .perturbed import sample_potential
    from .numerics import make_grid

    params = FracParams(cfg.alpha, cfg.n)
    t_list = np.geomspace(cfg.t_min, cfg.t_max, cfg.t_count)
    report = {"params": {"alpha": cfg.alpha, "n": cfg.n}, "smoothing": cfg.smoothing, "L": cfg.L,
              "t": t_list.tolist(), "target": decay_target(params, cfg.smoothing), "methods": {},
              "errors": []}
    bands = ("all", "low", "high")
    if cfg.free:
        for band in bands:
            try:
                sups = []
                for t in t_list:
                    prof = free_stone_profile(t, covariant_radii(t, params, cfg.rho_max, cfg.radii), params,
                                              cfg.smoothing, cfg.L, band)
                    sups.append(float(np.max(np.abs(prof))))
                entry = {"sup": sups}
                try:
                    entry["fit"] = decay_rate_fit(t_list, sups).to_dict()
                except ValueError as exc:
                    entry["fit_error"] = str(exc)
                report["methods"].setdefault("stone", {})[band] = entry
            except (ConvergenceError, ValueError, FloatingPointError) as exc:
                report["errors"].append({"stage": f"free-stone-{band}", "error": str(exc)})
        _summarize(report)
        return report
    grid = make_grid(cfg.n, cfg.extent, cfg.points, "full" if cfg.n <= 2 else "radial")
    pcfg = {"kind": "gaussian-well", "amplitude": -0.5, "width": 1.0, "beta": 100.0, **cfg.potential}
    pot = sample_potential(pcfg["kind"], pcfg["amplitude"], pcfg["width"], pcfg["beta"], grid)
    region = sup_region(grid)
    report["potential"] = pcfg
    if params.threshold_regular_free and not pot.is_zero:
        try:
            from .threshold import t0_singular

            s, _ = t0_singular(pot, params, grid)
            report["sigma_min"] = float(s[-1])
            report["threshold_proximity"] = bool(s[-1] < cfg.sigma_flag)
        except Exception as exc:  # noqa: BLE001 - recorded, not fatal
            report["errors"].append({"stage": "threshold", "error": str(exc)})
    if cfg.method in ("stone", "both"):
        try:
            solver = StoneSolver(params, pot, grid, region)
            for band in bands:
                ks = solver.kernels(t_list, cfg.smoothing, cfg.L, band)
                sups = np.max(np.abs(ks), axis=(1, 2))
                entry = {"sup": sups.tolist()}
                try:
                    entry["fit"] = decay_rate_fit(t_list, sups).to_dict()
                except ValueError as exc:
                    entry["fit_error"] = str(exc)
                report["methods"].setdefault("stone", {})[band] = entry
        except (ConvergenceError, ValueError, linalg.LinAlgError) as exc:
            report["errors"].append({"stage": "stone", "error": str(exc)})
    if cfg.method in ("eigenbasis", "both"):
        try:
            ev = EigenbasisEvolution(params, pot, grid, region)
            sups = [float(np.max(np.abs(ev.kernel(t, cfg.smoothing, cfg.L)))) for t in t_list]
            entry = {"sup": sups, "bound_states": ev.bound.eigenvalues.tolist()}
            try:
                entry["fit"] = decay_rate_fit(t_list, sups).to_dict()
            except ValueError as exc:
                entry["fit_error"] = str(exc)
            report["methods"].setdefault("eigenbasis", {})["all"] = entry
        except (ValueError, linalg.LinAlgError) as exc:
            report["errors"].append({"stage": "eigenbasis", "error": str(exc)})
    _summarize(report)
    return report


def _summarize(report):
    target = report["target"]
    for name, bands in report["methods"].items():
        fit = bands.get("all", {}).get("fit")
        if fit:
            fit["target_deviation"] = fit["exponent"] - target
