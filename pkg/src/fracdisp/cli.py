"""Command-line entry points.

Usage::

    fracdisp SUBCOMMAND [--config FILE] [--key value ...] [--out DIR]

Subcommands: resolvent, bounds, lap, threshold, evolve, sweep.  Every
setting can come from a ``key = value`` config file; flags given on the
command line override the file.  Outputs (CSV with 17 significant digits,
JSON reports) go to ``--out`` together with ``manifest.json``, which echoes
the configuration, the tool version, the wall time and a sha256 of every
output file.

Exit codes: 0 success, 2 invalid input, 3 numerical convergence failure.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import ConvergenceError

SUBCOMMANDS = ("resolvent", "bounds", "lap", "threshold", "evolve", "sweep")

# key: (type, default, help).  Keys double as flag names (--r-min for r_min).
SETTINGS = {
    "alpha": (float, 1.0, "fractional power alpha"),
    "n": (int, 3, "spatial dimension"),
    "lambda": (float, 1.0, "spectral parameter lambda > 0 (resolvent)"),
    "sign": (int, 1, "boundary value: +1 or -1 (resolvent, lap)"),
    "r_min": (float, 0.1, "smallest radius (resolvent)"),
    "r_max": (float, 20.0, "largest radius (resolvent)"),
    "r_count": (int, 200, "number of radii (resolvent)"),
    "boundary": (str, "ladder", "ladder | direct (resolvent)"),
    "kernel_method": (str, "contour", "contour | decomposition (resolvent)"),
    "kind": (str, "F", "F | F+ | F- (bounds)"),
    "order": (int, 0, "derivative order N (bounds)"),
    "lambda_min": (float, 2.0, "smallest lambda (lap)"),
    "lambda_max": (float, 64.0, "largest lambda (lap)"),
    "lambda_count": (int, 6, "number of lambdas, geometric (lap)"),
    "j": (int, 0, "lambda-derivative order (lap)"),
    "excess": (float, 0.05, "weight excess over j + 1/2 (lap)"),
    "extent": (float, 6.0, "grid half-width, or radius for radial grids"),
    "points": (int, 24, "grid points per axis"),
    "grid_mode": (str, "auto", "auto | full | radial"),
    "potential_kind": (str, "gaussian-well", "gaussian-well | bump | polynomial-decay"),
    "amplitude": (float, -0.25, "potential amplitude; 0 means V = 0"),
    "width": (float, 1.0, "potential width"),
    "beta": (float, 100.0, "potential decay exponent (metadata)"),
    "tol": (float, 1e-3, "sigma_min tolerance (threshold)"),
    "free": (bool, False, "use V = 0 (evolve)"),
    "smoothing": (bool, False, "apply H^{1-1/alpha} (evolve, n = 2)"),
    "method": (str, "stone", "stone | eigenbasis | both (evolve)"),
    "t_min": (float, 10.0, "first time (evolve)"),
    "t_max": (float, 1000.0, "last time (evolve)"),
    "t_count": (int, 9, "number of times, geometric (evolve)"),
    "L": (float, 2.0, "Stone frequency cutoff (evolve)"),
    "rho_max": (float, 6.0, "free sup window in rho = R t^{-1/(2 alpha)} (evolve)"),
    "c_min": (float, 0.1, "smallest coupling (sweep)"),
    "c_max": (float, 2.0, "largest coupling (sweep)"),
    "c_count": (int, 20, "number of couplings (sweep)"),
}


def _to_bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key, value):
    typ = SETTINGS[key][0]
    if typ is bool:
        return _to_bool(value)
    if typ is int:
        f = float(value)
        if f != int(f):
            raise ValueError(f"{key} must be an integer")
        return int(f)
    return typ(value)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Subcommand plus settings (see ``SETTINGS`` for keys and defaults)."""

    subcommand: str
    values: dict = field(default_factory=dict)
    out: str = "fracdisp-out"

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ValueError(f"unknown subcommand {self.subcommand!r}")
        merged = {k: spec[1] for k, spec in SETTINGS.items()}
        for k, v in self.values.items():
            if k not in SETTINGS:
                raise ValueError(f"unknown setting {k!r}")
            merged[k] = _convert(k, v)
        self.values = merged

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"subcommand = {self.subcommand}", f"out = {self.out}"]
        lines += [f"{k} = {_format(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, subcommand: str | None = None) -> "ExperimentConfig":
        raw = parse_config_text(text)
        sub = raw.pop("subcommand", None) or subcommand
        out = raw.pop("out", "fracdisp-out")
        if sub is None:
            raise ValueError("config does not name a subcommand")
        return cls(sub, raw, out)


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; blank lines and '#' comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS and key not in ("subcommand", "out"):
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def write_csv(path, header, columns) -> None:
    """Comma-separated, header row, LF line ends, %.17g numbers."""
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_num(v) for v in row) + "\n")


def _num(v):
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return "%.17g" % float(v)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, cfg: ExperimentConfig, outputs, wall_time, status="ok") -> str:
    entries = []
    for name in outputs:
        p = os.path.join(out_dir, name)
        entries.append({"path": name, "sha256": _sha256(p), "bytes": os.path.getsize(p)})
    manifest = {
        "tool": "fracdisp",
        "version": __version__,
        "subcommand": cfg.subcommand,
        "config": cfg.values,
        "config_text": cfg.to_text(),
        "wall_time_s": wall_time,
        "status": status,
        "outputs": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, manifest)
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _params(cfg):
    from .numerics import FracParams

    return FracParams(cfg["alpha"], cfg["n"])


def _grid(cfg, params):
    from .numerics import make_grid

    mode = cfg["grid_mode"]
    if mode == "auto":
        mode = "full" if params.n <= 2 else "radial"
    return make_grid(params.n, cfg["extent"], cfg["points"], mode)


def _potential(cfg, grid):
    from .perturbed import sample_potential

    return sample_potential(cfg["potential_kind"], cfg["amplitude"], cfg["width"], cfg["beta"], grid)


def _run_resolvent(cfg, out_dir):
    from .resolvent import SpectralPoint, free_resolvent_kernel

    params = _params(cfg)
    radii = np.linspace(cfg["r_min"], cfg["r_max"], cfg["r_count"])
    prof = free_resolvent_kernel(SpectralPoint(cfg["lambda"], 0.0, cfg["sign"]), params, radii,
                                 boundary=cfg["boundary"], method=cfg["kernel_method"])
    write_csv(os.path.join(out_dir, "kernel.csv"), ["r", "re", "im"],
              [prof.radii, prof.values.real, prof.values.imag])
    write_json(os.path.join(out_dir, "kernel.json"), {"kind": prof.kind, **prof.metadata()})
    return ["kernel.csv", "kernel.json"]


def _run_bounds(cfg, out_dir):
    from .resolvent import verify_derivative_bounds

    rep = verify_derivative_bounds(cfg["kind"], cfg["order"], _params(cfg))
    write_json(os.path.join(out_dir, "bounds.json"), rep.to_dict())
    return ["bounds.json"]


def _run_lap(cfg, out_dir):
    from .perturbed import lap_scaling

    params = _params(cfg)
    grid = _grid(cfg, params)
    pot = _potential(cfg, grid) if cfg["amplitude"] else None
    lams = np.geomspace(cfg["lambda_min"], cfg["lambda_max"], cfg["lambda_count"])
    sigma = cfg["j"] + 0.5 + cfg["excess"]
    fit = lap_scaling(lams, sigma, cfg["j"], pot, params, grid, cfg["sign"], cfg["excess"])
    write_csv(os.path.join(out_dir, "lap.csv"), ["lambda", "norm"], [fit.extra["lambda"], fit.extra["norms"]])
    write_json(os.path.join(out_dir, "lap.json"), {**fit.to_dict(), "target": 1 - 2 * params.alpha})
    return ["lap.csv", "lap.json"]


def _run_threshold(cfg, out_dir):
    from .threshold import classify_threshold

    params = _params(cfg)
    grid = _grid(cfg, params)
    rep = classify_threshold(_potential(cfg, grid), params, grid, tol=cfg["tol"])
    write_json(os.path.join(out_dir, "threshold.json"), rep.to_dict())
    return ["threshold.json"]


def _run_evolve(cfg, out_dir):
    from .dispersive import ExperimentConfig as Exp, dispersive_experiment

    exp = Exp(alpha=cfg["alpha"], n=cfg["n"], method=cfg["method"], smoothing=cfg["smoothing"],
              free=cfg["free"], t_min=cfg["t_min"], t_max=cfg["t_max"], t_count=cfg["t_count"], L=cfg["L"],
              extent=cfg["extent"], points=cfg["points"], rho_max=cfg["rho_max"],
              potential={"kind": cfg["potential_kind"], "amplitude": cfg["amplitude"], "width": cfg["width"],
                         "beta": cfg["beta"]})
    rep = dispersive_experiment(exp)
    write_json(os.path.join(out_dir, "evolve.json"), rep)
    outputs = ["evolve.json"]
    for name, bands in rep["methods"].items():
        entry = bands.get("all")
        if entry:
            fn = f"sup_{name}.csv"
            write_csv(os.path.join(out_dir, fn), ["t", "sup_norm"], [rep["t"], entry["sup"]])
            outputs.append(fn)
    if rep["errors"] and not rep["methods"]:
        raise ConvergenceError("every evolution stage failed", errors=rep["errors"])
    return outputs


def _run_sweep(cfg, out_dir):
    from .threshold import coupling_sweep

    params = _params(cfg)
    grid = _grid(cfg, params)
    shape = _potential({**cfg.values, "amplitude": -1.0}, grid)
    cs = np.linspace(cfg["c_min"], cfg["c_max"], cfg["c_count"])
    res = coupling_sweep(shape, params, cs, grid, hamiltonian=grid.mode == "full" or params.n == 3)
    write_csv(os.path.join(out_dir, "sweep.csv"), ["coupling", "sigma_min", "lowest_eigenvalue", "scaling_exponent"],
              [res.couplings, res.sigma_min, res.lowest_eigenvalue, res.scaling_exponent])
    write_json(os.path.join(out_dir, "sweep.json"), res.to_dict())
    return ["sweep.csv", "sweep.json"]


RUNNERS = {
    "resolvent": _run_resolvent,
    "bounds": _run_bounds,
    "lap": _run_lap,
    "threshold": _run_threshold,
    "evolve": _run_evolve,
    "sweep": _run_sweep,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracdisp",
        description="Resolvent kernels, threshold analysis and dispersive decay for fractional Schrodinger operators.",
        epilog="Exit codes: 0 success, 2 invalid input, 3 numerical convergence failure.")
    parser.add_argument("--version", action="version", version=f"fracdisp {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--out", help="output directory (default fracdisp-out)")
        for key, (typ, default, text) in SETTINGS.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, nargs="?", const="true", help=f"{text} [default {default}]")
            else:
                p.add_argument(flag, dest=key, help=f"{text} [default {default}]")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge config file (if any) and inline flags; flags win."""
    values = {}
    out = "fracdisp-out"
    given = vars(args)
    if "config" in given:
        path = given["config"]
        if not os.path.isfile(path):
            raise ValueError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
        sub = raw.pop("subcommand", args.subcommand)
        if sub != args.subcommand:
            raise ValueError(f"config is for {sub!r}, not {args.subcommand!r}")
        out = raw.pop("out", out)
        values.update(raw)
    for key in SETTINGS:
        if key in given:
            values[key] = given[key]
    out = given.get("out", out)
    return ExperimentConfig(args.subcommand, values, out)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help/--version exit 0
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        print(f"fracdisp: error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    os.makedirs(cfg.out, exist_ok=True)
    try:
        outputs = RUNNERS[cfg.subcommand](cfg, cfg.out)
    except ConvergenceError as exc:
        print(f"fracdisp: convergence failure: {exc} {exc.details}", file=sys.stderr)
        write_manifest(cfg.out, cfg, [], time.perf_counter() - start, status="convergence-failure")
        return 3
    except ValueError as exc:
        print(f"fracdisp: error: {exc}", file=sys.stderr)
        write_manifest(cfg.out, cfg, [], time.perf_counter() - start, status="invalid-input")
        return 2
    write_manifest(cfg.out, cfg, outputs, time.perf_counter() - start)
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))
