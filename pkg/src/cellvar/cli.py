"""Batch experiment runner: TOML config in, CSV/JSON artifacts out.

Subcommands: cell, homogenize, envelope, derivative, density, relax,
gamma-gap, verify. Artifacts are written atomically (temp file then rename)
and contain no wall-clock content, so identical config + seed reproduce
byte-identical CSVs. Exit codes: 0 success, 1 failed verify criteria,
2 validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import acceptance
from .dirichlet import CSV_HEADER, CellProblem, SolverConfig, cell_domain_for, solve_cell
from .gammadiag import dirichlet_free_gap
from .grid import AffineMap, Cube, CubeDomain, DiscreteField
from .homogenize import CSV_HEADER_CELLS, density_grid, h_diagnostic
from .integrands import (
    ConstantFamily,
    Integrand,
    RescaledFamily,
    family_of,
    make_builtin,
    rescale,
)
from .relax import CSV_HEADER_DENSITY, l0_density, qdac_envelope, relaxed_functional
from .setfn import dyadic_envelope, lower_derivative, measure_set_function, vitali_envelope
from .util import check_strictly_monotone, write_csv_atomic, write_dat_atomic, write_json_atomic


class ConfigError(ValueError):
    """Configuration problems: missing keys, malformed schedules, bad values."""


# ---------------------------------------------------------------------------
# config access


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc


def _need(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return cfg[key]


def _schedule(cfg: dict, key: str, direction: str, where: str, required: bool = True, default=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"{where}: missing schedule {key!r}")
        return default
    values = cfg[key]
    try:
        check_strictly_monotone(values, direction, f"{where}.{key}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return [float(v) for v in values]


def _integrand(cfg: dict) -> Integrand:
    section = _need(cfg, "integrand")
    name = _need(section, "name", "integrand")
    try:
        return make_builtin(name, section.get("params", {}))
    except ValueError as exc:
        raise ConfigError(f"integrand: {exc}") from exc


_SOLVER_FIELDS = {
    "max_iterations": int,
    "gradient_tolerance": float,
    "line_search_steps": int,
    "multistart_count": int,
    "refinement_levels": int,
    "stagnation_threshold": float,
    "resolution_cap": int,
    "quadrature": str,
}


def _solver(cfg: dict, seed: int) -> SolverConfig:
    s = cfg.get("solver", {})
    unknown = set(s) - set(_SOLVER_FIELDS)
    if unknown:
        raise ConfigError(f"solver: unknown fields {sorted(unknown)}")
    kwargs = {k: cast(s[k]) for k, cast in _SOLVER_FIELDS.items() if k in s}
    try:
        return SolverConfig(rng_seed=seed, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc


def _seed(cfg: dict, override) -> int:
    if override is not None:
        return int(override)
    if "seed" not in cfg:
        raise ConfigError("config: a seed is mandatory for any randomized path (set `seed`)")
    return int(cfg["seed"])


def _affine(geom: dict, m_d: tuple) -> AffineMap:
    m, d = m_d
    xi = np.asarray(_need(geom, "xi", "geometry"), dtype=float).reshape(m, d)
    v = np.asarray(geom.get("v", [0.0] * m), dtype=float)
    x = np.asarray(_need(geom, "x", "geometry"), dtype=float)
    return AffineMap.make(v, xi, x)


# named set-function densities for the envelope/derivative runners
def _set_function(cfg: dict) -> tuple:
    section = cfg.get("set_function", {})
    kind = section.get("kind", "coordinate")
    d = int(section.get("d", 2))
    center = tuple(section.get("center", [0.5] * d))
    side = float(section.get("side", 1.0))
    O = Cube(center, side)
    axis = int(section.get("axis", 0))
    if kind == "coordinate":
        density = lambda pts: pts[:, axis]
    elif kind == "const":
        c = float(section.get("value", 1.0))
        density = lambda pts: np.full(len(pts), c)
    elif kind == "sign_split":
        thr = float(section.get("threshold", 0.5))
        density = lambda pts: np.where(pts[:, axis] < thr, 1.0, -1.0)
    elif kind == "indicator":
        thr = float(section.get("threshold", 0.5))
        density = lambda pts: (pts[:, axis] > thr).astype(float)
    else:
        raise ConfigError(f"set_function: unknown kind {kind!r}")
    G = measure_set_function(density, O, points_per_axis=int(section.get("points_per_axis", 4)),
                             name=kind)
    return G, O


def _out_path(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


class _Emitter:
    """Writes a named CSV table (plus an optional gnuplot .dat twin) and JSON summaries."""

    def __init__(self, out_dir: str, dat: bool = False):
        self.out_dir = out_dir
        self.dat = dat

    def table(self, name: str, header, rows) -> None:
        rows = [list(r) for r in rows]
        write_csv_atomic(_out_path(self.out_dir, f"{name}.csv"), header, rows)
        if self.dat:
            write_dat_atomic(_out_path(self.out_dir, f"{name}.dat"), header, rows)

    def summary(self, name: str, payload) -> None:
        write_json_atomic(_out_path(self.out_dir, f"{name}_summary.json"), payload)


# ---------------------------------------------------------------------------
# operation runners (each returns a summary dict and writes artifacts)


def _run_cell(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    L = _integrand(cfg)
    geom = _need(cfg, "geometry")
    solver = _solver(cfg, seed)
    rho = float(_need(geom, "rho", "geometry"))
    resolution = int(geom.get("resolution", 33))
    x = np.asarray(_need(geom, "x", "geometry"), dtype=float)
    cube = Cube(tuple(x), rho)
    dom = cell_domain_for(L, cube, resolution)
    data = _affine(geom, (L.m, L.d))
    eps = geom.get("eps")
    Leff = rescale(L, float(eps)) if eps is not None else L
    sol = solve_cell(CellProblem(Leff, dom, data, solver, eps_label=eps))
    emit.table("cell", CSV_HEADER, sol.csv_rows())
    summary = {
        "value": sol.value,
        "normalized_value": sol.normalized_value,
        "converged": sol.converged,
        "per_level": sol.per_level,
        "grad_norm": sol.grad_norm,
    }
    emit.summary("cell", summary)
    return summary


def _run_homogenize(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    L = _integrand(cfg)
    geom = _need(cfg, "geometry")
    solver = _solver(cfg, seed)
    mode = cfg.get("homogenize", {}).get("mode", "lhom")
    resolution = int(geom.get("resolution", 65))
    if mode == "lhom":
        if "xi_grid" in geom:
            xis = geom["xi_grid"]
        elif "xi_box" in geom:
            from .homogenize import tensor_slope_grid

            box = geom["xi_box"]
            xis = tensor_slope_grid(L.m, L.d, float(box[0]), float(box[1]),
                                    int(geom.get("xi_points", 3)))
        else:
            raise ConfigError("geometry: provide xi_grid or xi_box")
        n_max = int(geom.get("n_max", 2))
        richardson = bool(cfg.get("homogenize", {}).get("richardson", False))
        try:
            grid = density_grid(L, xis, n_max, resolution, solver, richardson, jobs=jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        emit.table("homogenize", CSV_HEADER_CELLS, grid.csv_rows())
        summary = {
            "estimates": {
                ";".join(map(repr, k)): {
                    "estimate": e.estimate,
                    "estimate_min": e.estimate_min,
                    "estimate_richardson": e.estimate_richardson,
                    "values": e.values,
                }
                for k, e in grid.entries.items()
            }
        }
    elif mode == "hdiag":
        xi = _need(geom, "xi", "geometry")
        pts = _need(geom, "x_samples", "geometry")
        sched = cfg.get("schedules", {})
        rhos = _schedule(sched, "rho", "decreasing", "schedules")
        ts = _schedule(sched, "t", "increasing", "schedules")
        try:
            rep = h_diagnostic(L, xi, pts, rhos, ts, resolution, solver,
                               tolerance=float(cfg.get("homogenize", {}).get("tolerance", 1e-3)),
                               jobs=jobs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        emit.table("homogenize", CSV_HEADER_CELLS, rep.csv_rows())
        summary = {
            "max_gap": rep.max_gap,
            "numerically_homogenizable": rep.numerically_homogenizable,
            "samples": [
                {"x": list(map(float, np.atleast_1d(s.x))), "upper": s.upper, "lower": s.lower}
                for s in rep.samples
            ],
        }
    else:
        raise ConfigError(f"homogenize: unknown mode {mode!r}")
    emit.summary("homogenize", summary)
    return summary


def _run_envelope(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    G, O = _set_function(cfg)
    section = cfg.get("envelope", {})
    fineness = float(section.get("fineness", 0.1))
    max_depth = int(section.get("max_depth", 8))
    signed = bool(section.get("signed", False))
    try:
        if signed:
            value, packing = dyadic_envelope(G, O, fineness, max_depth=max_depth)
        else:
            value, packing = vitali_envelope(H=G, O=O, fineness=fineness, max_depth=max_depth)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    packing.validate()
    d = O.d
    header = ("level", *(f"corner{a}" for a in range(d)), "side", "value", "certificate")
    emit.table("envelope", header, packing.csv_rows())
    summary = {
        "value": value,
        "n_cubes": len(packing.cubes),
        "uncovered_volume": packing.uncovered_volume,
        "fineness": fineness,
    }
    emit.summary("envelope", summary)
    return summary


def _run_derivative(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    G, O = _set_function(cfg)
    sched = cfg.get("schedules", {})
    rhos = _schedule(sched, "rho", "decreasing", "schedules")
    section = cfg.get("derivative", {})
    pts = _need(section, "points", "derivative")
    samples = int(section.get("samples", 64))
    rows = []
    ests = []
    for i, p in enumerate(pts):
        try:
            est = lower_derivative(G, p, rhos, samples=samples, seed=seed + 7919 * i,
                                   centered_only=bool(section.get("centered_only", False)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        ests.append(est)
        for rho, lo, hi in zip(est.rhos, est.per_rho_inf, est.per_rho_sup):
            rows.append((*np.atleast_1d(p), rho, lo, hi))
    d = O.d
    header = (*(f"x{a}" for a in range(d)), "rho", "stage_inf", "stage_sup")
    emit.table("derivative", header, rows)
    summary = {
        "points": [list(map(float, np.atleast_1d(p))) for p in pts],
        "lower": [e.lower for e in ests],
        "upper": [e.upper for e in ests],
    }
    emit.summary("derivative", summary)
    return summary


def _run_density(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    L = _integrand(cfg)
    geom = _need(cfg, "geometry")
    solver = _solver(cfg, seed)
    method = cfg.get("density", {}).get("method", "constant_family")
    sched = cfg.get("schedules", {})
    resolution = int(geom.get("resolution", 33))
    x = _need(geom, "x", "geometry")
    v = geom.get("v", [0.0] * L.m)
    xi = _need(geom, "xi", "geometry")
    if method == "frozen_dac":
        resolutions = sched.get("resolutions", [33, 65])
        try:
            est = qdac_envelope(L, x, v, xi, resolutions, solver)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        rhos = _schedule(sched, "rho", "decreasing", "schedules")
        eps = _schedule(sched, "eps", "decreasing", "schedules", required=(method == "eps_family"),
                        default=[1.0])
        family = RescaledFamily(L) if method == "eps_family" else ConstantFamily(L)
        try:
            est = l0_density(family, x, v, xi, rhos, eps, resolution, solver)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    emit.table("density", CSV_HEADER_DENSITY, est.csv_rows())
    summary = {"value": est.value, "method": est.method, "rho_tail": est.rho_tail}
    emit.summary("density", summary)
    return summary


def _build_field(cfg: dict, L: Integrand) -> DiscreteField:
    geom = _need(cfg, "geometry")
    x = np.asarray(_need(geom, "x", "geometry"), dtype=float)
    rho = float(_need(geom, "rho", "geometry"))
    resolution = int(geom.get("resolution", 33))
    dom = CubeDomain(tuple(x), rho / 2.0, resolution)
    return DiscreteField.from_affine(dom, _affine(geom, (L.m, L.d)))


def _run_relax(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    L = _integrand(cfg)
    solver = _solver(cfg, seed)
    method = cfg.get("density", {}).get("method", "constant_family")
    sched = cfg.get("schedules", {})
    rhos = _schedule(sched, "rho", "decreasing", "schedules")
    eps = _schedule(sched, "eps", "decreasing", "schedules", required=(method == "eps_family"),
                    default=[1.0])
    u = _build_field(cfg, L)
    family = family_of(L, "rescaled" if method == "eps_family" else "constant")
    try:
        rf = relaxed_functional(
            family, u, method, rhos, eps,
            resolution=int(cfg.get("geometry", {}).get("cell_resolution", 33)),
            config=solver, samples_per_axis=int(cfg.get("relax", {}).get("samples_per_axis", 3)),
            jobs=jobs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    d, m = L.d, L.m
    header = (*(f"x{a}" for a in range(d)), *(f"v{c}" for c in range(m)), "xi", "weight", "density")
    rows = (
        (*s.x, *s.v, ";".join(repr(float(c)) for c in np.asarray(s.xi).ravel()), s.weight, s.density)
        for s in rf.samples
    )
    emit.table("relax", header, rows)
    summary = {
        "total": rf.total,
        "direct_energy": rf.direct_energy,
        "relaxation_gap": rf.relaxation_gap,
        "method": rf.method,
    }
    emit.summary("relax", summary)
    return summary


def _run_gamma_gap(cfg: dict, seed: int, jobs: int, emit: "_Emitter") -> dict:
    L = _integrand(cfg)
    solver = _solver(cfg, seed)
    sched = cfg.get("schedules", {})
    rhos = _schedule(sched, "rho", "decreasing", "schedules")
    eps = _schedule(sched, "eps", "decreasing", "schedules", required=False, default=[1.0])
    method_family = family_of(L, "rescaled" if len(eps) > 1 else "constant")
    u = _build_field(cfg, L)
    try:
        rep = dirichlet_free_gap(
            method_family, u, k=int(cfg.get("gamma_gap", {}).get("k", 4)),
            rho_schedule=rhos, eps_schedule=eps,
            resolution=int(cfg.get("geometry", {}).get("cell_resolution", 33)),
            config=solver, jobs=jobs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    header = ("x", "trace_liminf", "tangent_limsup", "tangent_liminf", "chain_ok")
    rows = (
        (";".join(repr(float(c)) for c in np.atleast_1d(r.x)),
         r.trace_liminf, r.tangent_limsup, r.tangent_liminf, r.chain_ok)
        for r in rep.rows
    )
    emit.table("gamma_gap", header, rows)
    summary = {
        "density_total": rep.density_total,
        "recovery_total": rep.recovery_total,
        "gap": rep.gap,
        "max_chain_violation": rep.max_chain_violation,
    }
    emit.summary("gamma_gap", summary)
    return summary


_RUNNERS = {
    "cell": _run_cell,
    "homogenize": _run_homogenize,
    "envelope": _run_envelope,
    "derivative": _run_derivative,
    "density": _run_density,
    "relax": _run_relax,
    "gamma-gap": _run_gamma_gap,
}


def run(operation: str, config_path: str, jobs: int = 1, out_dir: str = "out", seed=None,
        dat: bool = False) -> int:
    """Execute one operation from a config file; returns the process exit code."""
    try:
        cfg = _load_config(config_path)
        declared = cfg.get("operation")
        if declared is not None and declared != operation:
            raise ConfigError(
                f"config declares operation {declared!r} but {operation!r} was requested"
            )
        seed_val = _seed(cfg, seed)
        os.makedirs(out_dir, exist_ok=True)
        summary = _RUNNERS[operation](cfg, seed_val, jobs, _Emitter(out_dir, dat=dat))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    headline = ", ".join(f"{k}={v}" for k, v in list(summary.items())[:3])
    if len(headline) > 160:
        headline = headline[:157] + "..."
    print(f"{operation}: {headline} -> {out_dir}/")
    return 0


def verify(suite: str, seed: int = 1234, jobs: int = 1, out_dir: str | None = None,
           dat: bool = False) -> int:
    """Run an acceptance suite, print one pass/fail line per criterion."""
    if suite not in acceptance.SUITES:
        print(
            f"error: unknown suite {suite!r}; choose from {', '.join(acceptance.SUITE_NAMES)}",
            file=sys.stderr,
        )
        return 2
    result = acceptance.run_suite(suite, seed=seed, jobs=jobs)
    for crit in result.criteria:
        print(crit.line())
    if out_dir:
        emit = _Emitter(out_dir, dat=dat)
        os.makedirs(out_dir, exist_ok=True)
        for name, (header, rows) in result.tables.items():
            emit.table(f"{suite}_{name}", header, rows)
        write_json_atomic(
            os.path.join(out_dir, f"{suite}_summary.json"),
            {
                "suite": suite,
                "passed": result.passed,
                "criteria": [
                    {"id": c.cid, "name": c.name, "passed": c.passed, "measured": c.measured}
                    for c in result.criteria
                ],
            },
        )
    return 0 if result.passed else 1


def main(argv=None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker pool size (results are independent of it)")
    common.add_argument("--out", default="out", help="artifact directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--dat", action="store_true",
                        help="emit gnuplot-compatible .dat twins next to the CSVs")
    parser = argparse.ArgumentParser(
        prog="cellvar",
        description="Cell-problem experiments: Dirichlet infima, envelopes, "
        "homogenized and relaxed densities.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for op in _RUNNERS:
        p = sub.add_parser(op, parents=[common], help=f"run the {op} operation from a config")
        p.add_argument("--config", required=True, help="TOML experiment config")
    pv = sub.add_parser("verify", parents=[common], help="run an acceptance suite")
    pv.add_argument("suite", help=f"one of: {', '.join(acceptance.SUITE_NAMES)}")
    args = parser.parse_args(argv)

    if args.command == "verify":
        return verify(args.suite, seed=args.seed if args.seed is not None else 1234,
                      jobs=args.jobs, out_dir=args.out, dat=args.dat)
    return run(args.command, args.config, jobs=args.jobs, out_dir=args.out, seed=args.seed,
               dat=args.dat)


if __name__ == "__main__":
    sys.exit(main())
