"""Acceptance suites: closed-form and property-based checks at desk scale.

Each suite runs a fixed set of criteria with pinned tolerances and returns
pass/fail results plus deterministic CSV tables (no wall-clock content ever
enters a table, so reruns with the same seed are byte-identical). Elapsed
times are checked against the per-criterion budgets and reported on stdout
only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dirichlet import CellProblem, SolverConfig, cell_domain_for, solve_cell, subadditivity_check
from .gammadiag import dirichlet_free_gap
from .grid import AffineMap, Cube, CubeDomain, DiscreteField
from .homogenize import estimate_Lhom_periodic, h_diagnostic
from .integrands import RescaledFamily, make_builtin
from .relax import qdac_envelope
from .setfn import (
    dyadic_envelope,
    integral_of_lower_derivative,
    measure_set_function,
    vitali_envelope,
)
from .util import relative_gap

SUITE_NAMES = ("convex", "homog1d", "laminate2d", "doublewell", "vitali", "sandwich")


@dataclass
class CriterionResult:
    cid: str
    name: str
    passed: bool
    measured: str
    expected: str
    elapsed: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.cid} {self.name}: {self.measured} (expected {self.expected}) [{self.elapsed:.1f}s]"


@dataclass
class SuiteResult:
    suite: str
    criteria: list
    tables: dict = field(default_factory=dict)  # name -> (header, rows)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


def _timed(budget: float):
    start = time.time()

    def close(ok: bool) -> tuple:
        elapsed = time.time() - start
        return ok and elapsed < budget, elapsed

    return close


# ---------------------------------------------------------------------------
# convex suite: Jensen identity for pure powers


def run_convex(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    """Normalized cell values of |xi|^p equal the density at the boundary
    slope: affine data is optimal for convex x-independent densities."""
    close = _timed(10.0)
    rng = np.random.default_rng(seed)
    cfg = SolverConfig(multistart_count=2, rng_seed=seed)
    rows = []
    worst = 0.0
    for p in (2.0, 4.0):
        for d in (1, 2):
            for m in (1, 2):
                L = make_builtin("p_power", {"p": p, "d": d, "m": m})
                res = 17 if d == 1 else 9
                for trial in range(5):
                    xi = rng.uniform(0.25, 2.0, size=(m, d)) * rng.choice([-1.0, 1.0], size=(m, d))
                    dom = CubeDomain((0.0,) * d, 0.5, res)
                    data = AffineMap.make(np.zeros(m), xi, (0.0,) * d)
                    sol = solve_cell(CellProblem(L, dom, data, cfg))
                    exact = float(np.sum(xi * xi)) ** (p / 2.0)
                    rel = abs(sol.normalized_value - exact) / exact
                    worst = max(worst, rel)
                    rows.append((p, d, m, trial, exact, sol.normalized_value, rel))
    ok, elapsed = close(worst <= 1e-8)
    crit = CriterionResult(
        cid="C1",
        name="affine data optimal for pure powers",
        passed=ok,
        measured=f"max rel err {worst:.2e}",
        expected="<= 1e-08 rel, < 10 s",
        elapsed=elapsed,
    )
    tables = {"jensen": (("p", "d", "m", "trial", "exact", "value", "rel_err"), rows)}
    return SuiteResult("convex", [crit], tables)


# ---------------------------------------------------------------------------
# homog1d suite: periodic formula + homogenizability diagnostic


def run_homog1d(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    L = make_builtin("quadratic_coeff_1d", {"a": [1.0, 4.0]})
    cfg = SolverConfig(rng_seed=seed)
    harmonic = 1.0 / np.mean([1.0, 0.25])  # (mean of 1/a)^-1 = 1.6

    close = _timed(30.0)
    rows = []
    worst = 0.0
    for xi in (-2.0, -1.0, 1.0, 2.0):
        est = estimate_Lhom_periodic(L, xi, n_max=4, resolution=129, config=cfg)
        exact = harmonic * xi * xi
        rel = abs(est.estimate - exact) / exact
        worst = max(worst, rel)
        for n, v in zip(est.scales, est.values):
            rows.append((xi, n, v, exact, rel))
    ok2, el2 = close(worst <= 1e-3)
    c2 = CriterionResult(
        cid="C2",
        name="1-D periodic formula reproduces the harmonic mean",
        passed=ok2,
        measured=f"max rel err {worst:.2e}",
        expected="<= 1e-03 rel, < 30 s",
        elapsed=el2,
    )

    close = _timed(120.0)
    pts = [[0.0], [0.1], [0.2], [0.3], [-0.2]]
    rep = h_diagnostic(
        L, 1.0, pts, rho_schedule=[1.0, 0.5], t_schedule=[2.0, 4.0, 8.0],
        resolution=81, config=cfg, tolerance=1e-3, jobs=jobs,
    )
    hrows = [(s.x[0], s.lower, s.upper, s.gap) for s in rep.samples]
    ok9, el9 = close(rep.max_gap <= 1e-3)
    c9 = CriterionResult(
        cid="C9",
        name="iterated upper/lower limit proxies agree for the periodic coefficient",
        passed=ok9,
        measured=f"max gap {rep.max_gap:.2e} at 5 points",
        expected="<= 1e-03, < 120 s",
        elapsed=el9,
    )
    tables = {
        "lhom_tail": (("xi", "n", "value", "exact", "rel_err"), rows),
        "hdiag": (("x", "lower", "upper", "gap"), hrows),
    }
    return SuiteResult("homog1d", [c2, c9], tables)


# ---------------------------------------------------------------------------
# laminate2d suite


def run_laminate2d(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    """Layered coefficient in the plane: harmonic mean across the layers,
    arithmetic mean along them.

    The across-layer direction carries a genuine zero-trace boundary layer
    decaying like 1/n, so both the plain scale minimum and the two-point 1/n
    extrapolation are reported; the criterion passes if either lands within
    tolerance."""
    close = _timed(300.0)
    L = make_builtin("laminate_2d", {"a": [1.0, 4.0]})
    cfg = SolverConfig(
        multistart_count=1, max_iterations=3000, gradient_tolerance=1e-8, rng_seed=seed
    )
    targets = {(1.0, 0.0): 1.6, (0.0, 1.0): 2.5}
    rows = []
    ok = True
    measured = []
    for xi, exact in targets.items():
        est = estimate_Lhom_periodic(L, list(xi), n_max=2, resolution=65, config=cfg, richardson=True)
        best = min(
            (v for v in (est.estimate_min, est.estimate_richardson) if v is not None),
            key=lambda v: abs(v - exact),
        )
        rel = abs(best - exact) / exact
        ok = ok and rel <= 0.02
        measured.append(f"xi={xi}: min={est.estimate_min:.4f} extrap={est.estimate_richardson:.4f} (exact {exact})")
        for n, v in zip(est.scales, est.values):
            rows.append((xi[0], xi[1], n, v, est.estimate_min, est.estimate_richardson, exact, rel))
    ok3, el3 = close(ok)
    c3 = CriterionResult(
        cid="C3",
        name="planar laminate closed forms at n_max=2",
        passed=ok3,
        measured="; ".join(measured),
        expected="<= 2% rel, < 300 s",
        elapsed=el3,
    )
    tables = {"laminate": (("xi0", "xi1", "n", "value", "est_min", "est_extrap", "exact", "rel_err"), rows)}
    return SuiteResult("laminate2d", [c3], tables)


# ---------------------------------------------------------------------------
# doublewell suite: scalar quasiconvexification


def lower_convex_envelope_on_grid(f, lo: float, hi: float, n: int):
    """Brute-force lower convex envelope through n grid points of f.

    Returns a callable evaluating the piecewise-linear lower hull."""
    ts = np.linspace(lo, hi, n)
    ys = np.asarray([f(t) for t in ts], dtype=float)
    hull: list = []
    for i in range(n):
        while len(hull) >= 2:
            i1, i2 = hull[-2], hull[-1]
            cross = (ts[i2] - ts[i1]) * (ys[i] - ys[i1]) - (ys[i2] - ys[i1]) * (ts[i] - ts[i1])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    hx = ts[hull]
    hy = ys[hull]

    def envelope(t):
        return float(np.interp(t, hx, hy))

    return envelope


def run_doublewell(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    close = _timed(60.0)
    L = make_builtin("double_well_1d", {})
    cfg = SolverConfig(multistart_count=4, rng_seed=seed)
    f = lambda t: (t * t - 1.0) ** 2
    hull = lower_convex_envelope_on_grid(f, -3.0, 3.0, 400)
    rows = []
    worst = 0.0
    for xi in (0.0, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0):
        est = qdac_envelope(L, [0.0], [0.0], xi, [65, 129], cfg)
        target = hull(xi)
        err = abs(est.value - target)
        worst = max(worst, err)
        rows.append((xi, est.value, target, err))
    ok4, el4 = close(worst <= 0.02)
    c4 = CriterionResult(
        cid="C4",
        name="scalar quasiconvexification matches the grid convex envelope",
        passed=ok4,
        measured=f"max abs err {worst:.2e}",
        expected="<= 0.02 abs, < 60 s",
        elapsed=el4,
    )
    tables = {"qdac": (("xi", "value", "grid_envelope", "abs_err"), rows)}
    return SuiteResult("doublewell", [c4], tables)


# ---------------------------------------------------------------------------
# vitali suite: envelope identity and sign checks


def run_vitali(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    O = Cube((0.5, 0.5), 1.0)

    close = _timed(60.0)
    H = measure_set_function(lambda pts: pts[:, 0], O, points_per_axis=4, name="y1-measure")
    value, packing = vitali_envelope(H, O, fineness=0.05, max_depth=10)
    packing.validate()
    rel_env = relative_gap(value, 0.5)
    integral = integral_of_lower_derivative(
        H, O, grid_per_axis=8, schedule=[0.02, 0.008, 0.004], samples=48, seed=seed
    )
    rel_int = relative_gap(value, integral)
    ok5, el5 = close(rel_env <= 5e-3 and rel_int <= 5e-3)
    c5 = CriterionResult(
        cid="C5",
        name="envelope equals the integral of the lower derivative",
        passed=ok5,
        measured=f"envelope {value:.6f}, derivative integral {integral:.6f}",
        expected="both within 5e-03 rel of 1/2, < 60 s",
        elapsed=el5,
    )

    close = _timed(30.0)
    plus = measure_set_function(lambda pts: np.ones(len(pts)), O, 2, name="plus")
    minus = measure_set_function(lambda pts: -np.ones(len(pts)), O, 2, name="minus")
    mixed = measure_set_function(
        lambda pts: np.where(pts[:, 0] < 0.5, 1.0, -1.0), O, 4, name="mixed"
    )
    v_plus, p1 = dyadic_envelope(plus, O, fineness=0.2, max_depth=6)
    v_minus, p2 = dyadic_envelope(minus, O, fineness=0.2, max_depth=6)
    v_mixed, p3 = dyadic_envelope(mixed, O, fineness=0.2, max_depth=6)
    for p in (p1, p2, p3):
        p.validate()
    slack = 1e-3
    ok6, el6 = close(v_plus >= -slack and v_minus <= slack and abs(v_mixed) <= slack)
    c6 = CriterionResult(
        cid="C6",
        name="envelope signs follow the sampled lower-derivative signs",
        passed=ok6,
        measured=f"+1: {v_plus:.6f}, -1: {v_minus:.6f}, mixed: {v_mixed:.6f}",
        expected="+1 >= 0, -1 <= 0, mixed ~ 0 within 1e-03, < 30 s",
        elapsed=el6,
    )
    rows = [
        ("plus", v_plus, 1.0),
        ("minus", v_minus, -1.0),
        ("mixed", v_mixed, 0.0),
        ("y1_envelope", value, 0.5),
        ("y1_derivative_integral", integral, 0.5),
    ]
    tables = {"envelopes": (("case", "value", "exact"), rows)}
    return SuiteResult("vitali", [c5, c6], tables)


# ---------------------------------------------------------------------------
# sandwich suite: subadditivity + Dirichlet-vs-free gap


def _subadditivity_instances(seed: int):
    """20 random disjoint-split instances cycling over the built-ins.

    Splits are dyadic so the subcube meshes are submeshes of the parent
    mesh; the composed optimal fields are then admissible for the parent
    problem and the inequality is exact up to solver tolerance."""
    rng = np.random.default_rng(seed)
    kinds = ["p_power1", "p_power2", "quadratic", "double_well", "laminate"]
    out = []
    for i in range(20):
        kind = kinds[i % len(kinds)]
        if kind == "p_power1":
            L = make_builtin("p_power", {"p": 2.0, "d": 1, "m": 1})
            xi = rng.uniform(-2, 2, (1, 1))
            center, side, res = (float(rng.integers(-2, 3)) / 2.0,), 1.0, 33
            cfg = SolverConfig(rng_seed=seed + i)
        elif kind == "p_power2":
            L = make_builtin("p_power", {"p": 4.0, "d": 2, "m": 1})
            xi = rng.uniform(-1.5, 1.5, (1, 2))
            center, side, res = (0.0, 0.0), 1.0, 17
            cfg = SolverConfig(rng_seed=seed + i)
        elif kind == "quadratic":
            L = make_builtin("quadratic_coeff_1d", {"a": [1.0, 4.0]})
            xi = rng.uniform(-2, 2, (1, 1))
            center, side, res = (float(rng.integers(0, 4)) / 2.0,), 1.0, 33
            cfg = SolverConfig(rng_seed=seed + i)
        elif kind == "double_well":
            L = make_builtin("double_well_1d", {})
            xi = np.array([[float(rng.choice([0.0, 0.5, -0.5]))]])
            center, side, res = (0.0,), 1.0, 65
            cfg = SolverConfig(rng_seed=seed + i, multistart_count=4)
        else:
            L = make_builtin("laminate_2d", {"a": [1.0, 4.0]})
            xi = np.array([[float(rng.choice([0.5, 1.0])), float(rng.choice([0.0, 0.5]))]])
            center, side, res = (0.5, 0.5), 1.0, 17
            cfg = SolverConfig(rng_seed=seed + i, max_iterations=1500)
        n_halves = 2 ** len(center)
        pick = rng.integers(0, 2, n_halves).astype(bool)
        out.append((kind, L, xi, Cube(center, side), res, cfg, pick))
    return out


def run_sandwich(seed: int = 1234, jobs: int = 1) -> SuiteResult:
    close = _timed(120.0)
    rows = []
    worst = math.inf
    all_ok = True
    for kind, L, xi, V, res, cfg, pick in _subadditivity_instances(seed):
        data = AffineMap.make(np.zeros(L.m), xi, V.center)
        Vdom = cell_domain_for(L, V, res)
        halves = V.children()
        child_res = (Vdom.resolution + 1) // 2
        cubes = [
            cell_domain_for(L, c, child_res) for c, take in zip(halves, pick) if take
        ]
        rep = subadditivity_check(data, cubes, Vdom, L, eps=1.0, config=cfg,
                                  tol=1e-6 + 1e-8 * (len(cubes) + 1))
        worst = min(worst, rep.margin)
        all_ok = all_ok and rep.passed and rep.refinement_ok
        rows.append((kind, len(cubes), rep.lhs, rep.remainder_energy, rep.margin, rep.passed))
    ok7, el7 = close(all_ok)
    c7 = CriterionResult(
        cid="C7",
        name="disjoint-split subadditivity over 20 random instances",
        passed=ok7,
        measured=f"worst margin {worst:.2e}",
        expected=">= -(1e-06 + per-cell tol), < 120 s",
        elapsed=el7,
    )

    close = _timed(300.0)
    gaps = []
    # convex instance
    Lp = make_builtin("p_power", {"p": 2.0, "d": 1, "m": 1})
    dom = CubeDomain((0.5,), 0.5, 33)
    u = DiscreteField.from_affine(dom, AffineMap.make([0.0], [[1.5]], [0.5]))
    rep = dirichlet_free_gap(Lp, u, k=4, rho_schedule=[0.25, 0.125], resolution=33,
                             config=SolverConfig(rng_seed=seed), jobs=jobs)
    gaps.append(("convex", rep.gap, 1e-2, rep.max_chain_violation))
    # homogenization instance
    Lq = make_builtin("quadratic_coeff_1d", {"a": [1.0, 4.0]})
    u1 = DiscreteField.from_affine(dom, AffineMap.make([0.0], [[1.0]], [0.5]))
    rep = dirichlet_free_gap(
        RescaledFamily(Lq), u1, k=4, rho_schedule=[0.25, 0.125],
        eps_schedule=[0.0625, 0.03125], resolution=65,
        config=SolverConfig(rng_seed=seed), jobs=jobs,
    )
    gaps.append(("homogenization", rep.gap, 1e-2, rep.max_chain_violation))
    # double-well instance
    Ld = make_builtin("double_well_1d", {})
    u0 = DiscreteField.from_affine(dom, AffineMap.make([0.0], [[0.0]], [0.5]))
    rep = dirichlet_free_gap(Ld, u0, k=4, rho_schedule=[0.25, 0.125], resolution=65,
                             config=SolverConfig(rng_seed=seed, multistart_count=4), jobs=jobs)
    gaps.append(("double_well", rep.gap, 5e-2, rep.max_chain_violation))
    ok = all(g <= tol and viol <= 1e-6 for _, g, tol, viol in gaps)
    ok8, el8 = close(ok)
    c8 = CriterionResult(
        cid="C8",
        name="density-integral vs partition-recovery gap",
        passed=ok8,
        measured="; ".join(f"{k}: {g:.2e}" for k, g, _, _ in gaps),
        expected="convex/homog <= 1e-02, double-well <= 5e-02, < 300 s",
        elapsed=el8,
    )
    tables = {
        "subadditivity": (("kind", "n_cubes", "whole_value", "remainder", "margin", "ok"), rows),
        "gaps": (("instance", "gap", "tolerance", "chain_violation"), [g for g in gaps]),
    }
    return SuiteResult("sandwich", [c7, c8], tables)


# ---------------------------------------------------------------------------
# registry


SUITES = {
    "convex": run_convex,
    "homog1d": run_homog1d,
    "laminate2d": run_laminate2d,
    "doublewell": run_doublewell,
    "vitali": run_vitali,
    "sandwich": run_sandwich,
}


def run_suite(name: str, seed: int = 1234, jobs: int = 1) -> SuiteResult:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITE_NAMES}")
    return SUITES[name](seed=seed, jobs=jobs)
