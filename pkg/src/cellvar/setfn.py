"""Set functions on open cubes: lower/upper derivatives, dyadic envelopes,
and sublevel-set cube covers.

The envelope infimum over arbitrary countable cube packings is restricted to
dyadic packings explored by a keep-or-split sweep; for set functions that are
traces of absolutely continuous measures the dyadic value is already exact,
and in general the reported number is an upper bound at the given fineness.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Cube
from .util import check_strictly_monotone, monotone_correct

Array = np.ndarray


# ---------------------------------------------------------------------------
# set functions


class CubeSetFunction:
    """Deterministic real-or-+inf valued function of open cubes.

    `fn` takes a Cube; an optional vectorized `batch(centers, side)` over
    equal-side cube grids makes the dyadic sweep fast. Scalar evaluations are
    memoized per rounded cube key; the cache tolerates concurrent readers
    with exclusive insertion.
    """

    def __init__(
        self,
        fn: Callable[[Cube], float],
        domain: Cube,
        batch: Optional[Callable[[Array, float], Array]] = None,
        name: str = "setfn",
    ):
        self.fn = fn
        self.domain = domain
        self.batch = batch
        self.name = name
        self._memo: dict = {}
        self._lock = threading.Lock()

    def __call__(self, cube: Cube) -> float:
        key = cube.key()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        val = float(self.fn(cube))
        if math.isnan(val):
            raise ValueError(f"{self.name}: NaN value on cube {key}")
        with self._lock:
            self._memo.setdefault(key, val)
        return val

    def eval_grid(self, centers: Array, side: float) -> Array:
        """Values on a family of equal-side cubes (vectorized when possible)."""
        if self.batch is not None:
            vals = np.asarray(self.batch(centers, float(side)), dtype=float)
            if np.any(np.isnan(vals)):
                raise ValueError(f"{self.name}: NaN value in batch evaluation")
            return vals
        return np.array([self(Cube(tuple(c), side)) for c in centers], dtype=float)


def measure_set_function(
    density: Callable[[Array], Array],
    domain: Cube,
    points_per_axis: int = 8,
    name: str = "measure",
) -> CubeSetFunction:
    """Q -> integral of `density` over Q by a per-cube midpoint subgrid.

    `density` maps points (n, d) to values (n,). Exact for densities that
    are affine on each evaluated cube.
    """
    d = domain.d
    k = points_per_axis
    axis = (np.arange(k) + 0.5) / k
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    ref = np.stack([g.ravel() for g in grids], axis=-1)  # (k^d, d) in [0,1]^d

    def fn(cube: Cube) -> float:
        pts = cube.lo[None, :] + ref * cube.side
        return float(np.mean(density(pts)) * cube.volume)

    def batch(centers: Array, side: float) -> Array:
        lo = centers - side / 2.0
        pts = lo[:, None, :] + ref[None, :, :] * side  # (n, k^d, d)
        vals = density(pts.reshape(-1, d)).reshape(len(centers), -1)
        return vals.mean(axis=1) * side**d

    return CubeSetFunction(fn, domain, batch=batch, name=name)


# ---------------------------------------------------------------------------
# lower/upper derivatives


@dataclass
class DerivativeEstimate:
    """Sampled estimates of the lower/upper derivative of a set function at x.

    Candidate cubes contain x, lie inside the ambient cube, and have diameter
    at most rho; off-center candidates are sampled uniformly over admissible
    centers and sides (the definition is an infimum over all such cubes, not
    only centered ones)."""

    point: Array
    lower: float
    upper: float
    rhos: list
    per_rho_inf: list
    per_rho_sup: list
    corrected_inf: list
    corrected_sup: list
    samples_per_rho: int


def lower_derivative(
    G: CubeSetFunction,
    x,
    schedule: Sequence[float],
    samples: int = 64,
    seed: int = 0,
    centered_only: bool = False,
) -> DerivativeEstimate:
    """Stagewise approximation of the lower (and upper) derivative at x.

    For each rho the infimum of G(Q)/vol(Q) over admissible cubes is
    approximated by `samples` random cubes plus the centered one of maximal
    admissible side. Stage sequences are monotone-corrected (the true stage
    infima are nondecreasing as rho shrinks); the last corrected entries are
    the reported estimates.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    O = G.domain
    check_strictly_monotone(schedule, "decreasing", "rho schedule")
    margin = float(min(np.min(x - O.lo), np.min(O.hi - x)))
    if margin < max(schedule):
        raise ValueError(
            f"point {x.tolist()} too close to the boundary: margin {margin:.3g} < max rho {max(schedule):.3g}"
        )
    rng = np.random.default_rng(seed)
    d = O.d
    per_inf: list = []
    per_sup: list = []
    for rho in schedule:
        s_max = rho / math.sqrt(d)
        sides = np.concatenate([[s_max], rng.uniform(0.25 * s_max, s_max, size=samples)])
        ratios = np.empty(sides.shape[0])
        for i, s in enumerate(sides):
            if i == 0 or centered_only:
                c = x.copy()
            else:
                lo_c = np.maximum(x - s / 2.0, O.lo + s / 2.0)
                hi_c = np.minimum(x + s / 2.0, O.hi - s / 2.0)
                c = rng.uniform(lo_c, hi_c)
            val = G(Cube(tuple(c), float(s)))
            ratios[i] = val / s**d
        per_inf.append(float(np.min(ratios)))
        per_sup.append(float(np.max(ratios)))
    corrected_inf = monotone_correct(per_inf, "increasing")
    corrected_sup = monotone_correct(per_sup, "decreasing")
    return DerivativeEstimate(
        point=x,
        lower=corrected_inf[-1],
        upper=corrected_sup[-1],
        rhos=list(schedule),
        per_rho_inf=per_inf,
        per_rho_sup=per_sup,
        corrected_inf=corrected_inf,
        corrected_sup=corrected_sup,
        samples_per_rho=samples,
    )


def integral_of_lower_derivative(
    G: CubeSetFunction,
    O: Cube,
    grid_per_axis: int,
    schedule: Sequence[float],
    samples: int = 48,
    seed: int = 0,
) -> float:
    """Midpoint-grid integral over O of the sampled lower-derivative estimates."""
    d = O.d
    axis = (np.arange(grid_per_axis) + 0.5) / grid_per_axis
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    pts = O.lo[None, :] + np.stack([g.ravel() for g in grids], axis=-1) * O.side
    total = 0.0
    for i, p in enumerate(pts):
        est = lower_derivative(G, p, schedule, samples=samples, seed=seed + 7919 * i)
        total += est.lower
    return total / len(pts) * O.volume


# ---------------------------------------------------------------------------
# dyadic packings and envelopes


@dataclass
class PackedCube:
    level: int
    cube: Cube
    value: float
    certificate: Optional[float] = None  # h * vol(Q) when used as a sublevel witness


@dataclass
class DyadicPacking:
    """Disjoint open cubes with closures in the ambient cube, diameters below
    the declared fineness, covering up to the declared slack volume."""

    ambient: Cube
    fineness: float
    cubes: list
    slack: float = 0.0

    @property
    def covered_volume(self) -> float:
        return sum(p.cube.volume for p in self.cubes)

    @property
    def uncovered_volume(self) -> float:
        return max(self.ambient.volume - self.covered_volume, 0.0)

    def validate(self, pairwise_limit: int = 600) -> None:
        for p in self.cubes:
            if p.cube.diameter >= self.fineness:
                raise AssertionError(f"cube at level {p.level} too coarse: {p.cube.diameter}")
            if not p.cube.inside(self.ambient, tol=1e-12):
                raise AssertionError("packed cube leaves the ambient cube")
        if len(self.cubes) <= pairwise_limit:
            for i in range(len(self.cubes)):
                for j in range(i + 1, len(self.cubes)):
                    if not self.cubes[i].cube.disjoint_from(self.cubes[j].cube, tol=1e-12):
                        raise AssertionError(f"cubes {i} and {j} overlap")

    def csv_rows(self):
        for p in self.cubes:
            corner = p.cube.lo
            yield (p.level, *corner, p.cube.side, p.value,
                   p.certificate if p.certificate is not None else "")


def _level_centers(O: Cube, k: int) -> Array:
    n = 2**k
    side = O.side / n
    coords = [O.lo[a] + (np.arange(n) + 0.5) * side for a in range(O.d)]
    grids = np.meshgrid(*coords, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _child_sums(values: Array, k: int, d: int) -> Array:
    """Sum the 2^d dyadic children (level k+1 array) per parent (level k)."""
    n = 2**k
    shape: list = []
    for _ in range(d):
        shape.extend([n, 2])
    return values.reshape(shape).sum(axis=tuple(range(1, 2 * d, 2))).ravel()


def dyadic_envelope(
    G: CubeSetFunction,
    O: Cube,
    fineness: float,
    max_depth: int = 10,
    slack: float = 0.0,
    require_nonnegative: bool = False,
):
    """Greedy keep-or-split dyadic sweep for the packing envelope.

    Every dyadic cube of diameter below the fineness is either kept or split
    into its 2^d children, whichever minimizes the sum, down to `max_depth`
    generations. Returns (value, DyadicPacking); the value is an upper bound
    on the fineness-stage infimum restricted to dyadic packings.
    """
    if fineness <= 0:
        raise ValueError("fineness must be positive")
    d = O.d
    k_min = 0
    while O.diameter / 2**k_min >= fineness:
        k_min += 1
    if k_min > max_depth:
        raise ValueError(f"max_depth {max_depth} cannot reach fineness {fineness} (needs {k_min})")

    H: list = []
    for k in range(max_depth + 1):
        side = O.side / 2**k
        vals = G.eval_grid(_level_centers(O, k), side)
        if require_nonnegative and np.any(vals < 0):
            raise ValueError(f"{G.name}: negative value at dyadic level {k}")
        H.append(vals)

    V = H[max_depth].copy()
    keep_flags: list = [None] * (max_depth + 1)
    keep_flags[max_depth] = np.ones(V.shape, dtype=bool)
    for k in range(max_depth - 1, -1, -1):
        csum = _child_sums(V, k, d)
        if O.diameter / 2**k < fineness:
            keep = H[k] <= csum  # tie prefers the coarser cube
            V = np.where(keep, H[k], csum)
        else:
            keep = np.zeros(csum.shape, dtype=bool)
            V = csum
        keep_flags[k] = keep

    value = float(V[0]) if V.shape[0] == 1 else float(V.sum())

    # walk the keep decisions to emit the chosen leaves
    cubes: list = []
    stack = [(0, tuple(np.zeros(d, dtype=int)))]
    while stack:
        k, multi = stack.pop()
        n = 2**k
        flat = int(np.ravel_multi_index(multi, (n,) * d)) if d > 1 else int(multi[0])
        if keep_flags[k][flat]:
            side = O.side / n
            center = tuple(O.lo[a] + (multi[a] + 0.5) * side for a in range(d))
            cubes.append(PackedCube(level=k, cube=Cube(center, side), value=float(H[k][flat])))
        else:
            for bits in np.ndindex(*(2,) * d):
                child = tuple(2 * multi[a] + bits[a] for a in range(d))
                stack.append((k + 1, child))
    cubes.sort(key=lambda p: (p.level, p.cube.key()))
    packing = DyadicPacking(ambient=O, fineness=fineness, cubes=cubes, slack=slack)
    if packing.uncovered_volume > slack + 1e-9 * O.volume:
        raise AssertionError("dyadic sweep failed to cover the ambient cube")
    return value, packing


def vitali_envelope(H: CubeSetFunction, O: Cube, fineness: float, slack: float = 0.0, max_depth: int = 10):
    """Envelope of a nonnegative set function (negative values are an error)."""
    return dyadic_envelope(H, O, fineness, max_depth=max_depth, slack=slack, require_nonnegative=True)


# ---------------------------------------------------------------------------
# sublevel-set covers


@dataclass
class SublevelCoverReport:
    packing: DyadicPacking
    level: float
    eligible_points: int
    covered_points: int

    @property
    def covered_fraction(self) -> float:
        if self.eligible_points == 0:
            return 1.0
        return self.covered_points / self.eligible_points


def sublevel_cover(
    G: CubeSetFunction,
    h: float,
    eta: float,
    x_samples,
    seed: int = 0,
    candidates_per_point: int = 48,
) -> SublevelCoverReport:
    """Greedy fine cover by disjoint cubes certifying G(Q) < h * vol(Q).

    Around each sample point whose sampled lower-derivative proxy lies below
    h, certified cubes of diameter below eta are collected; a greedy pass
    selects pairwise disjoint ones. An empty packing is legal when no
    certificates exist.
    """
    if eta <= 0:
        raise ValueError("fineness eta must be positive")
    O = G.domain
    d = O.d
    rng = np.random.default_rng(seed)
    pts = np.atleast_2d(np.asarray(x_samples, dtype=float))
    s_max_global = eta / math.sqrt(d)

    per_point: list = []
    eligible = 0
    for x in pts:
        margin = float(min(np.min(x - O.lo), np.min(O.hi - x)))
        if margin <= 0:
            per_point.append((x, False, []))
            continue
        s_cap = min(s_max_global, 2.0 * margin)
        sides = rng.uniform(0.25 * s_cap, s_cap, size=candidates_per_point)
        certified: list = []
        best_ratio = math.inf
        for i, s in enumerate(sides):
            lo_c = np.maximum(x - s / 2.0, O.lo + s / 2.0)
            hi_c = np.minimum(x + s / 2.0, O.hi - s / 2.0)
            if np.any(lo_c > hi_c):
                continue
            c = rng.uniform(lo_c, hi_c) if i > 0 else np.clip(x, O.lo + s / 2.0, O.hi - s / 2.0)
            cube = Cube(tuple(c), float(s))
            val = G(cube)
            best_ratio = min(best_ratio, val / cube.volume)
            if val < h * cube.volume:
                certified.append((cube, val))
        is_eligible = best_ratio < h
        if is_eligible:
            eligible += 1
        certified.sort(key=lambda cv: cv[0].side)
        per_point.append((x, is_eligible, certified))

    selected: list = []
    covered = 0
    for x, is_eligible, certified in per_point:
        if not is_eligible:
            continue
        if any(p.cube.contains_point(x) for p in selected):
            covered += 1
            continue
        for cube, val in certified:
            if all(p.cube.disjoint_from(cube, tol=1e-12) for p in selected):
                selected.append(
                    PackedCube(level=-1, cube=cube, value=val, certificate=h * cube.volume)
                )
                covered += 1
                break

    packing = DyadicPacking(ambient=O, fineness=eta, cubes=selected, slack=O.volume)
    return SublevelCoverReport(
        packing=packing, level=h, eligible_points=eligible, covered_points=covered
    )
