"""Cube domains, tensor meshes, multilinear fields, quadrature, energies.

All computations live on axis-aligned cubes carrying uniform tensor-product
meshes of multilinear (Q1) elements, d in {1, 2, 3}, field dimension m in
{1, 2, 3}. Node order is lexicographic (C order over the axis indices),
m components per node.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .integrands import BreakpointInfo, Integrand

Array = np.ndarray


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class Cube:
    """Open axis-aligned cube given by center and side length."""

    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"cube side must be positive, got {self.side}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def half_side(self) -> float:
        return self.side / 2.0

    @property
    def volume(self) -> float:
        return self.side**self.d

    @property
    def diameter(self) -> float:
        return self.side * math.sqrt(self.d)

    @property
    def lo(self) -> Array:
        return np.asarray(self.center) - self.half_side

    @property
    def hi(self) -> Array:
        return np.asarray(self.center) + self.half_side

    def contains_point(self, x, strict: bool = True) -> bool:
        x = np.asarray(x, dtype=float)
        if strict:
            return bool(np.all(x > self.lo) and np.all(x < self.hi))
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def inside(self, other: "Cube", tol: float = 1e-12) -> bool:
        return bool(np.all(self.lo >= other.lo - tol) and np.all(self.hi <= other.hi + tol))

    def disjoint_from(self, other: "Cube", tol: float = 0.0) -> bool:
        """Open cubes: touching faces still count as disjoint."""
        return bool(np.any(self.lo >= other.hi - tol) or np.any(self.hi <= other.lo + tol))

    def children(self) -> list["Cube"]:
        """The 2^d congruent dyadic halves."""
        half = self.side / 2.0
        quarter = self.side / 4.0
        out = []
        for signs in itertools.product((-1.0, 1.0), repeat=self.d):
            c = tuple(self.center[a] + signs[a] * quarter for a in range(self.d))
            out.append(Cube(c, half))
        return out

    def key(self, ndigits: int = 12) -> tuple:
        return (tuple(round(c, ndigits) for c in self.center), round(self.side, ndigits))

    @staticmethod
    def from_corner(corner, side: float) -> "Cube":
        corner = np.asarray(corner, dtype=float)
        return Cube(tuple(corner + side / 2.0), float(side))


def centered_cube(x, rho: float) -> Cube:
    """The cube of side rho centered at x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return Cube(tuple(x), float(rho))


@dataclass(frozen=True)
class CubeDomain:
    """Cube plus a tensor mesh: `resolution` nodes per edge."""

    center: tuple[float, ...]
    half_side: float
    resolution: int

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("need at least 2 nodes per edge")
        if self.half_side <= 0:
            raise ValueError("half_side must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @staticmethod
    def from_cube(cube: Cube, resolution: int) -> "CubeDomain":
        return CubeDomain(cube.center, cube.half_side, resolution)

    @property
    def cube(self) -> Cube:
        return Cube(self.center, 2.0 * self.half_side)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def side(self) -> float:
        return 2.0 * self.half_side

    @property
    def volume(self) -> float:
        return self.side**self.d

    @property
    def h(self) -> float:
        return self.side / (self.resolution - 1)

    @property
    def n_nodes(self) -> int:
        return self.resolution**self.d

    @property
    def n_cells(self) -> int:
        return (self.resolution - 1) ** self.d

    def axis_coords(self, axis: int) -> Array:
        lo = self.center[axis] - self.half_side
        return lo + self.h * np.arange(self.resolution)

    def nodes(self) -> Array:
        """All node coordinates, shape (n_nodes, d), lexicographic order."""
        grids = np.meshgrid(*(self.axis_coords(a) for a in range(self.d)), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def boundary_mask(self) -> Array:
        r = self.resolution
        idx = np.indices((r,) * self.d).reshape(self.d, -1)
        return np.any((idx == 0) | (idx == r - 1), axis=0)

    def cell_corner_indices(self) -> Array:
        """Node indices of the 2^d corners per cell, shape (n_cells, 2^d)."""
        r = self.resolution
        cell_multi = np.indices((r - 1,) * self.d).reshape(self.d, -1).T  # (ncells, d)
        offsets = _corner_offsets(self.d)  # (2^d, d)
        multi = cell_multi[:, None, :] + offsets[None, :, :]
        flat = np.ravel_multi_index(multi.reshape(-1, self.d).T, (r,) * self.d)
        return flat.reshape(-1, 2**self.d)

    def cell_origins(self) -> Array:
        """Coordinates of each cell's low corner, shape (n_cells, d)."""
        r = self.resolution
        cell_multi = np.indices((r - 1,) * self.d).reshape(self.d, -1).T
        lo = np.asarray(self.center) - self.half_side
        return lo + cell_multi * self.h

    def refined(self) -> "CubeDomain":
        return CubeDomain(self.center, self.half_side, 2 * self.resolution - 1)


@lru_cache(maxsize=None)
def _corner_offsets(d: int) -> Array:
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=int)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-cell rule on [0,1]^d; weights sum to 1 and are scaled by
    the cell volume during assembly."""

    name: str
    points: tuple  # (q, d) nested tuples
    weights: tuple  # (q,)

    @property
    def points_array(self) -> Array:
        return np.asarray(self.points, dtype=float)

    @property
    def weights_array(self) -> Array:
        return np.asarray(self.weights, dtype=float)


@lru_cache(maxsize=None)
def gauss2(d: int) -> QuadratureRule:
    """Tensor two-point Gauss rule: exact for polynomials of degree 3 per axis."""
    g = 0.5 / math.sqrt(3.0)
    pts_1d = (0.5 - g, 0.5 + g)
    pts = tuple(itertools.product(pts_1d, repeat=d))
    w = (1.0 / 2**d,) * 2**d
    return QuadratureRule(name="gauss2", points=pts, weights=w)


@lru_cache(maxsize=None)
def midpoint(d: int) -> QuadratureRule:
    """One-point midpoint rule; never samples on cell faces, so it is safe
    for coefficients that jump on mesh lines."""
    return QuadratureRule(name="midpoint", points=((0.5,) * d,), weights=(1.0,))


@lru_cache(maxsize=None)
def _shape_tables(rule_key: tuple, d: int):
    """Q1 shape values and reference gradients at the rule's points.

    Returns (S, dS) with S shape (q, 2^d) and dS shape (q, 2^d, d); dS must
    be divided by the mesh spacing h at use.
    """
    pts = np.asarray(rule_key, dtype=float)
    offsets = _corner_offsets(d)
    q = pts.shape[0]
    k = offsets.shape[0]
    S = np.ones((q, k))
    dS = np.ones((q, k, d))
    for a in range(d):
        ga = pts[:, a][:, None]
        ba = offsets[:, a][None, :]
        fac = np.where(ba == 1, ga, 1.0 - ga)
        dfac = np.where(ba == 1, 1.0, -1.0)
        S *= fac
        for b in range(d):
            if b == a:
                dS[:, :, b] = dS[:, :, b] * dfac
            else:
                dS[:, :, b] = dS[:, :, b] * fac
    return S, dS


def shape_tables(rule: QuadratureRule, d: int):
    return _shape_tables(rule.points, d)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class AffineMap:
    """y -> v0 + xi @ (y - anchor); the affine boundary data used everywhere."""

    v0: tuple
    xi: tuple  # (m, d) nested
    anchor: tuple

    @staticmethod
    def make(v0, xi, anchor) -> "AffineMap":
        v0 = np.atleast_1d(np.asarray(v0, dtype=float))
        xi = np.asarray(xi, dtype=float)
        if xi.ndim == 0:
            xi = xi.reshape(1, 1)
        elif xi.ndim == 1:
            xi = xi.reshape(1, -1)
        anchor = np.atleast_1d(np.asarray(anchor, dtype=float))
        if xi.shape != (v0.shape[0], anchor.shape[0]):
            raise ValueError(f"slope shape {xi.shape} inconsistent with v0/anchor")
        return AffineMap(tuple(v0), tuple(map(tuple, xi)), tuple(anchor))

    @property
    def m(self) -> int:
        return len(self.v0)

    @property
    def d(self) -> int:
        return len(self.anchor)

    @property
    def slope(self) -> Array:
        return np.asarray(self.xi, dtype=float)

    @property
    def value(self) -> Array:
        return np.asarray(self.v0, dtype=float)

    def __call__(self, points: Array) -> Array:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.value[None, :] + (pts - np.asarray(self.anchor)) @ self.slope.T

    def shifted(self, dv) -> "AffineMap":
        return AffineMap.make(self.value + np.asarray(dv, dtype=float), self.slope, self.anchor)


@dataclass(frozen=True)
class DiscreteField:
    """Continuous piecewise-multilinear field: boundary data plus a
    zero-trace perturbation stored separately.

    base_values carries the boundary data everywhere (typically the affine
    interpolant); perturbation vanishes on boundary nodes, so boundary nodes
    always carry exactly the boundary data.
    """

    domain: CubeDomain
    base_values: Array  # (n_nodes, m)
    perturbation: Array  # (n_nodes, m), zero on boundary nodes
    boundary: Optional[AffineMap] = None

    def __post_init__(self):
        base = np.asarray(self.base_values, dtype=float)
        pert = np.asarray(self.perturbation, dtype=float)
        if base.shape != pert.shape or base.ndim != 2 or base.shape[0] != self.domain.n_nodes:
            raise ValueError("nodal arrays must both have shape (n_nodes, m)")
        bmask = self.domain.boundary_mask()
        if pert[bmask].size and np.max(np.abs(pert[bmask])) > 1e-12 * (1.0 + np.max(np.abs(pert))):
            raise ValueError("perturbation must vanish on boundary nodes")
        object.__setattr__(self, "base_values", base)
        object.__setattr__(self, "perturbation", pert)

    @property
    def m(self) -> int:
        return self.base_values.shape[1]

    @property
    def values(self) -> Array:
        return self.base_values + self.perturbation

    @staticmethod
    def from_affine(domain: CubeDomain, data: AffineMap) -> "DiscreteField":
        base = data(domain.nodes())
        return DiscreteField(domain, base, np.zeros_like(base), boundary=data)

    @staticmethod
    def from_callable(domain: CubeDomain, fn: Callable[[Array], Array], m: int) -> "DiscreteField":
        vals = np.asarray(fn(domain.nodes()), dtype=float).reshape(domain.n_nodes, m)
        return DiscreteField(domain, vals, np.zeros_like(vals))

    def with_perturbation(self, interior_flat: Array) -> "DiscreteField":
        """Build the field whose interior perturbation is the given flat vector."""
        pert = np.zeros_like(self.base_values)
        mask = ~self.domain.boundary_mask()
        pert[mask] = np.asarray(interior_flat, dtype=float).reshape(-1, self.m)
        return DiscreteField(self.domain, self.base_values, pert, boundary=self.boundary)

    def interior_perturbation(self) -> Array:
        mask = ~self.domain.boundary_mask()
        return self.perturbation[mask].ravel()

    def _locate(self, points: Array):
        dom = self.domain
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(dom.center) - dom.half_side
        t = (pts - lo) / dom.h
        cell = np.clip(np.floor(t).astype(int), 0, dom.resolution - 2)
        local = t - cell
        return pts, cell, local

    def evaluate(self, points: Array) -> Array:
        """Multilinear interpolation at arbitrary points inside the cube."""
        pts, cell, local = self._locate(points)
        dom = self.domain
        offsets = _corner_offsets(dom.d)
        multi = cell[:, None, :] + offsets[None, :, :]
        flat = np.ravel_multi_index(
            multi.reshape(-1, dom.d).T, (dom.resolution,) * dom.d
        ).reshape(-1, 2**dom.d)
        vc = self.values[flat]  # (n, 2^d, m)
        w = np.ones((pts.shape[0], 2**dom.d))
        for a in range(dom.d):
            ga = local[:, a][:, None]
            ba = offsets[:, a][None, :]
            w *= np.where(ba == 1, ga, 1.0 - ga)
        return np.einsum("nk,nkm->nm", w, vc)

    def gradient(self, points: Array) -> Array:
        """Per-cell gradient at arbitrary points, shape (n, m, d)."""
        pts, cell, local = self._locate(points)
        dom = self.domain
        offsets = _corner_offsets(dom.d)
        multi = cell[:, None, :] + offsets[None, :, :]
        flat = np.ravel_multi_index(
            multi.reshape(-1, dom.d).T, (dom.resolution,) * dom.d
        ).reshape(-1, 2**dom.d)
        vc = self.values[flat]
        n = pts.shape[0]
        grad = np.empty((n, self.m, dom.d))
        for b in range(dom.d):
            w = np.ones((n, 2**dom.d))
            for a in range(dom.d):
                ga = local[:, a][:, None]
                ba = offsets[:, a][None, :]
                if a == b:
                    w *= np.where(ba == 1, 1.0, -1.0)
                else:
                    w *= np.where(ba == 1, ga, 1.0 - ga)
            grad[:, :, b] = np.einsum("nk,nkm->nm", w, vc) / dom.h
        return grad

    def to_csv(self, path) -> None:
        """Nodal dump: node id, coordinates, m components (lexicographic order)."""
        from .util import write_csv_atomic

        dom = self.domain
        nodes = dom.nodes()
        vals = self.values
        header = ["node", *(f"x{a}" for a in range(dom.d)), *(f"u{c}" for c in range(self.m))]
        rows = (
            [i, *nodes[i], *vals[i]]
            for i in range(dom.n_nodes)
        )
        write_csv_atomic(path, header, rows)

    def to_binary(self, path) -> None:
        """Flat float64 dump, lexicographic node order, m components per node."""
        self.values.astype(np.float64).tofile(path)


def refine(f: DiscreteField, cap: int = 4097) -> DiscreteField:
    """Dyadic refinement: doubled resolution, exact interpolation of f.

    New nodes sit on old cell edges/faces, so multilinear evaluation
    reproduces f exactly and node sets nest.
    """
    new_dom = f.domain.refined()
    if new_dom.resolution > cap:
        raise ValueError(f"refinement would exceed resolution cap {cap}")
    nodes = new_dom.nodes()
    base_field = DiscreteField(f.domain, f.base_values, np.zeros_like(f.base_values), f.boundary)
    base = base_field.evaluate(nodes)
    pert_field = DiscreteField(f.domain, np.zeros_like(f.base_values), f.perturbation, None)
    pert = pert_field.evaluate(nodes)
    # boundary rows of the interpolated perturbation are exactly zero already;
    # clamp tiny round-off so the zero-trace invariant stays exact
    pert[new_dom.boundary_mask()] = 0.0
    return DiscreteField(new_dom, base, pert, boundary=f.boundary)


# ---------------------------------------------------------------------------
# energy assembly


def _quadrature_data(f: DiscreteField, rule: QuadratureRule):
    dom = f.domain
    cells = dom.cell_corner_indices()
    origins = dom.cell_origins()
    S, dS_ref = shape_tables(rule, dom.d)
    return cells, origins, S, dS_ref


def energy(L: Integrand, f: DiscreteField, rule: QuadratureRule | None = None) -> float:
    """Integral of L(x, f(x), grad f(x)) over the field's cube."""
    if rule is None:
        rule = gauss2(f.domain.d)
    dom = f.domain
    cells, origins, S, dS_ref = _quadrature_data(f, rule)
    fc = f.values[cells]  # (ncells, 2^d, m)
    pts = rule.points_array
    wts = rule.weights_array
    cell_vol = dom.h**dom.d
    total = 0.0
    for q in range(pts.shape[0]):
        V = np.einsum("k,ckm->cm", S[q], fc)
        G = np.einsum("ka,ckm->cma", dS_ref[q] / dom.h, fc)
        X = origins + pts[q] * dom.h
        vals = np.asarray(L.fn(X, V, G), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise RuntimeError("non-finite integrand value at a quadrature point")
        total += wts[q] * cell_vol * float(vals.sum())
    return total


def energy_and_gradient(L: Integrand, f: DiscreteField, rule: QuadratureRule | None = None):
    """Energy together with its gradient w.r.t. interior nodal values.

    Returns (energy, flat gradient over interior nodes). Requires an
    analytic gradient on the integrand; use `fd_gradient` otherwise.
    """
    if rule is None:
        rule = gauss2(f.domain.d)
    if L.grad_xi is None:
        e = energy(L, f, rule)
        return e, fd_gradient(L, f, rule)
    dom = f.domain
    cells, origins, S, dS_ref = _quadrature_data(f, rule)
    fc = f.values[cells]
    pts = rule.points_array
    wts = rule.weights_array
    cell_vol = dom.h**dom.d
    total = 0.0
    grad = np.zeros((dom.n_nodes, f.m))
    for q in range(pts.shape[0]):
        V = np.einsum("k,ckm->cm", S[q], fc)
        dS = dS_ref[q] / dom.h
        G = np.einsum("ka,ckm->cma", dS, fc)
        X = origins + pts[q] * dom.h
        vals = np.asarray(L.fn(X, V, G), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise RuntimeError("non-finite integrand value at a quadrature point")
        total += wts[q] * cell_vol * float(vals.sum())
        dxi = np.asarray(L.grad_xi(X, V, G), dtype=float)
        contrib = np.einsum("ka,cma->ckm", dS, dxi)
        if L.v_dependent:
            if L.grad_v is None:
                raise ValueError(f"{L.name}: v-dependent integrand lacks grad_v")
            dv = np.asarray(L.grad_v(X, V, G), dtype=float)
            contrib = contrib + S[q][None, :, None] * dv[:, None, :]
        np.add.at(grad, cells, wts[q] * cell_vol * contrib)
    if not np.all(np.isfinite(grad)):
        raise RuntimeError("non-finite energy gradient")
    mask = ~dom.boundary_mask()
    return total, grad[mask].ravel()


def energy_gradient(L: Integrand, f: DiscreteField, rule: QuadratureRule | None = None) -> Array:
    """Gradient of `energy` w.r.t. interior nodal values (flat vector)."""
    return energy_and_gradient(L, f, rule)[1]


def fd_gradient(L: Integrand, f: DiscreteField, rule: QuadratureRule | None = None, step: float = 1e-6) -> Array:
    """Central finite differences over interior nodal values (fallback path)."""
    x0 = f.interior_perturbation()
    g = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xp[i] += step
        xm = x0.copy()
        xm[i] -= step
        g[i] = (
            energy(L, f.with_perturbation(xp), rule) - energy(L, f.with_perturbation(xm), rule)
        ) / (2 * step)
    return g


# ---------------------------------------------------------------------------
# mesh alignment with coefficient breakpoints


def _as_fraction(x: float, max_den: int = 10**6) -> Fraction:
    return Fraction(x).limit_denominator(max_den)


def _fraction_gcd(a: Fraction, b: Fraction) -> Fraction:
    num = math.gcd(a.numerator * b.denominator, b.numerator * a.denominator)
    return Fraction(num, a.denominator * b.denominator)


def aligned_resolution(
    lo: float,
    side: float,
    info: BreakpointInfo,
    base_resolution: int,
    max_blowup: float = 4.0,
) -> Optional[int]:
    """Resolution near `base_resolution` whose mesh lines hit every coefficient
    breakpoint inside [lo, lo+side] along the breakpoint axis.

    Returns None when no aligned resolution exists within the blowup budget;
    callers then fall back to midpoint quadrature.
    """
    side_f = _as_fraction(side)
    spacing_f = _as_fraction(info.spacing)
    lo_f = _as_fraction(lo - info.phase)
    # offset of the first breakpoint at or right of lo
    offset = (-lo_f) % spacing_f
    if offset >= side_f:
        return base_resolution  # no breakpoint inside: nothing to align
    g = _fraction_gcd(spacing_f, side_f)
    if offset > 0:
        g = _fraction_gcd(g, offset)
    if g == 0:
        return None
    cells_min = side_f / g  # minimal aligned cell count (exact integer as Fraction)
    if cells_min.denominator != 1:
        return None
    cells_min = int(cells_min)
    if cells_min > max_blowup * (base_resolution - 1):
        return None
    q = max(1, round((base_resolution - 1) / cells_min))
    return cells_min * q + 1


def quadrature_for(L: Integrand, domain: CubeDomain) -> QuadratureRule:
    """Gauss by default; midpoint when coefficient jumps cross mesh cells."""
    if L.breakpoints is None:
        return gauss2(domain.d)
    info = L.breakpoints
    lo = domain.center[info.axis] - domain.half_side
    # breakpoints inside the edge span along the relevant axis
    first = math.ceil((lo - info.phase) / info.spacing - 1e-12)
    pos = info.phase + info.spacing * first
    h = domain.h
    while pos < lo + domain.side - 1e-12 * domain.side:
        frac = (pos - lo) / h
        if abs(frac - round(frac)) > 1e-9:
            return midpoint(domain.d)
        pos += info.spacing
    return gauss2(domain.d)
