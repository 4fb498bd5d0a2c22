"""Energy densities L(x, v, xi) with growth metadata, and the built-in library.

An integrand maps (point x, field value v, gradient matrix xi) to a
nonnegative energy density. Evaluation is vectorized: x has shape (..., d),
v has shape (..., m), xi has shape (..., m, d) and the result drops the
trailing axes. All built-ins are immutable after construction and their
evaluation is pure, so they can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


# ---------------------------------------------------------------------------
# growth metadata


@dataclass(frozen=True)
class GrowthBounds:
    """Two-sided power bounds alpha*|xi|^p <= L <= beta*(a(x) + |v|^p + |xi|^p).

    alpha == 0 marks a non-coercive density; operations that need a
    coercivity floor must refuse such integrands explicitly.
    """

    alpha: float
    beta: float
    p: float
    a_density: Callable[[Array], Array] | None = None

    def __post_init__(self):
        if not (self.p > 1.0):
            raise ValueError(f"growth exponent must exceed 1, got p={self.p}")
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError("need alpha >= 0 and beta > 0")

    def a_at(self, x: Array) -> Array:
        if self.a_density is None:
            return np.zeros(x.shape[:-1])
        return np.asarray(self.a_density(x), dtype=float)

    @property
    def coercive(self) -> bool:
        return self.alpha > 0.0


@dataclass(frozen=True)
class BreakpointInfo:
    """Discontinuity lattice of a piecewise-constant coefficient.

    The coefficient jumps only on hyperplanes {x[axis] = phase + spacing*k}.
    Meshes aligned to this lattice integrate the density exactly.
    """

    axis: int
    spacing: float
    phase: float = 0.0


@dataclass(frozen=True)
class PerturbationFamily:
    """Additive zero-order perturbation phi(eps, x) dominated by g(x)."""

    phi: Callable[[float, Array], Array]
    dominating_g: Callable[[Array], Array]

    def check_domination(self, eps_values, points: Array, tol: float = 1e-12) -> bool:
        """Sampled check of phi(eps, x) <= g(x)."""
        for eps in eps_values:
            vals = np.asarray(self.phi(float(eps), points), dtype=float)
            g = np.asarray(self.dominating_g(points), dtype=float)
            if np.any(vals > g + tol):
                return False
        return True


# ---------------------------------------------------------------------------
# the integrand type


@dataclass(frozen=True)
class Integrand:
    """Pointwise-evaluable density with growth metadata.

    fn/grad_xi/grad_v operate on strict batched shapes (N, d), (N, m),
    (N, m, d); `eval` is the convenience front end that also accepts
    scalars in the d = m = 1 case.
    """

    fn: Callable[[Array, Array, Array], Array]
    bounds: GrowthBounds
    d: int
    m: int
    caratheodory: bool = True
    x_dependent: bool = False
    v_dependent: bool = False
    period: Optional[float] = None
    breakpoints: Optional[BreakpointInfo] = None
    grad_xi: Optional[Callable[[Array, Array, Array], Array]] = None
    grad_v: Optional[Callable[[Array, Array, Array], Array]] = None
    perturbation: Optional[PerturbationFamily] = None
    periodic_base: Optional["Integrand"] = None
    name: str = "custom"

    def eval(self, x, v, xi):
        X, V, XI, scalar = self._normalize(x, v, xi)
        out = np.asarray(self.fn(X, V, XI), dtype=float)
        return float(out[0]) if scalar else out

    __call__ = eval

    def _normalize(self, x, v, xi):
        X = np.asarray(x, dtype=float)
        V = np.asarray(v, dtype=float)
        XI = np.asarray(xi, dtype=float)
        scalar = X.ndim == 0 and XI.ndim == 0
        if X.ndim == 0:
            X = X.reshape(1, 1)
        if V.ndim == 0:
            V = V.reshape(1, 1)
        if XI.ndim == 0:
            XI = XI.reshape(1, 1, 1)
        if X.shape[-1] != self.d:
            raise ValueError(f"x must have trailing dimension {self.d}")
        if V.shape[-1] != self.m:
            raise ValueError(f"v must have trailing dimension {self.m}")
        if XI.shape[-2:] != (self.m, self.d):
            raise ValueError(f"xi must have trailing shape ({self.m}, {self.d})")
        n = max(
            int(np.prod(X.shape[:-1])),
            int(np.prod(V.shape[:-1])),
            int(np.prod(XI.shape[:-2])),
        )
        X = np.broadcast_to(X.reshape(-1, self.d), (n, self.d)) if X.size == self.d else X.reshape(-1, self.d)
        V = np.broadcast_to(V.reshape(-1, self.m), (n, self.m)) if V.size == self.m else V.reshape(-1, self.m)
        XI = (
            np.broadcast_to(XI.reshape(-1, self.m, self.d), (n, self.m, self.d))
            if XI.size == self.m * self.d
            else XI.reshape(-1, self.m, self.d)
        )
        return X, V, XI, scalar

    @property
    def has_analytic_gradient(self) -> bool:
        return self.grad_xi is not None and (not self.v_dependent or self.grad_v is not None)

    def with_bounds(self, **overrides) -> "Integrand":
        """Copy with growth constants replaced (used by bound diagnostics)."""
        return replace(self, bounds=replace(self.bounds, **overrides))


# ---------------------------------------------------------------------------
# piecewise-constant periodic coefficients


def _coefficient_lookup(table: Array, y: Array) -> Array:
    """Value of a 1-periodic piecewise-constant coefficient at y.

    The unit cell [0, 1) is split into len(table) equal pieces; exact
    breakpoint hits take the left/lower cell value (deterministic
    tie-break on a null set).
    """
    k = len(table)
    frac = y - np.floor(y)
    idx = (np.ceil(frac * k).astype(int) - 1) % k
    return table[idx]


def _validate_table(raw) -> Array:
    table = np.asarray(raw, dtype=float)
    if table.ndim != 1 or table.size < 1:
        raise ValueError("coefficient table must be a nonempty 1-D sequence")
    if np.any(~np.isfinite(table)) or np.any(table <= 0):
        raise ValueError("coefficient table entries must be finite and positive")
    return table


# ---------------------------------------------------------------------------
# built-ins

BUILTIN_NAMES = (
    "p_power",
    "quadratic_coeff_1d",
    "laminate_2d",
    "double_well_1d",
    "periodic_plus_perturbation",
)


def _p_power(params: dict) -> Integrand:
    p = float(params.get("p", 2.0))
    d = int(params.get("d", 1))
    m = int(params.get("m", 1))
    if p <= 1:
        raise ValueError(f"p_power needs p > 1, got {p}")

    def fn(X, V, XI):
        return np.sum(XI * XI, axis=(-2, -1)) ** (p / 2.0)

    def gxi(X, V, XI):
        n2 = np.sum(XI * XI, axis=(-2, -1))
        fac = np.where(n2 > 0, p * n2 ** (p / 2.0 - 1.0), 0.0)
        return fac[..., None, None] * XI

    return Integrand(
        fn=fn,
        bounds=GrowthBounds(alpha=1.0, beta=1.0, p=p),
        d=d,
        m=m,
        grad_xi=gxi,
        name=f"p_power(p={p:g},d={d},m={m})",
    )


def _quadratic_coeff_1d(params: dict) -> Integrand:
    table = _validate_table(params.get("a", [1.0, 4.0]))
    k = len(table)

    def fn(X, V, XI):
        a = _coefficient_lookup(table, X[..., 0])
        return a * XI[..., 0, 0] ** 2

    def gxi(X, V, XI):
        a = _coefficient_lookup(table, X[..., 0])
        return (2.0 * a * XI[..., 0, 0])[..., None, None]

    return Integrand(
        fn=fn,
        bounds=GrowthBounds(alpha=float(table.min()), beta=float(table.max()), p=2.0),
        d=1,
        m=1,
        x_dependent=True,
        caratheodory=False,  # jumps in x
        period=1.0,
        breakpoints=BreakpointInfo(axis=0, spacing=1.0 / k),
        grad_xi=gxi,
        name=f"quadratic_coeff_1d(a={table.tolist()})",
    )


def _laminate_2d(params: dict) -> Integrand:
    table = _validate_table(params.get("a", [1.0, 4.0]))
    k = len(table)

    def fn(X, V, XI):
        a = _coefficient_lookup(table, X[..., 0])
        return a * np.sum(XI * XI, axis=(-2, -1))

    def gxi(X, V, XI):
        a = _coefficient_lookup(table, X[..., 0])
        return 2.0 * a[..., None, None] * XI

    return Integrand(
        fn=fn,
        bounds=GrowthBounds(alpha=float(table.min()), beta=float(table.max()), p=2.0),
        d=2,
        m=1,
        x_dependent=True,
        caratheodory=False,
        period=1.0,
        breakpoints=BreakpointInfo(axis=0, spacing=1.0 / k),
        grad_xi=gxi,
        name=f"laminate_2d(a={table.tolist()})",
    )


def _double_well_1d(params: dict) -> Integrand:
    c0 = float(params.get("c0", 0.0))
    if c0 < 0:
        raise ValueError("coercivity-repair offset c0 must be nonnegative")
    # (xi^2-1)^2 + c0 >= alpha*xi^4 holds for all xi iff alpha <= c0/(1+c0);
    # with c0 = 0 the density touches zero at xi = +-1 and is non-coercive.
    alpha = c0 / (1.0 + c0)

    def fn(X, V, XI):
        s = XI[..., 0, 0]
        return (s * s - 1.0) ** 2 + c0

    def gxi(X, V, XI):
        s = XI[..., 0, 0]
        return (4.0 * s * (s * s - 1.0))[..., None, None]

    def a_density(X):
        return np.full(X.shape[:-1], 1.0 + c0 / 2.0)

    return Integrand(
        fn=fn,
        bounds=GrowthBounds(alpha=alpha, beta=2.0, p=4.0, a_density=a_density),
        d=1,
        m=1,
        grad_xi=gxi,
        name=f"double_well_1d(c0={c0:g})",
    )


def default_perturbation(h: float = 0.25) -> PerturbationFamily:
    """Bump of height eps^(-1/2) on the eps-ball at the origin plus a flat floor h.

    Dominated by g(x) = 2/sqrt(|x|) as long as h <= 1 and the domain stays
    within radius 1/h^2 of the origin.
    """
    if not (0.0 <= h <= 1.0):
        raise ValueError("flat floor h must lie in [0, 1]")

    def phi(eps: float, X: Array) -> Array:
        r = np.linalg.norm(np.atleast_2d(X), axis=-1)
        return np.where(r <= eps, eps ** -0.5, 0.0) + h

    def g(X: Array) -> Array:
        r = np.linalg.norm(np.atleast_2d(X), axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, 2.0 / np.sqrt(r), np.inf)

    return PerturbationFamily(phi=phi, dominating_g=g)


def _periodic_plus_perturbation(params: dict) -> Integrand:
    d = int(params.get("d", 1))
    table = _validate_table(params.get("a", [1.0, 4.0]))
    h = float(params.get("h", 0.25))
    base = _quadratic_coeff_1d({"a": table}) if d == 1 else _laminate_2d({"a": table})
    if d not in (1, 2):
        raise ValueError("periodic_plus_perturbation supports d in {1, 2}")
    pert = default_perturbation(h)
    beta = base.bounds.beta

    def fn(X, V, XI):
        return base.fn(X, V, XI) + pert.phi(1.0, X)

    def a_density(X):
        return 1.0 + pert.dominating_g(X) / beta

    return Integrand(
        fn=fn,
        bounds=GrowthBounds(alpha=base.bounds.alpha, beta=beta, p=2.0, a_density=a_density),
        d=d,
        m=1,
        x_dependent=True,
        caratheodory=False,
        period=None,  # the perturbation destroys periodicity
        breakpoints=base.breakpoints,
        grad_xi=base.grad_xi,
        perturbation=pert,
        periodic_base=base,
        name=f"periodic_plus_perturbation(a={table.tolist()},h={h:g},d={d})",
    )


_FACTORIES = {
    "p_power": _p_power,
    "quadratic_coeff_1d": _quadratic_coeff_1d,
    "laminate_2d": _laminate_2d,
    "double_well_1d": _double_well_1d,
    "periodic_plus_perturbation": _periodic_plus_perturbation,
}


def make_builtin(name: str, params: dict | None = None) -> Integrand:
    """Construct one of the built-in densities by name."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown integrand {name!r}; choose from {BUILTIN_NAMES}")
    return _FACTORIES[name](dict(params or {}))


# ---------------------------------------------------------------------------
# transforms


def rescale(L: Integrand, eps: float) -> Integrand:
    """The density (x, v, xi) -> L(x/eps, v, xi)."""
    eps = float(eps)
    if eps <= 0:
        raise ValueError(f"scale must be positive, got {eps}")
    if eps == 1.0:
        return L
    if not L.x_dependent:
        return replace(L, name=f"rescale({L.name},{eps:g})")

    def fn(X, V, XI):
        return L.fn(X / eps, V, XI)

    def gxi(X, V, XI):
        return L.grad_xi(X / eps, V, XI)

    def gv(X, V, XI):
        return L.grad_v(X / eps, V, XI)

    old_a = L.bounds.a_density
    bounds = replace(
        L.bounds,
        a_density=(lambda X: old_a(X / eps)) if old_a is not None else None,
    )
    bp = L.breakpoints
    return replace(
        L,
        fn=fn,
        bounds=bounds,
        period=L.period * eps if L.period is not None else None,
        breakpoints=BreakpointInfo(bp.axis, bp.spacing * eps, bp.phase * eps) if bp else None,
        grad_xi=gxi if L.grad_xi is not None else None,
        grad_v=gv if L.grad_v is not None else None,
        name=f"rescale({L.name},{eps:g})",
    )


def freeze(L: Integrand, x0, v0) -> Integrand:
    """Freeze the point and zero-order arguments: (y, w, xi) -> L(x0, v0, xi).

    Only meaningful for densities continuous in (v, xi); callers enforce
    the Caratheodory flag.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v0 = np.atleast_1d(np.asarray(v0, dtype=float))
    if x0.shape != (L.d,) or v0.shape != (L.m,):
        raise ValueError("frozen point/value have wrong dimensions")

    def expand(X):
        n = X.shape[0]
        return np.broadcast_to(x0, (n, L.d)), np.broadcast_to(v0, (n, L.m))

    def fn(X, V, XI):
        Xf, Vf = expand(X)
        return L.fn(Xf, Vf, XI)

    def gxi(X, V, XI):
        Xf, Vf = expand(X)
        return L.grad_xi(Xf, Vf, XI)

    return replace(
        L,
        fn=fn,
        x_dependent=False,
        v_dependent=False,
        period=None,
        breakpoints=None,
        grad_xi=gxi if L.grad_xi is not None else None,
        grad_v=None,
        perturbation=None,
        periodic_base=None,
        name=f"frozen({L.name})",
    )


# ---------------------------------------------------------------------------
# growth diagnostics


@dataclass
class GrowthReport:
    """Worst-case margins of the two growth inequalities over a sample set."""

    samples: int
    lower_margin: float  # min of L - alpha*|xi|^p; negative = coercivity violated
    upper_margin: float  # min of beta*(a+|v|^p+|xi|^p) - L; negative = growth violated
    lower_ok: bool
    upper_ok: bool
    worst_lower_xi: Array | None = None
    worst_upper_xi: Array | None = None

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def check_growth(
    L: Integrand,
    samples: int,
    rng_seed: int,
    bounds: GrowthBounds | None = None,
    x_low=0.0,
    x_high=1.0,
    scale: float = 2.0,
    tol: float = 1e-9,
) -> GrowthReport:
    """Sampled verification of the declared growth bounds (report-only)."""
    if samples < 1:
        raise ValueError("need at least one sample")
    b = bounds if bounds is not None else L.bounds
    rng = np.random.default_rng(rng_seed)
    X = rng.uniform(x_low, x_high, size=(samples, L.d))
    V = rng.normal(0.0, scale, size=(samples, L.m))
    XI = rng.normal(0.0, scale, size=(samples, L.m, L.d))
    vals = np.asarray(L.fn(X, V, XI), dtype=float)
    xi_norm = np.sqrt(np.sum(XI * XI, axis=(-2, -1)))
    v_norm = np.sqrt(np.sum(V * V, axis=-1))
    lower = vals - b.alpha * xi_norm**b.p
    upper = b.beta * (b.a_at(X) + v_norm**b.p + xi_norm**b.p) - vals
    i_lo = int(np.argmin(lower))
    i_up = int(np.argmin(upper))
    return GrowthReport(
        samples=samples,
        lower_margin=float(lower[i_lo]),
        upper_margin=float(upper[i_up]),
        lower_ok=bool(lower[i_lo] >= -tol),
        upper_ok=bool(upper[i_up] >= -tol),
        worst_lower_xi=XI[i_lo].copy(),
        worst_upper_xi=XI[i_up].copy(),
    )


# ---------------------------------------------------------------------------
# one-parameter families feeding the iterated-limit estimators


class ConstantFamily:
    """Family constant in the parameter: every member is the same density."""

    def __init__(self, L: Integrand):
        self.L = L
        self.kind = "constant"

    def at(self, eps: float) -> Integrand:
        return self.L

    @property
    def d(self):
        return self.L.d

    @property
    def m(self):
        return self.L.m


class RescaledFamily:
    """Oscillating family (x, v, xi) -> L(x/eps, v, xi)."""

    def __init__(self, L: Integrand):
        self.L = L
        self.kind = "rescaled"

    def at(self, eps: float) -> Integrand:
        return rescale(self.L, eps)

    @property
    def d(self):
        return self.L.d

    @property
    def m(self):
        return self.L.m


class PerturbedFamily:
    """Oscillating base plus additive zero-order perturbation phi(eps, x)."""

    def __init__(self, base: Integrand, perturbation: PerturbationFamily):
        self.base = base
        self.perturbation = perturbation
        self.kind = "perturbed"

    def at(self, eps: float) -> Integrand:
        scaled = rescale(self.base, eps)
        pert = self.perturbation

        def fn(X, V, XI):
            return scaled.fn(X, V, XI) + pert.phi(eps, X)

        return replace(scaled, fn=fn, period=None, name=f"{scaled.name}+phi({eps:g})")

    @property
    def d(self):
        return self.base.d

    @property
    def m(self):
        return self.base.m


def family_of(L: Integrand, kind: str = "auto"):
    """Wrap an integrand in the family the iterated-limit operations expect."""
    if kind == "constant":
        return ConstantFamily(L)
    if kind == "rescaled":
        return RescaledFamily(L)
    if kind == "perturbed" or (kind == "auto" and L.perturbation is not None):
        if L.perturbation is None or L.periodic_base is None:
            raise ValueError("integrand carries no perturbation family")
        return PerturbedFamily(L.periodic_base, L.perturbation)
    if kind == "auto":
        return RescaledFamily(L) if L.x_dependent else ConstantFamily(L)
    raise ValueError(f"unknown family kind {kind!r}")
