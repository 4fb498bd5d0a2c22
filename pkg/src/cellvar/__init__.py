"""Numerical toolkit for local Dirichlet cell problems on cubes and the
objects built from them: set-function derivatives, Vitali envelopes,
homogenized energy densities, and quasiconvexified/relaxed densities."""

from .integrands import (
    BreakpointInfo,
    ConstantFamily,
    GrowthBounds,
    Integrand,
    PerturbationFamily,
    PerturbedFamily,
    RescaledFamily,
    check_growth,
    family_of,
    freeze,
    make_builtin,
    rescale,
)
from .grid import (
    AffineMap,
    Cube,
    CubeDomain,
    DiscreteField,
    QuadratureRule,
    centered_cube,
    energy,
    energy_gradient,
    gauss2,
    midpoint,
    refine,
)
from .dirichlet import (
    CellProblem,
    CellSolution,
    SolverConfig,
    cell_domain_for,
    m_eps,
    solve_cell,
    subadditivity_check,
)

__version__ = "0.1.0"
