import numpy as np
import pytest

from cellvar.dirichlet import SolverConfig
from cellvar.homogenize import (
    HomogenizedDensity,
    cell_average,
    density_grid,
    estimate_Lhom_periodic,
    h_diagnostic,
)
from cellvar.integrands import PerturbedFamily, family_of, make_builtin

from oracles import harmonic_cell_value_1d, laminate_closed_forms


CFG = SolverConfig(rng_seed=3)
CFG2D = SolverConfig(rng_seed=3, multistart_count=1, max_iterations=3000, gradient_tolerance=1e-8)


# ---------------------------------------------------------------------------
# cell averages


def test_cell_average_convex_x_independent():
    L = make_builtin("p_power", {"p": 2, "d": 1, "m": 1})
    for t, rho in [(1.0, 1.0), (3.0, 0.5), (10.0, 0.2)]:
        avg = cell_average(L, 1.3, [0.0], rho, t, 17, CFG)
        assert avg.value == pytest.approx(1.3**2, rel=1e-8)


def test_cell_average_periodic_integer_scales():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    oracle = harmonic_cell_value_1d([1, 4], 0.0, 2.0, 1.0)
    avg = cell_average(L, 1.0, [0.5], 1.0, 2.0, 65, CFG)
    assert avg.value == pytest.approx(oracle, abs=1e-6)


def test_cell_average_laminate_along_layers():
    L = make_builtin("laminate_2d", {"a": [1, 4]})
    _, arith = laminate_closed_forms(1.0, 4.0)
    avg = cell_average(L, [[0.0, 1.0]], [0.5, 0.5], 1.0, 1.0, 33, CFG2D)
    assert avg.value == pytest.approx(arith, rel=0.01)


def test_cell_average_refuses_noncoercive():
    L = make_builtin("double_well_1d", {})
    with pytest.raises(ValueError, match="alpha=0"):
        cell_average(L, 0.5, [0.0], 1.0, 1.0, 17, CFG)
    avg = cell_average(L, 0.5, [0.0], 1.0, 1.0, 17, CFG, allow_noncoercive=True)
    assert avg.value >= 0.0


def test_cell_average_validates_scales():
    L = make_builtin("p_power", {"p": 2})
    with pytest.raises(ValueError):
        cell_average(L, 1.0, [0.0], 0.0, 1.0, 9, CFG)
    with pytest.raises(ValueError):
        cell_average(L, 1.0, [0.0], 1.0, -2.0, 9, CFG)


# ---------------------------------------------------------------------------
# the periodic formula


def test_lhom_1d_harmonic_mean():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    for xi in (-2.0, -1.0, 1.0, 2.0):
        est = estimate_Lhom_periodic(L, xi, n_max=4, resolution=129, config=CFG)
        assert est.estimate == pytest.approx(1.6 * xi * xi, rel=1e-3)
        # in one dimension the per-period corrector has zero trace: the n=1
        # entry already equals the limit
        assert est.values[0] == pytest.approx(1.6 * xi * xi, rel=1e-6)


def test_lhom_p_power_is_exact():
    L = make_builtin("p_power", {"p": 2, "d": 1, "m": 1})
    import dataclasses

    Lp = dataclasses.replace(L, period=1.0)  # x-independent, trivially periodic
    est = estimate_Lhom_periodic(Lp, 1.5, n_max=2, resolution=17, config=CFG)
    assert est.estimate == pytest.approx(1.5**2, rel=1e-9)


def test_lhom_requires_periodicity():
    L = make_builtin("p_power", {"p": 2})
    with pytest.raises(ValueError, match="not declared periodic"):
        estimate_Lhom_periodic(L, 1.0, n_max=2, resolution=9, config=CFG)


def test_lhom_scale_tail_non_increasing():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    est = estimate_Lhom_periodic(L, 1.0, n_max=3, resolution=65, config=CFG)
    diffs = np.diff(est.values)
    assert np.all(diffs <= 1e-8)


def test_laminate_scale_tail_and_extrapolation():
    # across the layers the zero-trace boundary layer decays like 1/n:
    # the tail is decreasing, stays above the rigorous harmonic-mean floor,
    # and the 1/n extrapolation through n in {3,4} lands near the closed form
    L = make_builtin("laminate_2d", {"a": [1, 4]})
    harm, _ = laminate_closed_forms(1.0, 4.0)
    est = estimate_Lhom_periodic(L, [1.0, 0.0], n_max=4, resolution=65,
                                 config=CFG2D, richardson=True)
    v = est.values
    assert np.all(np.diff(v) <= 1e-8)
    assert v[-1] >= harm - 1e-9
    assert v[-1] <= 1.75
    assert est.estimate_richardson == pytest.approx(harm, abs=0.032)
    assert est.estimate == est.estimate_richardson


def test_laminate_along_layers_exact_at_n1():
    L = make_builtin("laminate_2d", {"a": [1, 4]})
    _, arith = laminate_closed_forms(1.0, 4.0)
    est = estimate_Lhom_periodic(L, [0.0, 1.0], n_max=1, resolution=33, config=CFG2D)
    assert est.estimate == pytest.approx(arith, rel=1e-6)


def test_density_grid_and_convexity_in_xi():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    xis = [-2.0, -1.0, 0.0, 1.0, 2.0]
    grid = density_grid(L, xis, n_max=2, resolution=65, config=CFG)
    assert isinstance(grid, HomogenizedDensity)
    vals = [grid.value(t) for t in xis]
    # midpoint convexity on the slope grid
    for i in range(1, len(xis) - 1):
        assert vals[i - 1] + vals[i + 1] >= 2 * vals[i] - 1e-3
    # coercivity floor and the subadditive upper bound at every scale
    for t, v in zip(xis, vals):
        assert v >= 1.0 * t * t - 1e-9  # alpha = min(a) = 1
    rows = list(grid.csv_rows())
    assert len(rows) == len(xis) * 2


def test_doubling_scales_subadditive():
    L = make_builtin("quadratic_coeff_1d", {"a": [2, 3, 5]})
    a1 = cell_average(L, 1.0, [0.5], 1.0, 2.0, 61, CFG)
    a2 = cell_average(L, 1.0, [0.5], 1.0, 4.0, 121, CFG)
    assert a2.value <= a1.value + 1e-6


def test_jensen_floor_from_coefficient_minimum():
    # cell averages dominate the convexification of xi -> min_y a(y) xi^2
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    for t in (1.0, 2.0):
        avg = cell_average(L, 1.5, [0.5], 1.0, t, 65, CFG)
        assert avg.value >= 1.0 * 1.5**2 - 1e-9


# ---------------------------------------------------------------------------
# homogenizability diagnostic


def test_h_diagnostic_periodic_quadratic():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    rep = h_diagnostic(
        L, 1.0, [[0.0], [0.2], [0.3]], rho_schedule=[1.0, 0.5],
        t_schedule=[2.0, 4.0, 8.0], resolution=81, config=CFG,
    )
    assert rep.max_gap <= 1e-3
    assert rep.numerically_homogenizable


def test_h_diagnostic_x_independent_gap_zero():
    L = make_builtin("p_power", {"p": 2, "d": 1, "m": 1})
    rep = h_diagnostic(
        L, 1.0, [[0.0], [0.4]], rho_schedule=[0.5, 0.25], t_schedule=[1.0, 2.0],
        resolution=17, config=CFG,
    )
    assert rep.max_gap <= 1e-10


def test_h_diagnostic_perturbed_family_away_from_origin():
    L = make_builtin("periodic_plus_perturbation", {"a": [1, 4], "h": 0.25, "d": 1})
    fam = family_of(L)
    assert isinstance(fam, PerturbedFamily)
    rep = h_diagnostic(
        L, 1.0, [[0.3], [0.5]], rho_schedule=[0.2, 0.1], t_schedule=[10.0, 20.0, 40.0],
        resolution=81, config=CFG,
    )
    # away from the origin the bump leaves the cube for large t and the
    # perturbation contributes exactly its flat floor on top of the
    # homogenized base
    assert rep.max_gap <= 1e-3
    for s in rep.samples:
        assert s.upper == pytest.approx(1.6 + 0.25, abs=1e-3)


def test_h_diagnostic_schedule_validation():
    L = make_builtin("quadratic_coeff_1d", {"a": [1, 4]})
    with pytest.raises(ValueError):
        h_diagnostic(L, 1.0, [[0.0]], rho_schedule=[0.5, 0.5], t_schedule=[1.0, 2.0],
                     resolution=17, config=CFG)
    with pytest.raises(ValueError):
        h_diagnostic(L, 1.0, [[0.0]], rho_schedule=[0.5, 0.25], t_schedule=[2.0, 1.0],
                     resolution=17, config=CFG)


def test_tensor_slope_grid_shape_and_cap():
    from cellvar.homogenize import tensor_slope_grid

    grid = tensor_slope_grid(1, 2, -1.0, 1.0, 3)
    assert len(grid) == 9
    assert grid[0].shape == (1, 2)
    with pytest.raises(ValueError, match="5 points"):
        tensor_slope_grid(1, 1, 0.0, 1.0, 6)
