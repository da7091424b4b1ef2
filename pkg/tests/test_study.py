import numpy as np
import pytest

from trrb.affine import AffineFunctional, AffineOperator, ParameterSpace, ThetaFunction
from trrb.fom import FullOrderModel
from trrb.grid_fem import (Rectangle, assemble_boundary_mass, assemble_diffusion, assemble_domain_mass,
                           assemble_source, build_mesh)
from trrb.study import ESTIMATOR_COLUMNS, StudyConfig, greedy_estimator_study, log_slope


def _one_parameter_fom() -> FullOrderModel:
    """Conductivity of the heated left half is the only parameter."""
    mesh = build_mesh(Rectangle(0.0, 2.0, 0.0, 1.0), 8, 4)
    left = (mesh.cell_centers[:, 0] < 1.0).astype(float)
    space = ParameterSpace([0.1], [10.0])
    one = ThetaFunction.constant(1.0)
    a = AffineOperator([assemble_diffusion(mesh, left), assemble_diffusion(mesh, 1 - left),
                        assemble_boundary_mass(mesh, 1.0)],
                       [ThetaFunction.coordinate(0), one, one], psd=[True] * 3, space=space)
    l = AffineFunctional([assemble_source(mesh, left)], [one], space=space)
    j = AffineFunctional([-2.0 * assemble_source(mesh, 1 - left)], [one], space=space)
    k = AffineOperator([assemble_domain_mass(mesh, 1 - left)], [one], psd=[True], space=space)
    return FullOrderModel(a, l, j, k, ThetaFunction.constant(2.0), space, [1.0])


@pytest.fixture(scope="module")
def building_study(building_fom):
    cfg = StudyConfig(tau_J=1e-8, tau_grad=1e-8, training_size=30, validation_size=10, max_extensions=10)
    return greedy_estimator_study(building_fom, cfg)


def test_log_slope_of_power_law():
    x = np.logspace(-4, 0, 7)
    assert log_slope(x, 3.0 * x ** 2) == pytest.approx(2.0, rel=1e-12)
    # non-positive entries are dropped, too few points give nan
    assert log_slope([1.0, 0.0, 0.1], [1.0, 5.0, 0.01]) == pytest.approx(2.0, rel=1e-12)
    assert np.isnan(log_slope([1.0], [1.0]))


def test_tolerance_above_initial_estimate_needs_no_extension(toy):
    # the empty model's relative objective estimate exceeds 1 here, so the bar sits above it
    res = greedy_estimator_study(toy, StudyConfig(tau_J=1e6, tau_grad=1e6, training_size=10,
                                                  validation_size=5))
    assert res.complete and res.extensions == 0 and res.rows == []


def test_unreachable_tolerance_gives_partial_study(toy):
    res = greedy_estimator_study(toy, StudyConfig(tau_J=1e-30, training_size=10, validation_size=5,
                                                  max_extensions=2))
    assert not res.complete and res.extensions == 2 and len(res.rows) == 2


def test_rows_carry_every_column(building_study):
    assert building_study.extensions == 10 and not building_study.complete
    for row in building_study.rows:
        assert set(row) == set(ESTIMATOR_COLUMNS)
    assert [r["basis_size"] for r in building_study.rows] == list(range(1, 11))


def test_one_parameter_error_nonincreasing():
    res = greedy_estimator_study(_one_parameter_fom(),
                                 StudyConfig(tau_J=1e-10, tau_grad=1e-10, training_size=40,
                                             validation_size=15, max_extensions=8))
    errors = [r["err_pr"] for r in res.rows]
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_ncd_objective_error_far_below_standard(building_study):
    last = building_study.rows[-1]
    assert last["err_J_ncd"] <= 0.1 * last["err_J_standard"]
    assert last["err_grad_ncd"] <= 0.1 * last["err_grad_inexact"]


def test_ncd_objective_error_decays_at_second_order(building_study):
    rows = building_study.rows
    slope = log_slope([r["est_pr"] for r in rows], [r["err_J_ncd"] for r in rows])
    assert slope >= 1.5


def test_estimates_dominate_errors_in_every_row(building_study):
    for row in building_study.rows:
        assert row["est_J_ncd"] >= row["err_J_ncd"] and row["est_J_standard"] >= row["err_J_standard"]
        assert row["est_pr"] >= row["err_pr"]
