import numpy as np
import pytest
import scipy.sparse as sp

from trrb.affine import AffineFunctional, AffineOperator, ParameterSpace, ThetaFunction
from trrb.benchmarks import build_building, build_thermal_fin
from trrb.fom import FullOrderModel
from trrb.grid_fem import (Rectangle, assemble_boundary_mass, assemble_boundary_source, assemble_diffusion,
                           assemble_domain_mass, assemble_source, build_mesh)
from trrb.optimizer import reference_parameter


def make_toy_fom(nx: int = 6, ny: int = 4, quadratic_theta: bool = True) -> FullOrderModel:
    """Two conductivities on the left/right halves, a heater power, Robin cooling.

    Small enough for every dense oracle; each parameter enters through one theta.
    """
    mesh = build_mesh(Rectangle(0.0, 2.0, 0.0, 1.0), nx, ny)
    left = (mesh.cell_centers[:, 0] < 1.0).astype(float)
    right = 1.0 - left
    space = ParameterSpace([0.5, 0.5, 0.0], [2.0, 2.0, 3.0])
    a = AffineOperator([assemble_diffusion(mesh, left), assemble_diffusion(mesh, right),
                        assemble_boundary_mass(mesh, 1.0)],
                       [ThetaFunction.coordinate(0), ThetaFunction.coordinate(1), ThetaFunction.constant(1.0)],
                       psd=[True] * 3, space=space)
    l = AffineFunctional([assemble_source(mesh, left), assemble_source(mesh, 1.0)],
                         [ThetaFunction.coordinate(2), ThetaFunction.constant(0.5)], space=space)
    target = right
    j = AffineFunctional([-2.0 * assemble_source(mesh, target)], [ThetaFunction.constant(1.0)], space=space)
    k = AffineOperator([assemble_domain_mass(mesh, target)], [ThetaFunction.constant(1.0)], psd=[True],
                       space=space)
    theta = (ThetaFunction.quadratic([0.1, 0.1, 0.01], [1.0, 1.0, 0.0], 5.0) if quadratic_theta
             else ThetaFunction.constant(5.0))
    return FullOrderModel(a, l, j, k, theta, space, [1.0, 1.0, 1.0], name="toy")


def make_theta_only_fom(theta, with_output: bool = False) -> FullOrderModel:
    """Parameter-independent a and l on [-1, 1]^2; only theta depends on mu."""
    mesh = build_mesh(Rectangle(0, 1, 0, 1), 3, 3)
    space = ParameterSpace([-1.0, -1.0], [1.0, 1.0])
    one = ThetaFunction.constant(1.0)
    a = AffineOperator([assemble_diffusion(mesh, 1.0) + assemble_boundary_mass(mesh, 1.0)], [one], psd=[True],
                       space=space)
    l = AffineFunctional([assemble_boundary_source(mesh, 1.0)], [one], space=space)
    n = mesh.num_dofs
    j = AffineFunctional([np.ones(n) if with_output else np.zeros(n)], [one], space=space)
    k = AffineOperator([sp.identity(n, format="csc") * (1.0 if with_output else 0.0)], [one], psd=[True],
                       space=space)
    return FullOrderModel(a, l, j, k, theta, space, [0.0, 0.0])


@pytest.fixture(scope="session")
def toy():
    return make_toy_fom()


@pytest.fixture(scope="session")
def building():
    return build_building((20, 10))


@pytest.fixture(scope="session")
def building_fom(building):
    return building[0]


@pytest.fixture(scope="session")
def fin():
    return build_thermal_fin(4, seed=0)


@pytest.fixture(scope="session")
def fin_fom(fin):
    return fin[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def building_reference(building_fom):
    """Reference optimum of the 20x10 building, started at the box midpoint."""
    space = building_fom.space
    return reference_parameter(building_fom, 0.5 * (space.lower + space.upper)).mu
