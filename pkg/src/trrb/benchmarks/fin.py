"""Thermal fin: a central post with four pairs of thin fins.

Parameters: post conductivity, the four fin-level conductivities and the
Biot number. The objective matches the mean root temperature of a desired
parameter and penalizes the distance to it.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..affine import AffineFunctional, AffineOperator, ParameterSpace, ThetaFunction
from ..errors import InvalidResolutionError
from ..fom import FullOrderModel
from ..grid_fem import (Factorization, Rectangle, assemble_boundary_mass, assemble_boundary_source,
                        assemble_diffusion, build_mesh)
from .building import BenchmarkInfo

FIN_LENGTH = 2.5
FIN_THICKNESS = 0.25
POST_HALF_WIDTH = 0.5
FIN_LEVELS = (0.75, 1.75, 2.75, 3.75)  # lower edge of each fin pair
LOWER = np.array([0.1] * 5 + [0.01])
UPPER = np.array([10.0] * 5 + [1.0])
MU_CHECK = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.1])


def desired_parameter(seed: int = 0) -> np.ndarray:
    """Fin conductivities strictly inside the box, post and Biot number at their lower bounds."""
    rng = np.random.default_rng(seed)
    mu = np.empty(6)
    mu[0], mu[5] = 0.1, 0.01
    width = UPPER[1:5] - LOWER[1:5]
    mu[1:5] = LOWER[1:5] + width * (0.01 + 0.98 * rng.random(4))
    return mu


def build_thermal_fin(resolution: int = 4, seed: int = 0):
    """Return (FullOrderModel, BenchmarkInfo); ``resolution`` is cells per unit length."""
    if int(resolution) != resolution or resolution < 4 or resolution % 4:
        raise InvalidResolutionError(
            f"fin thickness {FIN_THICKNESS} needs a multiple of 4 cells per unit, got {resolution}")
    r = int(resolution)
    half = POST_HALF_WIDTH + FIN_LENGTH
    nx, ny = int(round(2 * half * r)), 4 * r
    xc = -half + (np.arange(nx) + 0.5) / r
    yc = (np.arange(ny) + 0.5) / r
    X, Y = np.meshgrid(xc, yc)
    post = np.abs(X) < POST_HALF_WIDTH
    level = np.full(X.shape, -1)
    for m, y0 in enumerate(FIN_LEVELS):
        level[(Y > y0) & (Y < y0 + FIN_THICKNESS) & ~post] = m
    mask = post | (level >= 0)
    mesh = build_mesh(Rectangle(-half, half, 0.0, 4.0), nx, ny, cell_mask=mask)

    cj, ci = mesh.cell_index[:, 1], mesh.cell_index[:, 0]
    cell_post = post[cj, ci]
    cell_level = level[cj, ci]
    mids = mesh.facet_midpoints
    root = (mesh.facet_tags == "bottom") & (np.abs(mids[:, 1]) < 1e-12) \
        & (np.abs(mids[:, 0]) < POST_HALF_WIDTH)
    robin = (~root).astype(float)
    q = assemble_boundary_source(mesh, root.astype(float))  # mean root temperature, |root| = 1

    space = ParameterSpace(LOWER, UPPER)
    a_comps = [assemble_diffusion(mesh, cell_post.astype(float))]
    a_comps += [assemble_diffusion(mesh, (cell_level == m).astype(float)) for m in range(4)]
    a_comps += [assemble_boundary_mass(mesh, robin)]
    a = AffineOperator(a_comps, [ThetaFunction.coordinate(i) for i in range(6)],
                       psd=[True] * 6, space=space)
    # heat flux g_N = -1 through the root
    l = AffineFunctional([-q], [ThetaFunction.constant(1.0)], space=space)

    mu_d = desired_parameter(seed)
    T_d = float(q @ Factorization(a.evaluate(mu_d)).solve(l.evaluate(mu_d)))

    j = AffineFunctional([-T_d * q], [ThetaFunction.constant(1.0)], space=space)
    k = AffineOperator([0.5 * sp.csc_matrix(np.outer(q, q))], [ThetaFunction.constant(1.0)],
                       psd=[True], space=space)
    theta = ThetaFunction.quadratic(np.full(6, 2.0 / (mu_d @ mu_d)), mu_d, T_d ** 2 + 1.0)
    fom = FullOrderModel(a, l, j, k, theta, space, MU_CHECK, name="fin")
    info = BenchmarkInfo("fin", mesh, mu_d,
                         cell_sets={"post": cell_post, "level": cell_level, "root_facets": root},
                         extra={"T_d": T_d, "q": q, "seed": seed})
    return fom, info
