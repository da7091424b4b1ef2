"""Heating a single floor of a building toward a target temperature in one room.

Parameters: three wall-set conductivities followed by seven heater-set
powers. The floor plan lives in ``building_geometry.json``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..affine import AffineFunctional, AffineOperator, ParameterSpace, ThetaFunction
from ..errors import InvalidArgumentError, InvalidResolutionError
from ..fom import FullOrderModel
from ..grid_fem import (Mesh, Rectangle, assemble_boundary_mass, assemble_boundary_source,
                        assemble_diffusion, assemble_domain_mass, assemble_source, build_mesh)

SIGMA_D = 100.0
SIGMA_W = 0.05
SIGMA_H = 0.001
TARGET_TEMPERATURE = 18.0
LOWER = np.array([0.025] * 3 + [0.0] * 7)
UPPER = np.array([0.1] * 3 + [100.0] * 7)
MU_CHECK = np.array([0.05] * 3 + [10.0] * 7)
SIGMA = np.array([10 * SIGMA_W, 5 * SIGMA_W, SIGMA_W, 2 * SIGMA_H, 2 * SIGMA_H,
                  SIGMA_H, SIGMA_H, SIGMA_H, SIGMA_H, 4 * SIGMA_H])


@dataclass
class BenchmarkInfo:
    name: str
    mesh: Mesh
    mu_desired: np.ndarray
    cell_sets: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def load_geometry(path=None) -> dict:
    if path is None:
        text = resources.files("trrb.benchmarks").joinpath("building_geometry.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return json.loads(text)


def _aligned(values, origin, h) -> bool:
    steps = (np.asarray(values, dtype=float) - origin) / h
    return bool(np.all(np.abs(steps - np.round(steps)) < 1e-8))


def _boxes_in(points: np.ndarray, boxes, tol: float = 1e-12) -> np.ndarray:
    inside = np.zeros(len(points), dtype=bool)
    for x0, x1, y0, y1 in boxes:
        inside |= ((points[:, 0] >= x0 - tol) & (points[:, 0] <= x1 + tol)
                   & (points[:, 1] >= y0 - tol) & (points[:, 1] <= y1 + tol))
    return inside


def build_building(resolution=(20, 10), geometry: dict | None = None, strict: bool = True):
    """Return (FullOrderModel, BenchmarkInfo).

    With ``strict`` every geometry coordinate must lie on a grid line. Without it
    cells are classified by their centres, which allows coarse test grids where
    thin features may disappear.
    """
    nx, ny = resolution
    geo = load_geometry() if geometry is None else geometry
    x0, x1, y0, y1 = geo["domain"]
    if nx < 1 or ny < 1:
        raise InvalidArgumentError(f"resolution must be positive, got {resolution}")
    mesh = build_mesh(Rectangle(x0, x1, y0, y1), nx, ny)
    if strict:
        boxes = [b for group in ("walls", "windows", "heaters", "outside_doors")
                 for bs in geo[group].values() for b in bs] + geo["domain_of_interest"]
        xs = [b[0] for b in boxes] + [b[1] for b in boxes]
        ys = [b[2] for b in boxes] + [b[3] for b in boxes]
        if not (_aligned(xs, x0, mesh.hx) and _aligned(ys, y0, mesh.hy)):
            raise InvalidResolutionError(
                f"building geometry does not align with a {nx}x{ny} grid (use multiples of 20x10)")

    coeffs = geo["coefficients"]
    centers = mesh.cell_centers
    walls = {name: _boxes_in(centers, boxes) for name, boxes in geo["walls"].items()}
    wall_sets = [np.logical_or.reduce([walls[w] for w in ws]) for ws in geo["wall_sets"]]
    any_wall = np.logical_or.reduce(wall_sets)
    heaters = {name: _boxes_in(centers, boxes) for name, boxes in geo["heaters"].items()}
    heater_sets = [np.logical_or.reduce([heaters[h] for h in hs]) for hs in geo["heater_sets"]]
    interest = _boxes_in(centers, geo["domain_of_interest"])

    mids = mesh.facet_midpoints
    robin = np.full(mesh.num_facets, coeffs["outside_wall"])
    window_facets = _boxes_in(mids, [b for bs in geo["windows"].values() for b in bs], tol=1e-9)
    door_facets = _boxes_in(mids, [b for bs in geo["outside_doors"].values() for b in bs], tol=1e-9)
    robin[window_facets] = coeffs["window"]
    robin[door_facets] = coeffs["outside_door"]
    u_out = geo.get("outside_temperature", 5.0)

    space = ParameterSpace(LOWER, UPPER)
    fixed = (assemble_diffusion(mesh, coeffs["air"] * (~any_wall))
             + assemble_boundary_mass(mesh, robin))
    a_comps = [fixed] + [assemble_diffusion(mesh, s.astype(float)) for s in wall_sets]
    a_thetas = [ThetaFunction.constant(1.0)] + [ThetaFunction.coordinate(i) for i in range(3)]
    a = AffineOperator(a_comps, a_thetas, psd=[True] * 4, space=space)

    l_comps = [assemble_boundary_source(mesh, robin * u_out)]
    l_comps += [assemble_source(mesh, s.astype(float)) for s in heater_sets]
    l_thetas = [ThetaFunction.constant(1.0)] + [ThetaFunction.coordinate(3 + g) for g in range(7)]
    l = AffineFunctional(l_comps, l_thetas, space=space)

    indicator = interest.astype(float)
    area_d = float(indicator.sum() * mesh.hx * mesh.hy)
    j = AffineFunctional([-SIGMA_D * TARGET_TEMPERATURE * assemble_source(mesh, indicator)],
                         [ThetaFunction.constant(1.0)], space=space)
    k = AffineOperator([0.5 * SIGMA_D * assemble_domain_mass(mesh, indicator)],
                       [ThetaFunction.constant(1.0)], psd=[True], space=space)
    mu_desired = np.zeros(10)
    theta = ThetaFunction.quadratic(
        SIGMA, mu_desired, 0.5 * SIGMA_D * TARGET_TEMPERATURE ** 2 * area_d + 1.0)
    fom = FullOrderModel(a, l, j, k, theta, space, MU_CHECK, name="building")
    info = BenchmarkInfo(
        "building", mesh, mu_desired,
        cell_sets={"wall_sets": wall_sets, "heater_sets": heater_sets, "interest": interest,
                   "window_facets": window_facets, "door_facets": door_facets},
        extra={"area_interest": area_d, "target_temperature": TARGET_TEMPERATURE,
               "sigma": SIGMA, "sigma_D": SIGMA_D})
    return fom, info


def interest_misfit(fom: FullOrderModel, info: BenchmarkInfo, u: np.ndarray) -> float:
    """Relative L2 misfit of the state against the target temperature on the room of interest."""
    M = assemble_domain_mass(info.mesh, info.cell_sets["interest"].astype(float))
    diff = u - TARGET_TEMPERATURE
    return float(np.sqrt(diff @ (M @ diff)) / np.sqrt(TARGET_TEMPERATURE ** 2 * info.extra["area_interest"]))


__all__ = ["build_building", "load_geometry", "BenchmarkInfo", "interest_misfit"]
