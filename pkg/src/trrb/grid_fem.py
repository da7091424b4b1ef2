"""Bilinear (Q1) finite elements on structured rectangular grids.

A mesh is an ``nx`` by ``ny`` grid of equal cells over an axis-aligned
rectangle. An optional cell mask removes cells, which lets rectilinear
non-rectangular domains (the thermal fin) live on the same machinery;
vertices not touched by an active cell are dropped and the remaining ones
renumbered.

Data are piecewise constant: one value per active cell, or one value per
boundary facet. All integrals use 2x2 Gauss quadrature, exact for these
integrands.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import FactorizationError, InvalidArgumentError

BOUNDARY_TAGS = ("left", "right", "bottom", "top")

_GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)  # on [-1, 1], weights 1


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise InvalidArgumentError(f"degenerate rectangle {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True, eq=False)
class Mesh:
    domain: Rectangle
    nx: int
    ny: int
    vertices: np.ndarray  # (num_dofs, 2)
    cells: np.ndarray  # (num_cells, 4) vertex ids, counter-clockwise from lower left
    cell_index: np.ndarray  # (num_cells, 2) grid position (i, j)
    facets: np.ndarray  # (num_facets, 2) vertex ids of boundary facets
    facet_cell: np.ndarray  # owning active cell of each boundary facet
    facet_tags: np.ndarray  # outward-normal tag per facet, entries of BOUNDARY_TAGS
    grid_vertex: np.ndarray = field(repr=False)  # (ny+1, nx+1) -> dof id or -1

    @property
    def hx(self) -> float:
        return (self.domain.x1 - self.domain.x0) / self.nx

    @property
    def hy(self) -> float:
        return (self.domain.y1 - self.domain.y0) / self.ny

    @property
    def num_dofs(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    @property
    def cell_centers(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @property
    def facet_midpoints(self) -> np.ndarray:
        return self.vertices[self.facets].mean(axis=1)

    @property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def facet_mask(self, tag: str) -> np.ndarray:
        if tag == "all":
            return np.ones(self.num_facets, dtype=bool)
        if tag not in BOUNDARY_TAGS:
            raise InvalidArgumentError(f"unknown boundary tag {tag!r}")
        return self.facet_tags == tag


def build_mesh(domain: Rectangle, nx: int, ny: int, cell_mask=None) -> Mesh:
    """Structured Q1 mesh; ``cell_mask`` has shape (ny, nx), True = keep."""
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"resolution must be positive integers, got {nx}x{ny}")
    nx, ny = int(nx), int(ny)
    if cell_mask is None:
        active = np.ones((ny, nx), dtype=bool)
    else:
        active = np.asarray(cell_mask, dtype=bool)
        if active.shape != (ny, nx):
            raise InvalidArgumentError(f"cell mask shape {active.shape} != {(ny, nx)}")
        if not active.any():
            raise InvalidArgumentError("cell mask removes every cell")

    jj, ii = np.nonzero(active)  # row-major: i runs fastest within a row
    used = np.zeros((ny + 1, nx + 1), dtype=bool)
    for dj, di in ((0, 0), (0, 1), (1, 1), (1, 0)):
        used[jj + dj, ii + di] = True
    grid_vertex = np.full((ny + 1, nx + 1), -1, dtype=np.int64)
    grid_vertex[used] = np.arange(used.sum())

    xs = np.linspace(domain.x0, domain.x1, nx + 1)
    ys = np.linspace(domain.y0, domain.y1, ny + 1)
    vj, vi = np.nonzero(used)
    vertices = np.column_stack([xs[vi], ys[vj]])

    cells = np.column_stack([
        grid_vertex[jj, ii], grid_vertex[jj, ii + 1],
        grid_vertex[jj + 1, ii + 1], grid_vertex[jj + 1, ii],
    ])

    padded = np.zeros((ny + 2, nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = active
    facets, owners, tags = [], [], []
    # (tag, neighbour offset (dj, di), local vertex pair)
    sides = (("bottom", (-1, 0), (0, 1)), ("right", (0, 1), (1, 2)),
             ("top", (1, 0), (2, 3)), ("left", (0, -1), (3, 0)))
    for tag, (dj, di), (a, b) in sides:
        exposed = ~padded[jj + 1 + dj, ii + 1 + di]
        idx = np.nonzero(exposed)[0]
        facets.append(cells[idx][:, [a, b]])
        owners.append(idx)
        tags.append(np.full(len(idx), tag))
    return Mesh(
        domain=domain, nx=nx, ny=ny, vertices=vertices, cells=cells,
        cell_index=np.column_stack([ii, jj]),
        facets=np.concatenate(facets), facet_cell=np.concatenate(owners),
        facet_tags=np.concatenate(tags), grid_vertex=grid_vertex,
    )


def _reference_element(hx: float, hy: float):
    """Q1 stiffness and mass element matrices by 2x2 Gauss quadrature."""
    # local vertex k sits at reference corner (sx[k], sy[k]) in {-1, 1}^2
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    jac = hx * hy / 4.0
    stiff = np.zeros((4, 4))
    mass = np.zeros((4, 4))
    for xi in _GAUSS_1D:
        for eta in _GAUSS_1D:
            phi = (1 + sx * xi) * (1 + sy * eta) / 4.0
            dphi_dx = sx * (1 + sy * eta) / 4.0 * (2.0 / hx)
            dphi_dy = sy * (1 + sx * xi) / 4.0 * (2.0 / hy)
            stiff += jac * (np.outer(dphi_dx, dphi_dx) + np.outer(dphi_dy, dphi_dy))
            mass += jac * np.outer(phi, phi)
    return stiff, mass


def _check_field(values, n: int, what: str) -> np.ndarray:
    values = np.broadcast_to(np.asarray(values, dtype=float), (n,)) if np.ndim(values) == 0 \
        else np.asarray(values, dtype=float)
    if values.shape != (n,):
        raise InvalidArgumentError(f"{what} needs {n} values, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError(f"{what} has non-finite values")
    return values


def _assemble_cells(mesh: Mesh, coeff, element: np.ndarray) -> sp.csc_matrix:
    coeff = _check_field(coeff, mesh.num_cells, "cell field")
    rows = np.repeat(mesh.cells, 4, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 4)).ravel()
    data = (coeff[:, None] * element.ravel()[None, :]).ravel()
    n = mesh.num_dofs
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()


def assemble_diffusion(mesh: Mesh, coeff) -> sp.csc_matrix:
    """Matrix of (v, w) -> int coeff grad v . grad w."""
    stiff, _ = _reference_element(mesh.hx, mesh.hy)
    return _assemble_cells(mesh, coeff, stiff)


def assemble_domain_mass(mesh: Mesh, indicator) -> sp.csc_matrix:
    """Matrix of (v, w) -> int indicator v w."""
    _, mass = _reference_element(mesh.hx, mesh.hy)
    return _assemble_cells(mesh, indicator, mass)


def _boundary_selection(mesh: Mesh, coeff, tag: str):
    coeff = _check_field(coeff, mesh.num_facets, "facet field")
    sel = mesh.facet_mask(tag)
    return mesh.facets[sel], coeff[sel] * mesh.facet_lengths[sel]


def assemble_boundary_mass(mesh: Mesh, coeff, tag: str = "all") -> sp.csc_matrix:
    """Matrix of (v, w) -> int_{tagged facets} coeff v w."""
    facets, scaled = _boundary_selection(mesh, coeff, tag)
    element = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    rows = np.repeat(facets, 2, axis=1).ravel()
    cols = np.tile(facets, (1, 2)).ravel()
    data = (scaled[:, None] * element.ravel()[None, :]).ravel()
    n = mesh.num_dofs
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()


def assemble_source(mesh: Mesh, density) -> np.ndarray:
    """Vector of v -> int density v."""
    density = _check_field(density, mesh.num_cells, "cell field")
    area = mesh.hx * mesh.hy
    out = np.zeros(mesh.num_dofs)
    np.add.at(out, mesh.cells.ravel(), np.repeat(density * area / 4.0, 4))
    return out


def assemble_boundary_source(mesh: Mesh, density, tag: str = "all") -> np.ndarray:
    """Vector of v -> int_{tagged facets} density v."""
    facets, scaled = _boundary_selection(mesh, density, tag)
    out = np.zeros(mesh.num_dofs)
    np.add.at(out, facets.ravel(), np.repeat(scaled / 2.0, 2))
    return out


class Factorization:
    """Sparse LU of an SPD matrix without pivoting; positive pivots certify SPD."""

    def __init__(self, matrix):
        matrix = sp.csc_matrix(matrix, dtype=float)
        if matrix.shape[0] != matrix.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got {matrix.shape}")
        self.shape = matrix.shape
        try:
            self._lu = splu(matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        pivots = self._lu.U.diagonal()
        scale = np.max(np.abs(pivots)) if len(pivots) else 1.0
        if not np.all(pivots > 1e-14 * scale):
            raise FactorizationError("matrix is singular or indefinite (nonpositive pivot)")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise InvalidArgumentError(f"rhs length {rhs.shape[0]} != {self.shape[0]}")
        return self._lu.solve(rhs)


def factorize(matrix) -> Factorization:
    return Factorization(matrix)


def solve(fact: Factorization, rhs: np.ndarray) -> np.ndarray:
    return fact.solve(rhs)


class LazyFactorization:
    """Factorize on first use; construction is guarded by a lock."""

    def __init__(self, matrix):
        self.matrix = matrix
        self._fact = None
        self._lock = threading.Lock()

    def get(self) -> Factorization:
        if self._fact is None:
            with self._lock:
                if self._fact is None:
                    self._fact = Factorization(self.matrix)
        return self._fact

    def solve(self, rhs):
        return self.get().solve(rhs)
