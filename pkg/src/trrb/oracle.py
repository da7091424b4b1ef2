"""Brute-force reference computations for tests.

Nothing here calls the production assembly, factorization or reduced
machinery: matrices are rebuilt cell by cell from the bilinear shape
functions with 3-point Gauss rules, systems are solved densely, and
derivatives come from central differences. Every entry point refuses
problems above ``DOF_CAP`` unknowns so the O(n^3) work stays trivial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import InvalidArgumentError

DOF_CAP = 300

_GAUSS3_POINTS = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0
# reference corners of the counter-clockwise cell vertices
_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def _cap(n: int):
    if n > DOF_CAP:
        raise InvalidArgumentError(f"oracle refuses {n} unknowns (cap {DOF_CAP})")


def dense_solve(A, b) -> np.ndarray:
    A = _dense(A)
    _cap(A.shape[0])
    return la.solve(A, np.asarray(b, dtype=float))


def dense_generalized_eig_extremes(A, B) -> tuple:
    """Smallest and largest eigenvalue of A x = lambda B x with A symmetric, B SPD."""
    A, B = _dense(A), _dense(B)
    _cap(A.shape[0])
    lam = la.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return float(lam[0]), float(lam[-1])


def fd_gradient(f, mu, step: float = 1e-6) -> np.ndarray:
    """Central differences, componentwise."""
    mu = np.asarray(mu, dtype=float)
    g = np.zeros(mu.size)
    for i in range(mu.size):
        e = np.zeros(mu.size)
        e[i] = step
        g[i] = (f(mu + e) - f(mu - e)) / (2.0 * step)
    return g


def direct_riesz_norm(residual, product) -> float:
    """Dual norm of a functional: sqrt(r^T X^{-1} r) with one dense solve."""
    r = np.asarray(residual, dtype=float)
    return float(np.sqrt(max(r @ dense_solve(product, r), 0.0)))


def _dense(M) -> np.ndarray:
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M, dtype=float)


# -- independent Q1 assembly ---------------------------------------------------------------

def _shape(xi: float, eta: float):
    """Bilinear shape functions and their reference gradients at (xi, eta)."""
    sx, sy = _CORNERS[:, 0], _CORNERS[:, 1]
    phi = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    dxi = 0.25 * sx * (1 + sy * eta)
    deta = 0.25 * sy * (1 + sx * xi)
    return phi, dxi, deta


def _cell_values(mesh, values) -> np.ndarray:
    return np.full(mesh.num_cells, float(values)) if np.ndim(values) == 0 else np.asarray(values, float)


def _facet_values(mesh, values) -> np.ndarray:
    return np.full(mesh.num_facets, float(values)) if np.ndim(values) == 0 else np.asarray(values, float)


def dense_diffusion(mesh, coeff) -> np.ndarray:
    _cap(mesh.num_dofs)
    coeff = _cell_values(mesh, coeff)
    K = np.zeros((mesh.num_dofs, mesh.num_dofs))
    for c, verts in enumerate(mesh.cells):
        xy = mesh.vertices[verts]
        for a, wa in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
            for b, wb in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
                _, dxi, deta = _shape(a, b)
                J = np.array([[dxi @ xy[:, 0], deta @ xy[:, 0]], [dxi @ xy[:, 1], deta @ xy[:, 1]]])
                grads = np.linalg.solve(J.T, np.vstack([dxi, deta]))  # rows: d/dx, d/dy
                w = wa * wb * abs(np.linalg.det(J)) * coeff[c]
                K[np.ix_(verts, verts)] += w * (grads.T @ grads)
    return K


def dense_mass(mesh, coeff) -> np.ndarray:
    _cap(mesh.num_dofs)
    coeff = _cell_values(mesh, coeff)
    M = np.zeros((mesh.num_dofs, mesh.num_dofs))
    for c, verts in enumerate(mesh.cells):
        xy = mesh.vertices[verts]
        for a, wa in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
            for b, wb in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
                phi, dxi, deta = _shape(a, b)
                J = np.array([[dxi @ xy[:, 0], deta @ xy[:, 0]], [dxi @ xy[:, 1], deta @ xy[:, 1]]])
                M[np.ix_(verts, verts)] += wa * wb * abs(np.linalg.det(J)) * coeff[c] * np.outer(phi, phi)
    return M


def dense_source(mesh, density) -> np.ndarray:
    _cap(mesh.num_dofs)
    density = _cell_values(mesh, density)
    f = np.zeros(mesh.num_dofs)
    for c, verts in enumerate(mesh.cells):
        xy = mesh.vertices[verts]
        for a, wa in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
            for b, wb in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
                phi, dxi, deta = _shape(a, b)
                J = np.array([[dxi @ xy[:, 0], deta @ xy[:, 0]], [dxi @ xy[:, 1], deta @ xy[:, 1]]])
                f[verts] += wa * wb * abs(np.linalg.det(J)) * density[c] * phi
    return f


def _facet_quadrature(mesh, coeff, tag: str):
    """Yield (vertex pair, weight, hat values) at every 1-D Gauss point of tagged facets."""
    coeff = _facet_values(mesh, coeff)
    for f, (v0, v1) in enumerate(mesh.facets):
        if tag != "all" and mesh.facet_tags[f] != tag:
            continue
        length = np.linalg.norm(mesh.vertices[v1] - mesh.vertices[v0])
        for s, w in zip(_GAUSS3_POINTS, _GAUSS3_WEIGHTS):
            hats = np.array([(1 - s) / 2, (1 + s) / 2])
            yield (v0, v1), w * length / 2 * coeff[f], hats


def dense_boundary_mass(mesh, coeff, tag: str = "all") -> np.ndarray:
    _cap(mesh.num_dofs)
    M = np.zeros((mesh.num_dofs, mesh.num_dofs))
    for pair, w, hats in _facet_quadrature(mesh, coeff, tag):
        M[np.ix_(pair, pair)] += w * np.outer(hats, hats)
    return M


def dense_boundary_source(mesh, density, tag: str = "all") -> np.ndarray:
    _cap(mesh.num_dofs)
    f = np.zeros(mesh.num_dofs)
    for pair, w, hats in _facet_quadrature(mesh, density, tag):
        f[list(pair)] += w * hats
    return f


# -- dense full-order problem ----------------------------------------------------------------

@dataclass
class DenseProblem:
    """Dense copies of an affine problem, solved without the production factorization."""

    a: list
    l: list
    j: list
    k: list
    fom: object  # source of thetas only

    @classmethod
    def from_fom(cls, fom) -> "DenseProblem":
        _cap(fom.num_dofs)
        return cls([_dense(c) for c in fom.a.components], [np.array(c) for c in fom.l.components],
                   [np.array(c) for c in fom.j.components], [_dense(c) for c in fom.k.components], fom)

    def _combine(self, form: str, mu):
        th = getattr(self.fom, form).coefficients(mu)
        return sum(t * c for t, c in zip(th, getattr(self, form)))

    def state(self, mu) -> np.ndarray:
        return dense_solve(self._combine("a", mu), self._combine("l", mu))

    def objective(self, mu) -> float:
        u = self.state(mu)
        return float(self.fom.theta(mu) + self._combine("j", mu) @ u + u @ self._combine("k", mu) @ u)

    def gradient(self, mu, step: float = 1e-6) -> np.ndarray:
        return fd_gradient(self.objective, mu, step)
