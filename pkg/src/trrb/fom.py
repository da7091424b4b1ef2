"""Full-order optimality system on the finite-element space.

The objective is ``J(u, mu) = Theta(mu) + j_mu(u) + k_mu(u, u)`` subject to
the state equation ``a_mu(u, v) = l_mu(v)``. Since ``a_mu`` is symmetric,
one factorization per parameter serves the primal, dual and sensitivity
solves.
"""
from __future__ import annotations

import threading
from collections import Counter, OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .affine import AffineFunctional, AffineOperator, ParameterSpace, ThetaFunction
from .errors import InvalidArgumentError
from .grid_fem import Factorization, LazyFactorization

CACHE_CAPACITY = 8


@dataclass(frozen=True)
class StateVector:
    values: np.ndarray
    mu: np.ndarray
    role: str  # primal | dual | primal-sensitivity-i | dual-sensitivity-i


@dataclass(frozen=True)
class SecondOrderVerdict:
    accepted: bool
    min_eigenvalue: float
    active: np.ndarray
    subspace_dim: int


def _quad(components, x, y) -> np.ndarray:
    """Vector of x^T C_xi y over the components."""
    return np.array([x @ (c @ y) for c in components])


class FullOrderModel:
    def __init__(self, a: AffineOperator, l: AffineFunctional, j: AffineFunctional,
                 k: AffineOperator, theta: ThetaFunction, space: ParameterSpace,
                 mu_check, name: str = "problem"):
        n = a.shape[0]
        if l.size != n or j.size != n or k.shape[0] != n:
            raise InvalidArgumentError("all forms must share the dof dimension")
        self.a, self.l, self.j, self.k, self.theta = a, l, j, k, theta
        self.space = space
        self.mu_check = space.check(mu_check)
        self.name = name
        self.product = a.evaluate(self.mu_check)
        self._product_fact = LazyFactorization(self.product)
        self._cache: OrderedDict[bytes, Factorization] = OrderedDict()
        self._lock = threading.Lock()
        self.counters: Counter = Counter()

    @property
    def num_dofs(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return self.space.dim

    # -- linear algebra -------------------------------------------------------------

    def factorization(self, mu) -> Factorization:
        mu = self.space.check(mu)
        key = mu.tobytes()
        with self._lock:
            fact = self._cache.get(key)
            if fact is not None:
                self._cache.move_to_end(key)
                return fact
            fact = Factorization(self.a.evaluate(mu))
            self.counters["factorizations"] += 1
            self._cache[key] = fact
            if len(self._cache) > CACHE_CAPACITY:
                self._cache.popitem(last=False)
            return fact

    def riesz(self, functional: np.ndarray) -> np.ndarray:
        """Representative of a functional in the energy product."""
        return self._product_fact.solve(functional)

    def dual_norm(self, functional: np.ndarray) -> float:
        functional = np.asarray(functional, dtype=float)
        return float(np.sqrt(max(functional @ self.riesz(functional), 0.0)))

    def energy_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.product @ v), 0.0)))

    # -- states ---------------------------------------------------------------------

    def solve_primal(self, mu) -> StateVector:
        mu = self.space.check(mu)
        self.counters["primal"] += 1
        u = self.factorization(mu).solve(self.l.evaluate(mu))
        return StateVector(u, mu.copy(), "primal")

    def dual_rhs(self, mu, u: np.ndarray) -> np.ndarray:
        return self.j.evaluate(mu) + 2.0 * (self.k.evaluate(mu) @ u)

    def solve_dual(self, mu, u) -> StateVector:
        mu = self.space.check(mu)
        u = getattr(u, "values", u)
        self.counters["dual"] += 1
        p = self.factorization(mu).solve(self.dual_rhs(mu, u))
        return StateVector(p, mu.copy(), "dual")

    def primal_residual(self, mu, u) -> np.ndarray:
        """Functional v -> l(v) - a(u, v) as a vector."""
        u = getattr(u, "values", u)
        return self.l.evaluate(mu) - self.a.evaluate(mu) @ u

    def dual_residual(self, mu, u, p) -> np.ndarray:
        """Functional v -> j(v) + 2 k(v, u) - a(v, p) as a vector."""
        u, p = getattr(u, "values", u), getattr(p, "values", p)
        return self.dual_rhs(mu, u) - self.a.evaluate(mu) @ p

    def primal_sensitivity_rhs(self, mu, u, nu) -> np.ndarray:
        return self.l.evaluate_directional(mu, nu) - self.a.evaluate_directional(mu, nu) @ u

    def dual_sensitivity_rhs(self, mu, u, p, du, nu) -> np.ndarray:
        return (self.j.evaluate_directional(mu, nu)
                + 2.0 * (self.k.evaluate_directional(mu, nu) @ u)
                - self.a.evaluate_directional(mu, nu) @ p
                + 2.0 * (self.k.evaluate(mu) @ du))

    def _unit(self, i: int) -> np.ndarray:
        e = np.zeros(self.dim)
        e[i] = 1.0
        return e

    def solve_primal_sensitivity(self, mu, u, i: int) -> StateVector:
        mu = self.space.check(mu)
        u = getattr(u, "values", u)
        self.counters["sensitivity"] += 1
        du = self.factorization(mu).solve(self.primal_sensitivity_rhs(mu, u, self._unit(i)))
        return StateVector(du, mu.copy(), f"primal-sensitivity-{i}")

    def solve_dual_sensitivity(self, mu, u, p, du, i: int) -> StateVector:
        mu = self.space.check(mu)
        u, p, du = (getattr(x, "values", x) for x in (u, p, du))
        self.counters["sensitivity"] += 1
        rhs = self.dual_sensitivity_rhs(mu, u, p, du, self._unit(i))
        return StateVector(self.factorization(mu).solve(rhs), mu.copy(), f"dual-sensitivity-{i}")

    # -- objective and derivatives -------------------------------------------------

    def cost(self, mu, u: np.ndarray) -> float:
        """J(u, mu) for a given state."""
        return float(self.theta(mu) + self.j.evaluate(mu) @ u + u @ (self.k.evaluate(mu) @ u))

    def objective(self, mu) -> float:
        u = self.solve_primal(mu).values
        return self.cost(mu, u)

    def partial_cost_and_residual(self, mu, u, p) -> np.ndarray:
        """Explicit parameter gradient of J(u, mu) + l_mu(p) - a_mu(u, p) at fixed u, p."""
        g = self.theta.gradient(mu)
        g = g + (np.vstack(self.j.components) @ u) @ self.j.coefficient_gradients(mu)
        g = g + _quad(self.k.components, u, u) @ self.k.coefficient_gradients(mu)
        g = g + (np.vstack(self.l.components) @ p) @ self.l.coefficient_gradients(mu)
        g = g - _quad(self.a.components, p, u) @ self.a.coefficient_gradients(mu)
        return g

    def gradient_from_states(self, mu, u, p) -> np.ndarray:
        return self.partial_cost_and_residual(mu, getattr(u, "values", u), getattr(p, "values", p))

    def gradient(self, mu) -> np.ndarray:
        u = self.solve_primal(mu)
        p = self.solve_dual(mu, u)
        return self.gradient_from_states(mu, u, p)

    def objective_and_gradient(self, mu):
        u = self.solve_primal(mu)
        p = self.solve_dual(mu, u)
        return self.cost(mu, u.values), self.gradient_from_states(mu, u, p), u, p

    def gradient_sensitivity(self, mu) -> np.ndarray:
        """Chain-rule gradient: explicit partials plus j'(u) du_i + 2 k(du_i, u)."""
        u = self.solve_primal(mu).values
        K = self.k.evaluate(mu)
        jvec = self.j.evaluate(mu)
        g = self.theta.gradient(mu) + (np.vstack(self.j.components) @ u) @ self.j.coefficient_gradients(mu)
        g = g + _quad(self.k.components, u, u) @ self.k.coefficient_gradients(mu)
        for i in range(self.dim):
            du = self.solve_primal_sensitivity(mu, u, i).values
            g[i] += jvec @ du + 2.0 * (du @ (K @ u))
        return g

    def hessian_action(self, mu, nu) -> np.ndarray:
        mu = self.space.check(mu)
        nu = np.asarray(nu, dtype=float)
        fact = self.factorization(mu)
        u = self.solve_primal(mu).values
        p = self.solve_dual(mu, u).values
        du = fact.solve(self.primal_sensitivity_rhs(mu, u, nu))
        dp = fact.solve(self.dual_sensitivity_rhs(mu, u, p, du, nu))
        # first-derivative forms tested with the sensitivities
        h = (np.vstack(self.j.components) @ du) @ self.j.coefficient_gradients(mu)
        h += 2.0 * _quad(self.k.components, du, u) @ self.k.coefficient_gradients(mu)
        h += (np.vstack(self.l.components) @ dp) @ self.l.coefficient_gradients(mu)
        h -= (_quad(self.a.components, du, p) + _quad(self.a.components, u, dp)) \
            @ self.a.coefficient_gradients(mu)
        # second-derivative forms in direction nu
        h += self.theta.hessian(mu) @ nu
        h += (np.vstack(self.j.components) @ u) @ (self.j.coefficient_hessians(mu) @ nu)
        h += _quad(self.k.components, u, u) @ (self.k.coefficient_hessians(mu) @ nu)
        h += (np.vstack(self.l.components) @ p) @ (self.l.coefficient_hessians(mu) @ nu)
        h -= _quad(self.a.components, p, u) @ (self.a.coefficient_hessians(mu) @ nu)
        return h

    def full_hessian(self, mu) -> np.ndarray:
        return np.column_stack([self.hessian_action(mu, self._unit(i)) for i in range(self.dim)])

    def check_second_order(self, mu, g=None, tol: float = 0.0) -> SecondOrderVerdict:
        mu = self.space.check(mu)
        g = self.gradient(mu) if g is None else np.asarray(g, dtype=float)
        return second_order_test(self.full_hessian(mu), mu, g, self.space, tol)


def second_order_test(H, mu, g, space: ParameterSpace, tol: float = 0.0,
                      grad_tol: float = 1e-6) -> SecondOrderVerdict:
    """Positive definiteness of H on inactive directions orthogonal to the gradient.

    Inactive gradient parts below ``grad_tol`` count as zero (numerically critical),
    so no direction is removed for them.
    """
    act_tol = 1e-8 * (space.upper - space.lower)
    active = (mu - space.lower <= act_tol) | (space.upper - mu <= act_tol)
    inactive = np.nonzero(~active)[0]
    if inactive.size == 0:
        return SecondOrderVerdict(True, np.inf, active, 0)
    g_in = g[inactive]
    basis = np.eye(inactive.size)
    if np.linalg.norm(g_in) > grad_tol:
        basis = la.null_space(g_in[None, :])
    if basis.shape[1] == 0:
        return SecondOrderVerdict(True, np.inf, active, 0)
    H_in = np.asarray(H)[np.ix_(inactive, inactive)]
    H_in = 0.5 * (H_in + H_in.T)
    lam = float(np.min(np.linalg.eigvalsh(basis.T @ H_in @ basis)))
    return SecondOrderVerdict(lam > tol, lam, active, basis.shape[1])
