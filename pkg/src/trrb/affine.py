"""Parameter-separable operators and functionals.

A form is a sum of fixed components weighted by scalar parameter
functions, ``A(mu) = sum_xi theta_xi(mu) A_xi``. Derivatives with respect
to the parameter only touch the thetas, which is what makes the offline /
online split of the reduced model possible.

Parameter components are indexed from 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EstimateInvalidError, InvalidArgumentError, OutOfBoundsError


@dataclass(frozen=True)
class ParameterSpace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1 or lower.size == 0:
            raise InvalidArgumentError("bounds must be nonempty vectors of equal length")
        if np.any(lower > upper):
            raise InvalidArgumentError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, mu, tol: float = 0.0) -> bool:
        mu = np.asarray(mu, dtype=float)
        return mu.shape == self.lower.shape and bool(
            np.all(mu >= self.lower - tol) and np.all(mu <= self.upper + tol))

    def check(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != self.lower.shape:
            raise InvalidArgumentError(f"parameter must have shape {self.lower.shape}, got {mu.shape}")
        if not self.contains(mu):
            raise OutOfBoundsError(f"parameter {mu} outside [{self.lower}, {self.upper}]")
        return mu

    def project(self, mu) -> np.ndarray:
        return np.clip(np.asarray(mu, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        size = self.dim if n is None else (n, self.dim)
        return rng.uniform(self.lower, self.upper, size=size)


class ThetaFunction:
    """Scalar parameter function with first and second partial derivatives.

    ``value`` excludes the additive ``offset``; keeping a large constant apart
    lets callers avoid cancellation when only parameter-dependent parts vary.
    """

    def __init__(self, value: Callable, gradient: Callable, hessian: Callable, name: str = "",
                 offset: float = 0.0, constant: bool = False):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name
        self.offset = float(offset)
        self.constant = constant

    def __call__(self, mu) -> float:
        return self.varying(mu) + self.offset

    def varying(self, mu) -> float:
        """Value minus the offset."""
        return float(self._value(np.asarray(mu, dtype=float)))

    def gradient(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.asarray(self._gradient(mu), dtype=float).reshape(mu.size)

    def hessian(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return np.asarray(self._hessian(mu), dtype=float).reshape(mu.size, mu.size)

    def __repr__(self):
        return f"ThetaFunction({self.name})"

    @classmethod
    def constant(cls, c: float = 1.0) -> "ThetaFunction":
        return cls(lambda mu: 0.0, lambda mu: np.zeros(mu.size),
                   lambda mu: np.zeros((mu.size, mu.size)), name=f"{c}", offset=c, constant=True)

    @classmethod
    def coordinate(cls, i: int, scale: float = 1.0) -> "ThetaFunction":
        def grad(mu):
            g = np.zeros(mu.size)
            g[i] = scale
            return g
        return cls(lambda mu: scale * mu[i], grad,
                   lambda mu: np.zeros((mu.size, mu.size)), name=f"{scale}*mu[{i}]")

    @classmethod
    def quadratic(cls, weights, center, offset: float = 0.0) -> "ThetaFunction":
        """0.5 (mu - center)^T W (mu - center) + offset; a vector W means diag(W)."""
        W = np.asarray(weights, dtype=float)
        W = np.diag(W) if W.ndim == 1 else W
        center = np.asarray(center, dtype=float)
        W = 0.5 * (W + W.T)
        return cls(lambda mu: 0.5 * (mu - center) @ W @ (mu - center),
                   lambda mu: W @ (mu - center), lambda mu: W, name="quadratic", offset=offset)


class _AffineForm:
    def __init__(self, components: Sequence, thetas: Sequence[ThetaFunction],
                 space: ParameterSpace | None = None):
        if len(components) == 0 or len(components) != len(thetas):
            raise InvalidArgumentError(
                f"need equally many components and thetas (>= 1), got {len(components)}/{len(thetas)}")
        self.components = list(components)
        self.thetas = list(thetas)
        self.space = space

    def __len__(self):
        return len(self.components)

    def _mu(self, mu, check: bool) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if check and self.space is not None:
            self.space.check(mu)
        return mu

    def coefficients(self, mu, check: bool = False) -> np.ndarray:
        mu = self._mu(mu, check)
        return np.array([t(mu) for t in self.thetas])

    def coefficient_gradients(self, mu) -> np.ndarray:
        """Array (Xi, P) of theta partials."""
        mu = np.asarray(mu, dtype=float)
        return np.array([t.gradient(mu) for t in self.thetas])

    def coefficient_hessians(self, mu) -> np.ndarray:
        """Array (Xi, P, P) of theta second partials."""
        mu = np.asarray(mu, dtype=float)
        return np.array([t.hessian(mu) for t in self.thetas])

    def combine(self, weights):
        raise NotImplementedError

    def evaluate(self, mu, check: bool = True):
        return self.combine(self.coefficients(mu, check=check))

    def evaluate_partial(self, mu, i: int):
        return self.combine(self.coefficient_gradients(mu)[:, i])

    def evaluate_second_partial(self, mu, i: int, m: int):
        return self.combine(self.coefficient_hessians(mu)[:, i, m])

    def evaluate_directional(self, mu, nu):
        return self.combine(self.coefficient_gradients(mu) @ np.asarray(nu, dtype=float))


class AffineOperator(_AffineForm):
    """Sum of theta-weighted sparse matrices; ``psd`` flags components usable for min-theta."""

    def __init__(self, components, thetas, psd=None, space=None):
        comps = [sp.csc_matrix(c, dtype=float) for c in components]
        super().__init__(comps, thetas, space)
        shape = comps[0].shape
        if any(c.shape != shape for c in comps) or shape[0] != shape[1]:
            raise InvalidArgumentError("components must be square and share one shape")
        self.shape = shape
        self.psd = [False] * len(comps) if psd is None else [bool(p) for p in psd]
        if len(self.psd) != len(comps):
            raise InvalidArgumentError("psd flags must match component count")

    def combine(self, weights) -> sp.csc_matrix:
        out = sp.csc_matrix(self.shape)
        for w, c in zip(weights, self.components):
            if w != 0.0:
                out = out + w * c
        return out


class AffineFunctional(_AffineForm):
    def __init__(self, components, thetas, space=None):
        comps = [np.asarray(c, dtype=float).ravel() for c in components]
        super().__init__(comps, thetas, space)
        self.size = comps[0].size
        if any(c.size != self.size for c in comps):
            raise InvalidArgumentError("components must share one length")

    def combine(self, weights) -> np.ndarray:
        return np.asarray(weights, dtype=float) @ np.vstack(self.components)


def evaluate(form: _AffineForm, mu, check: bool = True):
    return form.evaluate(mu, check=check)


def evaluate_partial(form: _AffineForm, mu, i: int):
    return form.evaluate_partial(mu, i)


def _product_thetas(op: AffineOperator, mu_check) -> np.ndarray:
    ref = op.coefficients(mu_check)
    if not all(op.psd):
        raise EstimateInvalidError("min/max-theta needs every component flagged PSD")
    if np.any(ref <= 0):
        raise EstimateInvalidError("theta at the product parameter must be positive")
    return ref


def coercivity_lower_bound(op: AffineOperator, mu, mu_check) -> float:
    """Min-theta bound on the coercivity constant in the energy norm of ``op(mu_check)``."""
    ref = _product_thetas(op, mu_check)
    theta = op.coefficients(mu)
    if np.any(theta <= 0):
        raise EstimateInvalidError(f"nonpositive theta at {mu}; min-theta bound invalid")
    return float(np.min(theta / ref))


def continuity_upper_bound(op: AffineOperator, mu, mu_check) -> float:
    """Max-theta bound on the operator norm in the energy norm of ``op(mu_check)``."""
    ref = _product_thetas(op, mu_check)
    return float(np.max(np.abs(op.coefficients(mu)) / ref))


def derivative_continuity_upper_bound(op: AffineOperator, mu, mu_check) -> np.ndarray:
    """Max-theta bounds for every partial derivative form, as a length-P vector."""
    ref = _product_thetas(op, mu_check)
    return np.max(np.abs(op.coefficient_gradients(mu)) / ref[:, None], axis=0)
