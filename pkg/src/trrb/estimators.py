"""Residual dual norms and a posteriori error bounds for reduced models.

Every residual is a linear combination of a fixed dictionary of functionals:
the components of ``l`` and ``j`` and, for each basis, every operator
component applied to every basis vector. Their Riesz representatives in the
energy product and the pairwise Gram blocks are computed offline; a residual
dual norm is then a quadratic form in theta-weighted coefficients.

All norms are energy norms of the product ``a(mu_check)``; coercivity and
continuity constants use the min-/max-theta bounds relative to it.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla

from .affine import coercivity_lower_bound, continuity_upper_bound, derivative_continuity_upper_bound
from .errors import NumericalBreakdownError
from .rom import ReducedModel

log = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-12
DENSE_EIG_LIMIT = 3000


class RieszCache:
    """Riesz representatives and Gram blocks of the residual dictionary of one model generation."""

    def __init__(self, model: ReducedModel):
        self.model = model
        self.generation = model.generation
        self.reps: dict = {}
        self._gram: dict = {}
        self._parent_reps = model.parent_riesz_reps

    def _functionals(self, group) -> np.ndarray:
        """Array (Xi, N, n) of dictionary functionals; n = 1 for 'l' and 'j'."""
        if group in ("l", "j"):
            comps = getattr(self.model.fom, group).components
            return np.stack(comps)[:, :, None]
        form, name = group
        return self.model.applied(form, name)

    def representatives(self, group) -> np.ndarray:
        if group in self.reps:
            return self.reps[group]
        F = self._functionals(group)
        old = self._parent_reps.get(group)
        n0 = 0 if old is None else old.shape[2]
        self.model.counters["high_dim"] += 1
        xi, N, n = F.shape
        new = F[:, :, n0:]
        if new.shape[2]:
            flat = new.transpose(1, 0, 2).reshape(N, -1)
            solved = self.model.fom.riesz(flat).reshape(N, xi, n - n0).transpose(1, 0, 2)
        else:
            solved = new
        reps = solved if old is None else np.concatenate([old, solved], axis=2)
        self.reps[group] = reps
        return reps

    def gram(self, g, h) -> np.ndarray:
        """Block (Xi_g * n_g, Xi_h * n_h) of pairwise energy products, xi-major ordering."""
        key = (g, h)
        if key in self._gram:
            return self._gram[key]
        if (h, g) in self._gram:
            return self._gram[(h, g)].T
        Fg = self._functionals(g)
        Rh = self.representatives(h)
        self.model.counters["high_dim"] += 1
        xg, N, ng = Fg.shape
        xh, _, nh = Rh.shape
        block = Fg.transpose(0, 2, 1).reshape(xg * ng, N) @ Rh.transpose(1, 0, 2).reshape(N, xh * nh)
        if g == h:
            block = 0.5 * (block + block.T)
        self._gram[key] = block
        return block

    def canonical(self, group):
        if group in ("l", "j"):
            return group
        form, name = group
        return (form, self.model.canon(name))

    def norm(self, terms) -> float:
        """Dual norm of sum_g F_g c_g for ``terms`` = iterable of (group, coefficients)."""
        merged: dict = {}
        for group, coeff in terms:
            group = self.canonical(group)
            coeff = np.asarray(coeff, dtype=float).ravel()
            merged[group] = merged[group] + coeff if group in merged else coeff
        groups = [g for g, c in merged.items() if c.size]
        total = 0.0
        diag = 0.0
        for a, g in enumerate(groups):
            cg = merged[g]
            d = cg @ self.gram(g, g) @ cg
            diag += np.sqrt(max(d, 0.0))
            total += d
            for h in groups[a + 1:]:
                total += 2.0 * cg @ self.gram(g, h) @ merged[h]
        if total < 0.0:
            if total < -NEGATIVE_TOL * max(diag ** 2, 1.0):
                raise NumericalBreakdownError(f"residual quadratic form {total:.3e} is negative")
            log.debug("clamping residual quadratic form %.3e to zero", total)
            total = 0.0
        return float(np.sqrt(total))

    def prepare(self, names=("pr", "du")):
        groups = ["l", "j"] + [(f, n) for f in ("a", "k") for n in names]
        groups = list(dict.fromkeys(self.canonical(g) for g in groups))
        for a, g in enumerate(groups):
            for h in groups[a:]:
                self.gram(g, h)
        return self


def riesz_cache(model: ReducedModel) -> RieszCache:
    if model.riesz_cache is None:
        model.riesz_cache = RieszCache(model)
    return model.riesz_cache


def prepare(model: ReducedModel, names=("pr", "du")) -> ReducedModel:
    """Build projected blocks and Gram blocks so that online evaluation does no N-dim work."""
    model.prepare(names)
    riesz_cache(model).prepare(names)
    return model


def _form_component_constants(fom, form: str) -> np.ndarray:
    """Per-component continuity constants max |eig(C_xi, X)| for forms outside the product."""
    cache = fom.__dict__.setdefault("_component_constants", {})
    if form in cache:
        return cache[form]
    X = fom.product
    out = []
    for C in getattr(fom, form).components:
        if C.nnz == 0:
            out.append(0.0)
            continue
        if fom.num_dofs <= DENSE_EIG_LIMIT:
            lam = la.eigh(C.toarray(), X.toarray(), eigvals_only=True)
            out.append(float(np.max(np.abs(lam))))
        else:
            Xf = spla.splu(X.tocsc())
            Minv = spla.LinearOperator(X.shape, matvec=Xf.solve)
            hi = spla.eigsh(C, k=1, M=X, Minv=Minv, which="LA", return_eigenvectors=False)
            lo = spla.eigsh(C, k=1, M=X, Minv=Minv, which="SA", return_eigenvectors=False)
            out.append(float(max(abs(hi[0]), abs(lo[0]))) * (1 + 1e-8))
    cache[form] = np.array(out)
    return cache[form]


class Constants:
    """Certified coercivity and continuity bounds at one parameter."""

    def __init__(self, model: ReducedModel, mu):
        fom = model.fom
        self.alpha = coercivity_lower_bound(fom.a, mu, fom.mu_check)
        self.gamma_a = continuity_upper_bound(fom.a, mu, fom.mu_check)
        self.gamma_da = derivative_continuity_upper_bound(fom.a, mu, fom.mu_check)
        kc = _form_component_constants(fom, "k")
        self.gamma_k = float(np.abs(fom.k.coefficients(mu)) @ kc)
        self.gamma_dk = np.abs(fom.k.coefficient_gradients(mu)).T @ kc
        cache = riesz_cache(model)
        self.gamma_dj = np.array([cache.norm([("j", c)]) for c in fom.j.coefficient_gradients(mu).T])
        self.gamma_dl = np.array([cache.norm([("l", c)]) for c in fom.l.coefficient_gradients(mu).T])


class Estimators:
    """The estimator family for one reduced model generation."""

    def __init__(self, model: ReducedModel, alpha_scale: float = 1.0):
        self.model = model
        self.cache = riesz_cache(model)
        # fault injection hook for validation runs; 1.0 in normal use
        self.alpha_scale = alpha_scale

    def _state(self, mu):
        return self.model.online(mu)

    def constants(self, mu) -> Constants:
        s = self._state(mu)
        if "constants" not in s.extra:
            c = Constants(self.model, mu)
            c.alpha *= self.alpha_scale
            s.extra["constants"] = c
        return s.extra["constants"]

    # -- residual norms -------------------------------------------------------------------

    def residual_norm_primal(self, mu) -> float:
        s = self._state(mu)
        if "r_pr" not in s.extra:
            s.extra["r_pr"] = self.cache.norm([("l", s.th["l"]), (("a", "pr"), -np.kron(s.th["a"], s.u))])
        return s.extra["r_pr"]

    def residual_norm_dual(self, mu) -> float:
        s = self._state(mu)
        if "r_du" not in s.extra:
            s.extra["r_du"] = self.cache.norm([
                ("j", s.th["j"]), (("k", "pr"), 2.0 * np.kron(s.th["k"], s.u)),
                (("a", "du"), -np.kron(s.th["a"], s.p))])
        return s.extra["r_du"]

    def residual_norm_sens_pr(self, mu, i: int, flavor: str = "galerkin") -> float:
        s = self._state(mu)
        du, _ = self.model.solve_reduced_sensitivities(mu, i, flavor)
        return self.cache.norm([
            ("l", s.dth["l"][:, i]), (("a", "pr"), -np.kron(s.dth["a"][:, i], s.u)),
            (("a", du.basis), -np.kron(s.th["a"], du.coefficients))])

    def residual_norm_sens_du(self, mu, i: int, flavor: str = "galerkin") -> float:
        s = self._state(mu)
        du, dp = self.model.solve_reduced_sensitivities(mu, i, flavor)
        return self.cache.norm([
            ("j", s.dth["j"][:, i]), (("k", "pr"), 2.0 * np.kron(s.dth["k"][:, i], s.u)),
            (("a", "du"), -np.kron(s.dth["a"][:, i], s.p)),
            (("k", du.basis), 2.0 * np.kron(s.th["k"], du.coefficients)),
            (("a", dp.basis), -np.kron(s.th["a"], dp.coefficients))])

    # -- state and output bounds ----------------------------------------------------------

    def delta_pr(self, mu) -> float:
        return self.residual_norm_primal(mu) / self.constants(mu).alpha

    def delta_du(self, mu) -> float:
        c = self.constants(mu)
        return (2.0 * c.gamma_k * self.delta_pr(mu) + self.residual_norm_dual(mu)) / c.alpha

    def delta_J_ncd(self, mu) -> float:
        d = self.delta_pr(mu)
        return d * self.residual_norm_dual(mu) + d * d * self.constants(mu).gamma_k

    def delta_J_standard(self, mu) -> float:
        return self.delta_J_ncd(mu) + abs(self.model.ncd_correction(mu))

    # -- gradient bounds ------------------------------------------------------------------

    def delta_grad_standard_vector(self, mu) -> np.ndarray:
        s = self._state(mu)
        c = self.constants(mu)
        dpr, ddu = self.delta_pr(mu), self.delta_du(mu)
        nu, np_ = np.linalg.norm(s.u), np.linalg.norm(s.p)
        return (2.0 * dpr * nu * c.gamma_dk + dpr * (c.gamma_dj + c.gamma_da * np_)
                + ddu * (c.gamma_dl + c.gamma_da * nu) + dpr * ddu * c.gamma_da
                + dpr * dpr * c.gamma_dk)

    def delta_grad_standard(self, mu) -> float:
        return float(np.linalg.norm(self.delta_grad_standard_vector(mu)))

    def delta_grad_ncd_adjoint_vector(self, mu) -> np.ndarray:
        s = self._state(mu)
        c = self.constants(mu)
        r_pr, r_du = self.residual_norm_primal(mu), self.residual_norm_dual(mu)
        nu, np_ = np.linalg.norm(s.u), np.linalg.norm(s.p)
        w_bound = (r_du + 2.0 * c.gamma_k * r_pr / c.alpha) / c.alpha
        z_bound = r_pr / c.alpha
        return (self.delta_grad_standard_vector(mu)
                + (c.gamma_dl + c.gamma_da * nu) * w_bound
                + z_bound * (c.gamma_dj + 2.0 * c.gamma_dk * nu + c.gamma_da * np_))

    def delta_grad_ncd_adjoint(self, mu) -> float:
        return float(np.linalg.norm(self.delta_grad_ncd_adjoint_vector(mu)))

    def delta_sens_pr(self, mu, i: int, flavor: str = "galerkin") -> float:
        c = self.constants(mu)
        return (c.gamma_da[i] * self.delta_pr(mu) + self.residual_norm_sens_pr(mu, i, flavor)) / c.alpha

    def delta_sens_du(self, mu, i: int, flavor: str = "galerkin") -> float:
        c = self.constants(mu)
        return (2.0 * c.gamma_dk[i] * self.delta_pr(mu) + c.gamma_da[i] * self.delta_du(mu)
                + 2.0 * c.gamma_k * self.delta_sens_pr(mu, i, flavor)
                + self.residual_norm_sens_du(mu, i, flavor)) / c.alpha

    def delta_grad_sens_vector(self, mu, flavor: str = "galerkin") -> np.ndarray:
        c = self.constants(mu)
        dpr, ddu = self.delta_pr(mu), self.delta_du(mu)
        return np.array([
            c.gamma_dk[i] * dpr * dpr + c.gamma_a * self.delta_sens_pr(mu, i, flavor) * ddu
            + self.residual_norm_sens_du(mu, i, flavor) * dpr
            for i in range(self.model.fom.dim)])

    def delta_grad_sens(self, mu, flavor: str = "galerkin") -> float:
        return float(np.linalg.norm(self.delta_grad_sens_vector(mu, flavor)))


def estimators(model: ReducedModel) -> Estimators:
    est = model.__dict__.get("_estimators")
    if est is None:
        est = Estimators(model)
        model._estimators = est
    return est
