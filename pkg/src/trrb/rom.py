"""Reduced-basis models: spaces, projected forms, reduced functionals and gradients.

Bases are named. ``"pr"`` and ``"du"`` hold the primal and dual spaces; in
the single-space strategy ``"du"`` is an alias of ``"pr"``. Sensitivity
spaces, used only by the estimator study, are named ``"pr_d{i}"`` and
``"du_d{i}"``.

Projected components are stored per (form, left basis, right basis) block.
A new model generation reuses its parent's blocks and computes only the
rows and columns of newly appended basis vectors. Every operation that
touches a length-``N`` array increments ``counters["high_dim"]``; the
online evaluations (solves, functionals, gradients) never do.
"""
from __future__ import annotations

import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasisError, InvalidArgumentError
from .fom import FullOrderModel

log = logging.getLogger(__name__)

DROP_TOL = 1e-10
STRATEGIES = ("lagrangian", "single")


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    vectors: np.ndarray  # (N, n), orthonormal in the energy product
    provenance: tuple = ()  # (mu, role) per vector

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def empty(cls, num_dofs: int) -> "ReducedBasis":
        return cls(np.zeros((num_dofs, 0)))


def extend_basis(basis: ReducedBasis, snapshot, product, mu=None, role: str = ""):
    """Gram-Schmidt with one re-orthogonalization pass; returns (basis, added)."""
    v = np.array(getattr(snapshot, "values", snapshot), dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("snapshot has non-finite entries")
    norm0 = np.sqrt(max(v @ (product @ v), 0.0))
    if norm0 == 0.0:
        log.info("dropping zero snapshot (%s)", role)
        return basis, False
    B = basis.vectors
    for _ in range(2):
        if B.shape[1]:
            v = v - B @ (B.T @ (product @ v))
    norm = np.sqrt(max(v @ (product @ v), 0.0))
    if norm < DROP_TOL * norm0:
        log.info("dropping linearly dependent snapshot (%s)", role)
        return basis, False
    mu = None if mu is None else np.asarray(mu, dtype=float).copy()
    return ReducedBasis(np.column_stack([B, v / norm]), basis.provenance + ((mu, role),)), True


@dataclass(frozen=True)
class ReducedState:
    coefficients: np.ndarray
    mu: np.ndarray
    role: str
    basis: str


@dataclass
class _Online:
    """Per-parameter reduced quantities shared by objective, gradients and estimators."""
    mu: np.ndarray
    th: dict  # form -> theta values
    dth: dict  # form -> theta partials (Xi, P)
    u: np.ndarray
    p: np.ndarray
    extra: dict = field(default_factory=dict)


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if matrix.shape[0] == 0:
        return np.zeros(0)
    try:
        return np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBasisError(str(exc)) from exc


class ReducedModel:
    """One generation of a reduced model; ``enrich`` returns the next one."""

    def __init__(self, fom: FullOrderModel, strategy: str = "lagrangian", bases=None,
                 parent: "ReducedModel | None" = None, generation: int = 0):
        if strategy not in STRATEGIES:
            raise InvalidArgumentError(f"unknown enrichment strategy {strategy!r}")
        self.fom = fom
        self.strategy = strategy
        if bases is None:
            bases = {"pr": ReducedBasis.empty(fom.num_dofs)}
            if strategy == "lagrangian":
                bases["du"] = ReducedBasis.empty(fom.num_dofs)
        self.bases = dict(bases)
        self.generation = generation
        self.counters: Counter = parent.counters if parent is not None else Counter()
        self._parent_blocks = parent._blocks if parent is not None else {}
        self._parent_applied = parent._applied if parent is not None else {}
        self._blocks: dict = {}
        self._applied: dict = {}
        self._online_cache: OrderedDict = OrderedDict()
        self._tracking_form = None
        parent_cache = getattr(parent, "riesz_cache", None)
        self.parent_riesz_reps = parent_cache.reps if parent_cache is not None else {}
        self.riesz_cache = None

    # -- structure --------------------------------------------------------------------

    @property
    def shared(self) -> bool:
        return self.strategy == "single"

    def canon(self, name: str) -> str:
        return "pr" if (name == "du" and self.shared) else name

    def basis(self, name: str) -> ReducedBasis:
        return self.bases[self.canon(name)]

    def has_basis(self, name: str) -> bool:
        return self.canon(name) in self.bases

    def size(self, name: str) -> int:
        return self.basis(name).size

    @property
    def sizes(self) -> tuple:
        return self.size("pr"), self.size("du")

    def _form(self, name: str):
        return getattr(self.fom, name)

    def applied(self, form: str, name: str) -> np.ndarray:
        """Array (Xi, N, n): every component applied to every basis vector."""
        name = self.canon(name)
        key = (form, name)
        if key in self._applied:
            return self._applied[key]
        B = self.basis(name).vectors
        old = self._parent_applied.get(key)
        n0 = 0 if old is None else old.shape[2]
        comps = self._form(form).components
        new = np.stack([np.asarray(c @ B[:, n0:]).reshape(B.shape[0], -1) for c in comps])
        self.counters["high_dim"] += 1
        out = new if old is None else np.concatenate([old, new], axis=2)
        self._applied[key] = out
        return out

    def op_block(self, form: str, left: str, right: str) -> np.ndarray:
        """Projected operator components, array (Xi, n_left, n_right)."""
        left, right = self.canon(left), self.canon(right)
        key = (form, left, right)
        if key in self._blocks:
            return self._blocks[key]
        L = self.basis(left).vectors
        applied = self.applied(form, right)  # (Xi, N, nr)
        old = self._parent_blocks.get(key)
        self.counters["high_dim"] += 1
        if old is None:
            out = np.einsum("nl,xnr->xlr", L, applied)
        else:
            _, l0, r0 = old.shape
            out = np.empty((applied.shape[0], L.shape[1], applied.shape[2]))
            out[:, :l0, :r0] = old
            out[:, l0:, :] = np.einsum("nl,xnr->xlr", L[:, l0:], applied)
            out[:, :l0, r0:] = np.einsum("nl,xnr->xlr", L[:, :l0], applied[:, :, r0:])
        self._blocks[key] = out
        return out

    def fn_block(self, form: str, name: str) -> np.ndarray:
        """Projected functional components, array (Xi, n)."""
        name = self.canon(name)
        key = (form, name)
        if key in self._blocks:
            return self._blocks[key]
        B = self.basis(name).vectors
        old = self._parent_blocks.get(key)
        n0 = 0 if old is None else old.shape[1]
        self.counters["high_dim"] += 1
        new = np.vstack(self._form(form).components) @ B[:, n0:]
        out = new if old is None else np.concatenate([old, new], axis=1)
        self._blocks[key] = out
        return out

    def prepare(self, names=("pr", "du")):
        """Build every block the online phase needs for the given bases."""
        for left in names:
            self.fn_block("l", left)
            self.fn_block("j", left)
            for right in names:
                self.op_block("a", left, right)
                self.op_block("k", left, right)
        return self

    def reconstruct(self, state: ReducedState) -> np.ndarray:
        self.counters["high_dim"] += 1
        return self.basis(state.basis).vectors @ state.coefficients

    # -- enrichment -----------------------------------------------------------------------

    def extend(self, snapshots) -> "ReducedModel":
        """New generation with ``snapshots`` = iterable of (basis name, vector, mu, role)."""
        bases = dict(self.bases)
        for name, vec, mu, role in snapshots:
            name = self.canon(name)
            current = bases.get(name, ReducedBasis.empty(self.fom.num_dofs))
            bases[name], _ = extend_basis(current, vec, self.fom.product, mu, role)
        return ReducedModel(self.fom, self.strategy, bases, parent=self,
                            generation=self.generation + 1)

    def enrich_with(self, mu, u, p) -> "ReducedModel":
        u, p = getattr(u, "values", u), getattr(p, "values", p)
        return self.extend([("pr", u, mu, "primal"), ("du", p, mu, "dual")])

    def enrich(self, mu, strategy: str | None = None) -> "ReducedModel":
        if strategy is not None and strategy != self.strategy:
            raise InvalidArgumentError("strategy is fixed when the model is created")
        u = self.fom.solve_primal(mu)
        p = self.fom.solve_dual(mu, u)
        return self.enrich_with(mu, u, p)

    # -- online phase ----------------------------------------------------------------------

    def _thetas(self, mu):
        fom = self.fom
        th = {f: getattr(fom, f).coefficients(mu) for f in ("a", "l", "j", "k")}
        dth = {f: getattr(fom, f).coefficient_gradients(mu) for f in ("a", "l", "j", "k")}
        return th, dth

    def matrix(self, form: str, left: str, right: str, weights) -> np.ndarray:
        return np.tensordot(weights, self.op_block(form, left, right), axes=1)

    def vector(self, form: str, name: str, weights) -> np.ndarray:
        return np.asarray(weights) @ self.fn_block(form, name)

    def online(self, mu) -> _Online:
        mu = np.asarray(mu, dtype=float)
        key = mu.tobytes()
        hit = self._online_cache.get(key)
        if hit is not None:
            self._online_cache.move_to_end(key)
            return hit
        th, dth = self._thetas(mu)
        u = _solve(self.matrix("a", "pr", "pr", th["a"]), self.vector("l", "pr", th["l"]))
        rhs = self.vector("j", "du", th["j"]) + 2.0 * self.matrix("k", "du", "pr", th["k"]) @ u
        p = _solve(self.matrix("a", "du", "du", th["a"]), rhs)
        state = _Online(mu.copy(), th, dth, u, p)
        self._online_cache[key] = state
        if len(self._online_cache) > 32:
            self._online_cache.popitem(last=False)
        return state

    def solve_reduced_primal(self, mu) -> ReducedState:
        return ReducedState(self.online(mu).u, np.asarray(mu, float), "primal", "pr")

    def solve_reduced_dual(self, mu, u_r=None) -> ReducedState:
        s = self.online(mu)
        if u_r is not None and not np.array_equal(getattr(u_r, "coefficients", u_r), s.u):
            th = s.th
            u = getattr(u_r, "coefficients", u_r)
            rhs = self.vector("j", "du", th["j"]) + 2.0 * self.matrix("k", "du", "pr", th["k"]) @ u
            return ReducedState(_solve(self.matrix("a", "du", "du", th["a"]), rhs),
                                np.asarray(mu, float), "dual", self.canon("du"))
        return ReducedState(s.p, np.asarray(mu, float), "dual", self.canon("du"))

    def primal_residual_on(self, s: _Online, name: str) -> np.ndarray:
        """r^pr(u_r)[v] for the basis vectors v of ``name``."""
        return self.vector("l", name, s.th["l"]) - self.matrix("a", name, "pr", s.th["a"]) @ s.u

    def dual_residual_on(self, s: _Online, name: str) -> np.ndarray:
        """r^du(u_r, p_r)[v] for the basis vectors v of ``name``."""
        return (self.vector("j", name, s.th["j"])
                + 2.0 * self.matrix("k", name, "pr", s.th["k"]) @ s.u
                - self.matrix("a", name, "du", s.th["a"]) @ s.p)

    def _tracking(self):
        """Completed-square form of the output terms, or False if unavailable.

        With parameter-independent j and k and an SPD reduced k,
        ``j.u + u.K u = (u - c).K (u - c) - c.K c`` with ``c = -K^{-1} j / 2``.
        The large constants then cancel once offline instead of at every
        evaluation, which keeps the objective smooth to near machine precision.
        """
        if self._tracking_form is None:
            self._tracking_form = False
            fom = self.fom
            if self.size("pr") and all(t.constant for t in fom.j.thetas + fom.k.thetas):
                K = self.matrix("k", "pr", "pr", fom.k.coefficients(fom.mu_check))
                jr = self.vector("j", "pr", fom.j.coefficients(fom.mu_check))
                try:
                    chol = np.linalg.cholesky(0.5 * (K + K.T))
                except np.linalg.LinAlgError:
                    return False
                c = -0.5 * np.linalg.solve(chol.T, np.linalg.solve(chol, jr))
                self._tracking_form = (K, c, fom.theta.offset - c @ K @ c)
        return self._tracking_form

    def objective_standard(self, mu) -> float:
        s = self.online(mu)
        tracking = self._tracking()
        if tracking:
            K, c, const = tracking
            e = s.u - c
            return float(self.fom.theta.varying(mu) + const + e @ K @ e)
        return float(self.fom.theta(mu) + self.vector("j", "pr", s.th["j"]) @ s.u
                     + s.u @ self.matrix("k", "pr", "pr", s.th["k"]) @ s.u)

    def ncd_correction(self, mu) -> float:
        # p_r lies in the primal space when it is shared, so Galerkin orthogonality makes this
        # exactly zero; returning the structural zero keeps the variants bit-identical there
        if self.shared:
            return 0.0
        s = self.online(mu)
        return float(s.p @ self.primal_residual_on(s, "du"))

    def objective_ncd(self, mu) -> float:
        return self.objective_standard(mu) + self.ncd_correction(mu)

    # -- gradients ------------------------------------------------------------------------

    def _dr_pr(self, s: _Online, name: str, v: np.ndarray) -> np.ndarray:
        """Vector over i of d_i r^pr(u_r)[v], v given in basis ``name``."""
        lv = self.fn_block("l", name) @ v
        av = np.einsum("l,xlr,r->x", v, self.op_block("a", name, "pr"), s.u)
        return lv @ s.dth["l"] - av @ s.dth["a"]

    def _dr_du(self, s: _Online, name: str, q: np.ndarray) -> np.ndarray:
        """Vector over i of d_i r^du(u_r, p_r)[q], q given in basis ``name``."""
        jq = self.fn_block("j", name) @ q
        kq = np.einsum("l,xlr,r->x", q, self.op_block("k", name, "pr"), s.u)
        aq = np.einsum("l,xlr,r->x", q, self.op_block("a", name, "du"), s.p)
        return jq @ s.dth["j"] + 2.0 * kq @ s.dth["k"] - aq @ s.dth["a"]

    def _partial_cost(self, s: _Online) -> np.ndarray:
        """Vector over i of d_i J(u_r, mu) at fixed u_r."""
        ju = self.fn_block("j", "pr") @ s.u
        ku = np.einsum("l,xlr,r->x", s.u, self.op_block("k", "pr", "pr"), s.u)
        return self.fom.theta.gradient(s.mu) + ju @ s.dth["j"] + ku @ s.dth["k"]

    def gradient_inexact(self, mu) -> np.ndarray:
        s = self.online(mu)
        return self._partial_cost(s) + self._dr_pr(s, "du", s.p)

    def auxiliary_solutions(self, mu):
        """z in the dual space and w in the primal space for the adjoint NCD gradient."""
        s = self.online(mu)
        if "zw" not in s.extra and self.shared:
            # both right-hand sides vanish by Galerkin orthogonality in a shared space
            s.extra["zw"] = (np.zeros(self.size("du")), np.zeros(self.size("pr")))
        if "zw" not in s.extra:
            th = s.th
            z = _solve(self.matrix("a", "du", "du", th["a"]), -self.primal_residual_on(s, "du"))
            rhs = self.dual_residual_on(s, "pr") - 2.0 * self.matrix("k", "pr", "du", th["k"]) @ z
            w = _solve(self.matrix("a", "pr", "pr", th["a"]), rhs)
            s.extra["zw"] = (z, w)
        return s.extra["zw"]

    def gradient_ncd_adjoint(self, mu) -> np.ndarray:
        s = self.online(mu)
        z, w = self.auxiliary_solutions(mu)
        return (self._partial_cost(s) + self._dr_pr(s, "du", s.p) + self._dr_pr(s, "pr", w)
                - self._dr_du(s, "du", z))

    def _sensitivity_spaces(self, i: int, mode: str):
        if mode == "galerkin":
            return "pr", "du"
        if mode in ("approximate", "approximate-spaces"):
            spr, sdu = f"pr_d{i}", f"du_d{i}"
            if self.has_basis(spr) and self.has_basis(sdu):
                return spr, sdu
            return "pr", "du"
        raise InvalidArgumentError(f"unknown sensitivity mode {mode!r}")

    def solve_reduced_sensitivities(self, mu, i: int, mode: str = "galerkin"):
        s = self.online(mu)
        key = ("sens", i, mode)
        if key not in s.extra:
            S, T = self._sensitivity_spaces(i, mode)
            th = s.th
            da, dl, dj, dk = (s.dth[f][:, i] for f in ("a", "l", "j", "k"))
            rhs = self.vector("l", S, dl) - self.matrix("a", S, "pr", da) @ s.u
            du = _solve(self.matrix("a", S, S, th["a"]), rhs)
            rhs = (self.vector("j", T, dj) + 2.0 * self.matrix("k", T, "pr", dk) @ s.u
                   - self.matrix("a", T, "du", da) @ s.p
                   + 2.0 * self.matrix("k", T, S, th["k"]) @ du)
            dp = _solve(self.matrix("a", T, T, th["a"]), rhs)
            s.extra[key] = (ReducedState(du, s.mu, f"primal-sensitivity-{i}", self.canon(S)),
                            ReducedState(dp, s.mu, f"dual-sensitivity-{i}", self.canon(T)))
        return s.extra[key]

    def _gradient_sensitivity(self, mu, mode: str) -> np.ndarray:
        s = self.online(mu)
        g = self.gradient_inexact(mu)
        for i in range(self.fom.dim):
            du, dp = self.solve_reduced_sensitivities(mu, i, mode)
            g[i] += dp.coefficients @ self.primal_residual_on(s, dp.basis)
            g[i] += du.coefficients @ self.dual_residual_on(s, du.basis)
        return g

    def gradient_ncd_sensitivity(self, mu) -> np.ndarray:
        return self._gradient_sensitivity(mu, "galerkin")

    def gradient_approx_sensitivity(self, mu) -> np.ndarray:
        return self._gradient_sensitivity(mu, "approximate")


# functional aliases mirroring the operation list

def enrich(model: ReducedModel, mu, strategy: str | None = None) -> ReducedModel:
    return model.enrich(mu, strategy)


def solve_reduced_primal(model: ReducedModel, mu) -> ReducedState:
    return model.solve_reduced_primal(mu)


def solve_reduced_dual(model: ReducedModel, mu, u_r=None) -> ReducedState:
    return model.solve_reduced_dual(mu, u_r)


def objective_standard(model: ReducedModel, mu) -> float:
    return model.objective_standard(mu)


def objective_ncd(model: ReducedModel, mu) -> float:
    return model.objective_ncd(mu)


def gradient_inexact(model: ReducedModel, mu) -> np.ndarray:
    return model.gradient_inexact(mu)


def gradient_ncd_adjoint(model: ReducedModel, mu) -> np.ndarray:
    return model.gradient_ncd_adjoint(mu)


def solve_reduced_sensitivities(model: ReducedModel, mu, i: int, mode: str = "galerkin"):
    return model.solve_reduced_sensitivities(mu, i, mode)


def gradient_ncd_sensitivity(model: ReducedModel, mu) -> np.ndarray:
    return model.gradient_ncd_sensitivity(mu)


def gradient_approx_sensitivity(model: ReducedModel, mu) -> np.ndarray:
    return model.gradient_approx_sensitivity(mu)
