"""Projected BFGS on box constraints and the trust-region reduced-basis loop.

The trust region is not a ball in parameter space: a point is trusted while
the relative error estimate ``Delta(mu) / J_r(mu)`` of the reduced objective
stays below the radius ``delta``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .affine import ParameterSpace
from .errors import AGCFailure, InvalidArgumentError, ModelInvalidError
from .estimators import estimators, prepare
from .fom import FullOrderModel
from .rom import ReducedModel

log = logging.getLogger(__name__)

VARIANTS = ("standard", "semi-ncd", "ncd", "qian")
CURVATURE_TOL = 1e-14
RHO_FLAT_TOL = 1e-14


@dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float = 0.1
    beta1: float = 0.5
    beta2: float = 0.95
    eta_rho: float = 0.75
    kappa: float = 0.5
    kappa_arm: float = 1e-4
    tau_sub: float = 1e-8
    tau_foc: float = 1e-6
    max_outer: int = 40
    max_inner: int = 400
    max_armijo: int = 50
    tau_mac: float = 2.22e-16
    fom_max_iter: int = 400

    def __post_init__(self):
        for name in ("beta1", "beta2", "kappa"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1)")
        if not 0.75 <= self.eta_rho < 1.0:
            raise InvalidArgumentError("eta_rho must lie in [3/4, 1)")
        if not 0.0 < self.kappa_arm < 0.5:
            raise InvalidArgumentError("kappa_arm must lie in (0, 1/2)")
        if self.tau_sub > self.tau_foc:
            raise InvalidArgumentError("tau_sub must not exceed tau_foc")
        if self.delta0 <= 0 or self.max_outer < 1 or self.max_inner < 1 or self.max_armijo < 1:
            raise InvalidArgumentError("radius and iteration limits must be positive")


def project_box(mu, space: ParameterSpace) -> np.ndarray:
    return space.project(mu)


def foc_norm(mu, g, space: ParameterSpace) -> float:
    mu = np.asarray(mu, dtype=float)
    return float(np.linalg.norm(mu - space.project(mu - np.asarray(g, dtype=float))))


# -- surrogates ---------------------------------------------------------------------------

class ReducedSurrogate:
    """Objective, gradient and error estimate of one reduced model for one variant."""

    def __init__(self, model: ReducedModel, variant: str):
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown variant {variant!r}")
        self.model = model
        self.variant = variant
        self.est = estimators(model)
        self.space = model.fom.space

    def value(self, mu) -> float:
        if self.variant in ("standard", "qian"):
            J = self.model.objective_standard(mu)
        else:
            J = self.model.objective_ncd(mu)
        if not J > 0.0:
            raise ModelInvalidError(f"reduced objective {J} is not positive at {mu}")
        return J

    def gradient(self, mu) -> np.ndarray:
        if self.variant == "ncd":
            return self.model.gradient_ncd_adjoint(mu)
        return self.model.gradient_inexact(mu)

    def estimate(self, mu) -> float:
        if self.variant in ("standard", "qian"):
            return self.est.delta_J_standard(mu)
        return self.est.delta_J_ncd(mu)

    def relative_estimate(self, mu) -> float:
        return self.estimate(mu) / self.value(mu)


class FomSurrogate:
    """Full-order objective and gradient; no trust region."""

    def __init__(self, fom: FullOrderModel):
        self.fom = fom
        self.space = fom.space
        self._memo: dict = {}

    def _eval(self, mu):
        key = np.asarray(mu, dtype=float).tobytes()
        if key not in self._memo:
            if len(self._memo) > 16:
                self._memo.clear()
            J, g, _, _ = self.fom.objective_and_gradient(mu)
            self._memo[key] = (J, g)
        return self._memo[key]

    def value(self, mu) -> float:
        return self._eval(mu)[0]

    def gradient(self, mu) -> np.ndarray:
        return self._eval(mu)[1]


# -- projected BFGS -----------------------------------------------------------------------

@dataclass
class SubproblemResult:
    mu: np.ndarray
    value: float
    iterations: int
    flag: str  # converged | boundary-cut | max-iterations | armijo-failure | stalled
    agc_mu: np.ndarray
    agc_value: float
    agc_backtracks: int
    foc: float
    values: list = field(default_factory=list)


def _active_set(mu, g, space: ParameterSpace, foc: float) -> np.ndarray:
    eps = np.minimum(1e-3 * (space.upper - space.lower), foc)
    return ((mu - space.lower <= eps) & (g > 0)) | ((space.upper - mu <= eps) & (g < 0))


def projected_bfgs(surrogate, mu_start, delta: float | None, cfg: TrustRegionConfig,
                   tol: float | None = None, max_iter: int | None = None,
                   callback=None) -> SubproblemResult:
    """Projected BFGS with Armijo backtracking; ``delta=None`` disables the trust region.

    The first step uses the steepest-descent direction, so it ends at the
    approximate generalized Cauchy (AGC) point. ``callback(it, mu, J, g)`` runs
    after every accepted step.
    """
    space = surrogate.space
    tol = cfg.tau_sub if tol is None else tol
    max_iter = cfg.max_inner if max_iter is None else max_iter
    use_tr = delta is not None
    mu = space.project(mu_start)
    J = surrogate.value(mu)
    g = surrogate.gradient(mu)
    H = np.eye(space.dim)
    active = None
    agc_mu, agc_value, agc_backtracks = mu.copy(), J, 0
    values = [J]
    flag = "max-iterations"
    it = 0
    foc = foc_norm(mu, g, space)
    while it < max_iter:
        if foc <= tol:
            flag = "converged"
            break
        new_active = _active_set(mu, g, space, foc)
        if active is None or np.any(new_active != active):
            H = np.eye(space.dim)
        active = new_active
        inactive = ~active
        d = -g.copy()
        if it > 0 and inactive.any():
            d[inactive] = -H[np.ix_(inactive, inactive)] @ g[inactive]
            if g @ d >= 0:
                d = -g.copy()
        accepted = False
        for j in range(cfg.max_armijo + 1):
            t = cfg.kappa ** j
            trial = space.project(mu + t * d)
            step = trial - mu
            J_trial = surrogate.value(trial)
            # once t * d underflows against mu the trial equals mu and holds trivially
            if J_trial - J <= -(cfg.kappa_arm / t) * (step @ step):
                if not use_tr or surrogate.relative_estimate(trial) <= delta:
                    accepted = True
                    break
        if not accepted:
            if it == 0:
                raise AGCFailure(f"no admissible step along the steepest-descent arc at {mu}")
            flag = "armijo-failure"
            break
        if it == 0:
            agc_mu, agc_value, agc_backtracks = trial.copy(), J_trial, j
        if not step.any():
            # a null step repeats itself deterministically
            it += 1
            flag = "stalled"
            break
        g_trial = surrogate.gradient(trial)
        s, y = step.copy(), g_trial - g
        mu, J, g = trial, J_trial, g_trial
        values.append(J)
        it += 1
        foc = foc_norm(mu, g, space)
        if callback is not None:
            callback(it, mu, J, g)
        next_active = _active_set(mu, g, space, foc)
        if np.any(next_active != active):
            H = np.eye(space.dim)
            active = next_active
        else:
            s[active], y[active] = 0.0, 0.0
            sy = s @ y
            if sy > CURVATURE_TOL:
                rho = 1.0 / sy
                V = np.eye(space.dim) - rho * np.outer(s, y)
                H = V @ H @ V.T + rho * np.outer(s, s)
        if use_tr and foc > tol:
            q = surrogate.relative_estimate(mu)
            if cfg.beta2 * delta <= q <= delta:
                flag = "boundary-cut"
                break
    if foc <= tol:
        flag = "converged"
    return SubproblemResult(mu, J, it, flag, agc_mu, agc_value, agc_backtracks, foc, values)


def compute_agc(surrogate, mu, delta: float, cfg: TrustRegionConfig) -> tuple:
    """AGC point and the number of backtracking steps used."""
    res = projected_bfgs(surrogate, mu, delta, cfg, max_iter=1)
    return res.agc_mu, res.agc_backtracks


# -- outer loops --------------------------------------------------------------------------

@dataclass
class IterationRecord:
    k: int
    mu: np.ndarray
    J: float  # full-order objective at mu
    foc: float  # full-order FOC norm at mu (nan when unknown)
    delta: float  # radius used for the sub-problem that produced mu
    rho: float
    accepted: bool
    n_pr: int
    n_du: int
    inner_iterations: int
    fom_solves: int
    wall_time: float
    branch: str = ""
    J_agc: float = np.nan  # J_r^(k)(mu_AGC)
    J_next_model: float = np.nan  # J_r^(k+1)(mu^(k+1)) after enrichment
    delta_next: float = np.nan
    stop_measure: float = np.nan


@dataclass
class OptimizationResult:
    mu: np.ndarray
    records: list
    status: str  # converged | max-iterations | stagnation
    iterations: int
    fom_solves: int
    foc: float
    wall_time: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _fom_solves(fom: FullOrderModel) -> int:
    return fom.counters["primal"] + fom.counters["dual"]


def tr_rb_optimize(fom: FullOrderModel, mu0, cfg: TrustRegionConfig | None = None,
                   variant: str = "ncd", enrichment: str = "lagrangian") -> OptimizationResult:
    cfg = TrustRegionConfig() if cfg is None else cfg
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    start = time.perf_counter()
    solves0 = _fom_solves(fom)
    space = fom.space
    mu = space.check(np.asarray(mu0, dtype=float)).copy()

    u = fom.solve_primal(mu)
    p = fom.solve_dual(mu, u)
    model = prepare(ReducedModel(fom, enrichment).enrich_with(mu, u, p))
    J_h = fom.cost(mu, u.values)
    g_h = fom.gradient_from_states(mu, u, p)
    foc = foc_norm(mu, g_h, space)
    delta = cfg.delta0
    records = [IterationRecord(0, mu.copy(), J_h, foc, delta, np.nan, True, *model.sizes, 0,
                               _fom_solves(fom) - solves0, time.perf_counter() - start, "init",
                               delta_next=delta)]
    status = "max-iterations"
    k = 0
    if variant != "qian" and foc <= cfg.tau_foc:
        status = "converged"
    while status != "converged" and k < cfg.max_outer:
        if delta < cfg.tau_mac:
            status = "stagnation"
            break
        sur = ReducedSurrogate(model, variant)
        try:
            sub = projected_bfgs(sur, mu, delta, cfg)
        except AGCFailure as exc:
            # no admissible first step: reject and shrink until the tau_mac safeguard fires
            log.debug("AGC failure at radius %g: %s", delta, exc)
            delta_next = cfg.beta1 * delta
            records.append(IterationRecord(k + 1, mu.copy(), np.nan, np.nan, delta, np.nan, False,
                                           *model.sizes, 0, _fom_solves(fom) - solves0,
                                           time.perf_counter() - start, "agc-failure",
                                           delta_next=delta_next))
            delta = delta_next
            continue
        mu_new, J_new = sub.mu, sub.value
        est_new = sur.estimate(mu_new)
        J_r_old = sur.value(mu)

        if J_new + est_new < sub.agc_value:
            branch = "sufficient"
        elif J_new - est_new > sub.agc_value:
            branch = "reject-necessary"
        else:
            branch = "enrich-check"

        if branch == "reject-necessary":
            delta_next = cfg.beta1 * delta
            records.append(IterationRecord(k + 1, mu_new.copy(), np.nan, np.nan, delta, np.nan, False,
                                           *model.sizes, sub.iterations, _fom_solves(fom) - solves0,
                                           time.perf_counter() - start, branch, sub.agc_value,
                                           delta_next=delta_next))
            delta = delta_next
            continue

        if not np.array_equal(mu_new, mu):
            u = fom.solve_primal(mu_new)
            p = fom.solve_dual(mu_new, u)
        new_model = prepare(model.enrich_with(mu_new, u, p))
        J_h_new = fom.cost(mu_new, u.values)
        g_h_new = fom.gradient_from_states(mu_new, u, p)
        J_next_model = ReducedSurrogate(new_model, variant).value(mu_new)
        accepted = branch == "sufficient" or J_next_model <= sub.agc_value
        if not accepted:
            delta_next = cfg.beta1 * delta
            records.append(IterationRecord(k + 1, mu_new.copy(), J_h_new, foc_norm(mu_new, g_h_new, space),
                                           delta, np.nan, False, *new_model.sizes, sub.iterations,
                                           _fom_solves(fom) - solves0, time.perf_counter() - start,
                                           "reject-after-enrichment", sub.agc_value, J_next_model,
                                           delta_next=delta_next))
            model = new_model
            delta = delta_next
            continue

        denom = J_r_old - J_new
        rho = 1.0 if abs(denom) < RHO_FLAT_TOL else (J_h - J_h_new) / denom
        delta_next = delta / cfg.beta1 if (variant != "qian" and rho >= cfg.eta_rho) else delta

        stop_measure = np.nan
        foc = foc_norm(mu_new, g_h_new, space)
        if variant == "qian":
            # reduced gradient norm plus its bound, from the model that produced mu_new
            stop_measure = float(np.linalg.norm(sur.gradient(mu_new))) + sur.est.delta_grad_standard(mu_new)
            done = stop_measure <= cfg.tau_foc
        else:
            done = foc <= cfg.tau_foc
        k += 1
        records.append(IterationRecord(k, mu_new.copy(), J_h_new, foc, delta, rho, True, *new_model.sizes,
                                       sub.iterations, _fom_solves(fom) - solves0,
                                       time.perf_counter() - start, branch, sub.agc_value, J_next_model,
                                       delta_next=delta_next, stop_measure=stop_measure))
        mu, J_h, model, delta = mu_new, J_h_new, new_model, delta_next
        if done:
            status = "converged"
    return OptimizationResult(mu, records, status, k, _fom_solves(fom) - solves0,
                              records[-1].foc if records[-1].accepted else foc,
                              time.perf_counter() - start)


def fom_projected_bfgs(fom: FullOrderModel, mu0, cfg: TrustRegionConfig | None = None,
                       tau: float | None = None) -> OptimizationResult:
    """Projected BFGS on the full-order objective, stopping on the FOC norm."""
    cfg = TrustRegionConfig() if cfg is None else cfg
    tau = cfg.tau_foc if tau is None else tau
    start = time.perf_counter()
    solves0 = _fom_solves(fom)
    sur = FomSurrogate(fom)
    mu0 = fom.space.check(np.asarray(mu0, dtype=float))
    space = fom.space

    def record(it, mu, J, g, branch="accepted"):
        records.append(IterationRecord(it, mu.copy(), J, foc_norm(mu, g, space), np.nan, np.nan, True,
                                       0, 0, 0, _fom_solves(fom) - solves0,
                                       time.perf_counter() - start, branch))

    records: list = []
    record(0, mu0, sur.value(mu0), sur.gradient(mu0), "init")
    res = projected_bfgs(sur, mu0, None, cfg, tol=tau, max_iter=cfg.fom_max_iter, callback=record)
    foc = foc_norm(res.mu, sur.gradient(res.mu), space)
    if foc <= tau:
        status = "converged"
    elif res.flag in ("stalled", "armijo-failure"):
        status = "stagnation"
    else:
        status = "max-iterations"
    return OptimizationResult(res.mu, records, status, res.iterations, _fom_solves(fom) - solves0,
                              foc, time.perf_counter() - start)


def newton_polish(fom: FullOrderModel, mu, tau: float, max_iter: int = 20) -> np.ndarray:
    """Projected Newton steps on the inactive set, accepted while the FOC norm decreases."""
    space = fom.space
    mu = space.project(mu)
    g = fom.gradient(mu)
    foc = foc_norm(mu, g, space)
    for _ in range(max_iter):
        if foc <= tau:
            break
        active = _active_set(mu, g, space, foc)
        d = -g.copy()
        inactive = ~active
        if inactive.any():
            H = fom.full_hessian(mu)[np.ix_(inactive, inactive)]
            try:
                d[inactive] = -np.linalg.solve(0.5 * (H + H.T), g[inactive])
            except np.linalg.LinAlgError:
                break
        trial = space.project(mu + d)
        g_trial = fom.gradient(trial)
        foc_trial = foc_norm(trial, g_trial, space)
        if not foc_trial < foc:
            break
        mu, g, foc = trial, g_trial, foc_trial
    return mu


def reference_parameter(fom: FullOrderModel, mu0, cfg: TrustRegionConfig | None = None,
                        tau: float = 1e-12) -> OptimizationResult:
    """Highly accurate optimum: FOM projected BFGS, then Newton polishing if BFGS stalls."""
    res = fom_projected_bfgs(fom, mu0, cfg, tau=tau)
    if res.foc > tau:
        mu = newton_polish(fom, res.mu, tau)
        foc = foc_norm(mu, fom.gradient(mu), fom.space)
        if foc < res.foc:
            res.mu, res.foc = mu, foc
            res.status = "converged" if foc <= tau else res.status
    return res
