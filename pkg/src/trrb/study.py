"""Goal-oriented greedy basis construction with a full estimator/error table per step.

The greedy first drives the worst relative objective estimate below the
objective tolerance, then the worst relative gradient estimate below the
gradient tolerance. Every extension adds the primal and dual snapshot and,
for the sensitivity-flavored quantities, the primal and dual sensitivity
snapshots of every parameter component.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimators import estimators, prepare
from .fom import FullOrderModel
from .rom import ReducedModel

log = logging.getLogger(__name__)

ESTIMATOR_COLUMNS = (
    "basis_size", "err_J_standard", "err_J_ncd", "est_J_standard", "est_J_ncd",
    "err_grad_inexact", "err_grad_ncd", "err_grad_approx",
    "est_grad_standard", "est_grad_adjoint", "est_grad_sens_galerkin", "est_grad_sens_approx",
    "eff_J_standard", "eff_J_ncd", "eff_grad_standard", "eff_grad_adjoint",
    "eff_grad_sens_galerkin", "eff_grad_sens_approx",
    "err_pr", "est_pr", "eff_pr", "phase",
)
# (estimate column, error column) per efficiency column
EFFICIENCY_PAIRS = {
    "eff_J_standard": ("est_J_standard", "err_J_standard"),
    "eff_J_ncd": ("est_J_ncd", "err_J_ncd"),
    "eff_grad_standard": ("est_grad_standard", "err_grad_inexact"),
    "eff_grad_adjoint": ("est_grad_adjoint", "err_grad_ncd"),
    "eff_grad_sens_galerkin": ("est_grad_sens_galerkin", "err_grad_ncd"),
    "eff_grad_sens_approx": ("est_grad_sens_approx", "err_grad_approx"),
    "eff_pr": ("est_pr", "err_pr"),
}
# errors below this are roundoff; efficiencies there carry no information
EFFICIENCY_FLOOR = 1e-12


@dataclass
class StudyConfig:
    tau_J: float = 5e-4
    tau_grad: float = 5e-4
    training_size: int = 100
    validation_size: int = 20
    seed: int = 0
    max_extensions: int = 20


@dataclass
class StudyResult:
    rows: list  # dicts keyed by ESTIMATOR_COLUMNS
    extensions: int
    complete: bool  # False when max_extensions stopped the greedy
    model: ReducedModel = field(repr=False, default=None)


@dataclass
class _Truth:
    J: float
    grad: np.ndarray
    u: np.ndarray


def _truth(fom: FullOrderModel, mu) -> _Truth:
    J, g, u, _ = fom.objective_and_gradient(mu)
    return _Truth(J, g, u.values)


def validation_row(model: ReducedModel, truths: dict, phase: str) -> dict:
    """Worst-case errors, estimates and efficiencies over the validation set."""
    est = estimators(model)
    fom = model.fom
    cols = {c: [] for c in ESTIMATOR_COLUMNS if not c.startswith("eff_") and c not in ("basis_size", "phase")}
    effs = {c: [] for c in EFFICIENCY_PAIRS}
    for mu, t in truths.values():
        u_r = model.reconstruct(model.solve_reduced_primal(mu))
        vals = {
            "err_J_standard": abs(t.J - model.objective_standard(mu)),
            "err_J_ncd": abs(t.J - model.objective_ncd(mu)),
            "est_J_standard": est.delta_J_standard(mu),
            "est_J_ncd": est.delta_J_ncd(mu),
            "err_grad_inexact": float(np.linalg.norm(t.grad - model.gradient_inexact(mu))),
            "err_grad_ncd": float(np.linalg.norm(t.grad - model.gradient_ncd_adjoint(mu))),
            "err_grad_approx": float(np.linalg.norm(t.grad - model.gradient_approx_sensitivity(mu))),
            "est_grad_standard": est.delta_grad_standard(mu),
            "est_grad_adjoint": est.delta_grad_ncd_adjoint(mu),
            "est_grad_sens_galerkin": est.delta_grad_sens(mu, "galerkin"),
            "est_grad_sens_approx": est.delta_grad_sens(mu, "approximate"),
            "err_pr": fom.energy_norm(t.u - u_r),
            "est_pr": est.delta_pr(mu),
        }
        for c, v in vals.items():
            cols[c].append(v)
        for c, (e, r) in EFFICIENCY_PAIRS.items():
            if vals[r] > EFFICIENCY_FLOOR:
                effs[c].append(vals[e] / vals[r])
    row = {"basis_size": model.size("pr"), "phase": phase}
    row.update({c: float(np.max(v)) for c, v in cols.items()})
    row.update({c: float(np.max(v)) if v else float("nan") for c, v in effs.items()})
    return row


def _extend(model: ReducedModel, mu) -> ReducedModel:
    fom = model.fom
    u = fom.solve_primal(mu)
    p = fom.solve_dual(mu, u)
    snapshots = [("pr", u.values, mu, "primal"), ("du", p.values, mu, "dual")]
    for i in range(fom.dim):
        du = fom.solve_primal_sensitivity(mu, u, i)
        dp = fom.solve_dual_sensitivity(mu, u, p, du, i)
        snapshots += [(f"pr_d{i}", du.values, mu, du.role), (f"du_d{i}", dp.values, mu, dp.role)]
    return model.extend(snapshots)


def _prepare(model: ReducedModel) -> ReducedModel:
    names = ["pr", "du"] + [f"{b}_d{i}" for i in range(model.fom.dim) for b in ("pr", "du")
                            if model.has_basis(f"{b}_d{i}")]
    model.prepare(names)
    return prepare(model)


def greedy_estimator_study(fom: FullOrderModel, cfg: StudyConfig | None = None) -> StudyResult:
    cfg = StudyConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    training = fom.space.sample(rng, cfg.training_size)
    validation = fom.space.sample(rng, cfg.validation_size)
    truths = {i: (mu, _truth(fom, mu)) for i, mu in enumerate(validation)}
    model = _prepare(ReducedModel(fom, "lagrangian"))
    rows, extensions = [], 0
    phases = (
        ("objective", cfg.tau_J,
         lambda m, mu: estimators(m).delta_J_standard(mu) / abs(m.objective_standard(mu))),
        ("gradient", cfg.tau_grad,
         lambda m, mu: estimators(m).delta_grad_standard(mu)
         / max(float(np.linalg.norm(m.gradient_inexact(mu))), np.finfo(float).tiny)),
    )
    for phase, tol, measure in phases:
        while True:
            scores = np.array([measure(model, mu) for mu in training])
            worst = int(np.argmax(scores))
            log.info("%s phase: basis %d, worst relative estimate %.3e", phase, model.size("pr"), scores[worst])
            if scores[worst] < tol:
                break
            if extensions >= cfg.max_extensions:
                log.warning("greedy stopped after %d extensions above tolerance", extensions)
                return StudyResult(rows, extensions, False, model)
            model = _prepare(_extend(model, training[worst]))
            extensions += 1
            rows.append(validation_row(model, truths, phase))
    return StudyResult(rows, extensions, True, model)


def log_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x) over strictly positive pairs."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])
