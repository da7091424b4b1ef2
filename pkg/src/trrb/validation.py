"""Property checks behind ``trrb validate``.

Each check returns named pass/fail entries so a caller can report every
violation, not only the first. ``alpha_scale`` inflates the coercivity bound
to confirm that a broken constant is caught.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import Estimators
from .fom import FullOrderModel
from .optimizer import TrustRegionConfig, tr_rb_optimize
from .oracle import fd_gradient
from .rom import ReducedModel
from .study import _extend, _prepare

BOUND_SLACK = 1e-10
# (estimate, error) pairs that must satisfy estimate >= error
BOUND_PAIRS = (
    ("est_pr", "err_pr"),
    ("est_du", "err_du"),
    ("est_J_standard", "err_J_standard"),
    ("est_J_ncd", "err_J_ncd"),
    ("est_grad_standard", "err_grad_inexact"),
    ("est_grad_adjoint", "err_grad_ncd"),
    ("est_grad_sens_galerkin", "err_grad_sens"),
    ("est_grad_sens_approx", "err_grad_approx"),
)


@dataclass
class Check:
    name: str
    ok: bool
    detail: str


@dataclass
class ValidationConfig:
    snapshots: int = 3
    samples: int = 10
    seed: int = 0
    fd_step: float = 1e-6
    grad_rtol: float = 1e-5
    chain_outer: int = 6
    alpha_scale: float = 1.0


def build_validation_model(fom: FullOrderModel, mus, alpha_scale: float = 1.0) -> ReducedModel:
    """Split primal/dual model with sensitivity spaces, snapshots at ``mus``."""
    model = ReducedModel(fom, "lagrangian")
    for mu in mus:
        model = _extend(model, mu)
    model = _prepare(model)
    model._estimators = Estimators(model, alpha_scale=alpha_scale)
    return model


def true_and_estimated(model: ReducedModel, mu) -> dict:
    """Errors against the FOM next to every estimate at one parameter."""
    fom, est = model.fom, model._estimators
    J, g, u, p = fom.objective_and_gradient(mu)
    u_r = model.solve_reduced_primal(mu)
    p_r = model.solve_reduced_dual(mu, u_r)
    return {
        "err_pr": fom.energy_norm(u.values - model.reconstruct(u_r)),
        "est_pr": est.delta_pr(mu),
        "err_du": fom.energy_norm(p.values - model.reconstruct(p_r)),
        "est_du": est.delta_du(mu),
        "err_J_standard": abs(J - model.objective_standard(mu)),
        "est_J_standard": est.delta_J_standard(mu),
        "err_J_ncd": abs(J - model.objective_ncd(mu)),
        "est_J_ncd": est.delta_J_ncd(mu),
        "err_grad_inexact": float(np.linalg.norm(g - model.gradient_inexact(mu))),
        "est_grad_standard": est.delta_grad_standard(mu),
        "err_grad_ncd": float(np.linalg.norm(g - model.gradient_ncd_adjoint(mu))),
        "est_grad_adjoint": est.delta_grad_ncd_adjoint(mu),
        "err_grad_sens": float(np.linalg.norm(g - model.gradient_ncd_sensitivity(mu))),
        "est_grad_sens_galerkin": est.delta_grad_sens(mu, "galerkin"),
        "err_grad_approx": float(np.linalg.norm(g - model.gradient_approx_sensitivity(mu))),
        "est_grad_sens_approx": est.delta_grad_sens(mu, "approximate"),
    }


def check_estimator_bounds(model: ReducedModel, mus) -> list:
    worst = {pair: -np.inf for pair in BOUND_PAIRS}
    for mu in mus:
        v = true_and_estimated(model, mu)
        for e, r in BOUND_PAIRS:
            worst[(e, r)] = max(worst[(e, r)], v[r] - v[e])
    return [Check(f"bound {e} >= {r}", gap <= BOUND_SLACK, f"max(error - estimate) = {gap:.3e}")
            for (e, r), gap in worst.items()]


def _rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def check_gradients(model: ReducedModel, mus, cfg: ValidationConfig) -> list:
    fom = model.fom
    fom_worst = max(_rel(fom.gradient(mu), fd_gradient(fom.objective, mu, cfg.fd_step)) for mu in mus)
    rom_worst = max(_rel(model.gradient_ncd_adjoint(mu), fd_gradient(model.objective_ncd, mu, cfg.fd_step))
                    for mu in mus)
    return [Check("FOM gradient vs central differences", fom_worst <= cfg.grad_rtol, f"rel {fom_worst:.3e}"),
            Check("NCD adjoint gradient vs central differences", rom_worst <= cfg.grad_rtol,
                  f"rel {rom_worst:.3e}")]


def check_reproduction(model: ReducedModel, snapshot_mus) -> list:
    fom = model.fom
    worst_J, worst_u = 0.0, 0.0
    for mu in snapshot_mus:
        J = fom.objective(mu)
        u = fom.solve_primal(mu).values
        worst_J = max(worst_J, abs(J - model.objective_ncd(mu)) / abs(J))
        u_r = model.reconstruct(model.solve_reduced_primal(mu))
        worst_u = max(worst_u, fom.energy_norm(u - u_r) / fom.energy_norm(u))
    return [Check("snapshot objective reproduced", worst_J <= 1e-8, f"rel {worst_J:.3e}"),
            Check("snapshot state reproduced", worst_u <= 1e-8, f"rel {worst_u:.3e}")]


def decrease_chain_violations(records, cfg: TrustRegionConfig, slack: float = 1e-12) -> list:
    """Messages for accepted steps breaking sufficient decrease or the radius bookkeeping."""
    bad = []
    for r in records:
        if r.branch == "init":
            continue
        if r.accepted and not r.J_next_model <= r.J_agc + slack:
            bad.append(f"k={r.k}: J_next_model {r.J_next_model!r} > J_agc {r.J_agc!r}")
        ratio = r.delta_next / r.delta
        if r.accepted:
            allowed = [1.0, 1.0 / cfg.beta1] if r.rho >= cfg.eta_rho else [1.0]
        else:
            allowed = [cfg.beta1]
        if not any(np.isclose(ratio, a, rtol=1e-12) for a in allowed):
            bad.append(f"k={r.k} ({r.branch}): radius ratio {ratio!r} not in {allowed}")
    return bad


def check_decrease_chain(fom: FullOrderModel, mu0, cfg: ValidationConfig) -> list:
    tr = TrustRegionConfig(max_outer=cfg.chain_outer, tau_foc=1e-5)
    res = tr_rb_optimize(fom, mu0, tr, variant="ncd")
    bad = decrease_chain_violations(res.records, tr)
    return [Check("decrease chain and radius bookkeeping", not bad,
                  "; ".join(bad) if bad else f"{len(res.records)} records")]


def run_property_suite(fom: FullOrderModel, cfg: ValidationConfig | None = None) -> list:
    cfg = ValidationConfig() if cfg is None else cfg
    rng = np.random.default_rng(cfg.seed)
    snaps = fom.space.sample(rng, cfg.snapshots)
    mus = fom.space.sample(rng, cfg.samples)
    model = build_validation_model(fom, snaps, cfg.alpha_scale)
    checks = check_estimator_bounds(model, mus)
    checks += check_gradients(model, mus[: min(3, len(mus))], cfg)
    checks += check_reproduction(model, snaps)
    checks += check_decrease_chain(fom, mus[0], cfg)
    return checks
