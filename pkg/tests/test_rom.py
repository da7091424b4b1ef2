import numpy as np
import pytest

from trrb import oracle
from trrb.errors import InvalidArgumentError
from trrb.rom import ReducedBasis, ReducedModel, extend_basis
from trrb.study import _extend, _prepare


def _model(fom, mus, strategy="lagrangian"):
    model = ReducedModel(fom, strategy)
    for mu in mus:
        model = model.enrich(mu)
    return model.prepare()


def _split_model(fom, n, seed=0):
    return _model(fom, fom.space.sample(np.random.default_rng(seed), n))


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_extend_basis_examples(toy, rng):
    X = toy.product
    v = rng.normal(size=toy.num_dofs)
    b, added = extend_basis(ReducedBasis.empty(toy.num_dofs), v, X)
    assert added
    np.testing.assert_allclose(b.vectors[:, 0], v / np.sqrt(v @ X @ v), rtol=1e-13)
    again, added = extend_basis(b, 3.0 * v, X)
    assert not added and again is b
    b2, _ = extend_basis(b, rng.normal(size=toy.num_dofs), X)
    np.testing.assert_allclose(b2.vectors.T @ X @ b2.vectors, np.eye(2), atol=1e-12)


def test_extend_basis_rejects_nonfinite(toy):
    with pytest.raises(InvalidArgumentError):
        extend_basis(ReducedBasis.empty(toy.num_dofs), np.full(toy.num_dofs, np.nan), toy.product)


def test_unknown_strategy_rejected(toy):
    with pytest.raises(InvalidArgumentError):
        ReducedModel(toy, "both")


def test_single_strategy_shares_space(toy):
    m = _model(toy, [np.array([1.0, 1.0, 1.0])], "single")
    assert m.basis("du") is m.basis("pr")
    assert m.size("pr") == 2  # primal and dual snapshot in one space


def test_snapshot_reproduction(building_fom):
    mus = building_fom.space.sample(np.random.default_rng(1), 3)
    model = _model(building_fom, mus)
    for mu in mus:
        u = building_fom.solve_primal(mu).values
        u_r = model.reconstruct(model.solve_reduced_primal(mu))
        assert building_fom.energy_norm(u - u_r) <= 1e-9 * building_fom.energy_norm(u)
        J = building_fom.objective(mu)
        assert abs(model.objective_ncd(mu) - J) <= 1e-9 * J
        assert abs(model.objective_standard(mu) - J) <= 1e-9 * J


def test_one_dimensional_basis_closed_form(toy):
    mu = np.array([1.2, 0.7, 2.0])
    v = toy.solve_primal(np.array([0.6, 1.9, 0.3])).values
    basis, _ = extend_basis(ReducedBasis.empty(toy.num_dofs), v, toy.product)
    model = ReducedModel(toy, "lagrangian", {"pr": basis, "du": basis}).prepare()
    phi = basis.vectors[:, 0]
    coef = (toy.l.evaluate(mu) @ phi) / (phi @ toy.a.evaluate(mu) @ phi)
    assert model.solve_reduced_primal(mu).coefficients[0] == pytest.approx(coef, rel=1e-12)


def test_reduced_solve_equals_dense_projection(building_fom):
    model = _split_model(building_fom, 4)
    mu = building_fom.space.sample(np.random.default_rng(9))
    V = model.basis("pr").vectors
    A = building_fom.a.evaluate(mu).toarray()
    coef = oracle.dense_solve(V.T @ A @ V, V.T @ building_fom.l.evaluate(mu))
    np.testing.assert_allclose(model.solve_reduced_primal(mu).coefficients, coef, rtol=1e-10)
    W = model.basis("du").vectors
    rhs = W.T @ (building_fom.j.evaluate(mu) + 2 * building_fom.k.evaluate(mu) @ (V @ coef))
    np.testing.assert_allclose(model.solve_reduced_dual(mu).coefficients, oracle.dense_solve(W.T @ A @ W, rhs),
                               rtol=1e-9)


def test_online_phase_has_no_high_dimensional_work(building_fom):
    model = _split_model(building_fom, 3)
    before = model.counters["high_dim"]
    for mu in building_fom.space.sample(np.random.default_rng(2), 5):
        model.objective_ncd(mu)
        model.gradient_ncd_adjoint(mu)
        model.gradient_inexact(mu)
    assert model.counters["high_dim"] == before


def test_shared_space_ncd_equals_standard(building_fom):
    model = _model(building_fom, building_fom.space.sample(np.random.default_rng(3), 2), "single")
    for mu in building_fom.space.sample(np.random.default_rng(4), 5):
        assert model.ncd_correction(mu) == 0.0
        # the structural zero agrees with the computed residual up to roundoff
        s = model.online(mu)
        assert abs(s.p @ model.primal_residual_on(s, "du")) <= 1e-12 * abs(model.objective_standard(mu))
        g = model.gradient_inexact(mu)
        np.testing.assert_array_equal(model.gradient_ncd_adjoint(mu), g)


def test_fin_ncd_correction_vanishes(fin_fom):
    model = _split_model(fin_fom, 4)
    for mu in fin_fom.space.sample(np.random.default_rng(5), 10):
        assert abs(model.ncd_correction(mu)) <= 1e-10


def test_ncd_objective_closer_than_standard(building_fom):
    model = _split_model(building_fom, 5)
    mus = building_fom.space.sample(np.random.default_rng(6), 50)
    wins = 0
    for mu in mus:
        J = building_fom.objective(mu)
        wins += abs(J - model.objective_ncd(mu)) <= abs(J - model.objective_standard(mu))
    assert wins >= 45


def test_ncd_gradient_exact_for_ncd_objective(building_fom):
    model = _split_model(building_fom, 5)
    worst_ncd, worst_inexact = 0.0, 0.0
    for mu in building_fom.space.sample(np.random.default_rng(7), 5):
        mu = np.clip(mu, building_fom.space.lower + 1e-3, building_fom.space.upper - 1e-3)
        fd = oracle.fd_gradient(model.objective_ncd, mu, 1e-6)
        worst_ncd = max(worst_ncd, _rel(model.gradient_ncd_adjoint(mu), fd))
        fd_std = oracle.fd_gradient(model.objective_standard, mu, 1e-6)
        worst_inexact = max(worst_inexact, _rel(model.gradient_inexact(mu), fd_std))
    assert worst_ncd <= 1e-6
    # the inexact gradient is not the derivative of the standard objective on split spaces
    assert worst_inexact >= 1e-4


def test_sensitivity_gradient_equals_adjoint_gradient(building_fom):
    model = _split_model(building_fom, 4)
    for mu in building_fom.space.sample(np.random.default_rng(8), 5):
        assert _rel(model.gradient_ncd_sensitivity(mu), model.gradient_ncd_adjoint(mu)) <= 1e-10


def test_sensitivity_modes_coincide_without_extra_spaces(building_fom):
    model = _split_model(building_fom, 3)
    mu = building_fom.space.sample(np.random.default_rng(10))
    np.testing.assert_allclose(model.gradient_approx_sensitivity(mu), model.gradient_ncd_sensitivity(mu),
                               rtol=1e-14)


def test_reduced_sensitivities_galerkin_projection(toy):
    model = _model(toy, toy.space.sample(np.random.default_rng(3), 2))
    mu = np.array([1.4, 0.9, 1.1])
    V = model.basis("pr").vectors
    A = toy.a.evaluate(mu).toarray()
    u = model.reconstruct(model.solve_reduced_primal(mu))
    for i in range(toy.dim):
        rhs = V.T @ toy.primal_sensitivity_rhs(mu, u, np.eye(toy.dim)[i])
        du, _ = model.solve_reduced_sensitivities(mu, i, "galerkin")
        np.testing.assert_allclose(du.coefficients, oracle.dense_solve(V.T @ A @ V, rhs), rtol=1e-9, atol=1e-12)


def test_approximate_spaces_beat_galerkin(building_fom):
    rng = np.random.default_rng(12)
    model = ReducedModel(building_fom, "lagrangian")
    for mu in building_fom.space.sample(rng, 4):
        model = _extend(model, mu)
    model = _prepare(model)
    wins, mus = 0, building_fom.space.sample(rng, 20)
    for mu in mus:
        g = building_fom.gradient(mu)
        wins += np.linalg.norm(g - model.gradient_approx_sensitivity(mu)) \
            <= np.linalg.norm(g - model.gradient_ncd_sensitivity(mu))
    assert wins >= 0.8 * len(mus)
