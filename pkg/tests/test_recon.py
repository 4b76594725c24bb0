import json
import warnings

import numpy as np
import pytest

from conftest import random_model, rel, tv_prox_reference
from pavisco.errors import ConfigurationError, DivergenceError
from pavisco.recon import (MatrixOperator, PatOperator, ReconConfig, cached_lipschitz, div, gradient_f, grad,
                           metrics, objective, power_iteration, relative_error, run_ista, total_variation,
                           tv_prox)


class Identity:
    def __init__(self, shape):
        self.shape = shape

    def forward(self, p):
        return np.array(p, dtype=float)

    def adjoint(self, q):
        return np.array(q, dtype=float)


# total variation -----------------------------------------------------------------
def test_grad_div_are_negative_transposes(rng):
    for shape in [(5, 7), (4, 3, 6)]:
        u = rng.standard_normal(shape)
        p = rng.standard_normal((len(shape),) + shape)
        assert np.vdot(grad(u), p) == pytest.approx(-np.vdot(u, div(p)), rel=1e-12)


def test_total_variation_of_a_step():
    u = np.zeros((4, 6))
    u[:, 3:] = 2.0
    assert total_variation(u) == pytest.approx(8.0)
    assert total_variation(np.full((5, 5), 3.0)) == 0.0


def test_prox_with_zero_weight_is_positive_part(rng):
    y = rng.standard_normal((6, 6))
    np.testing.assert_array_equal(tv_prox(y, 0.0), np.maximum(y, 0))
    np.testing.assert_array_equal(tv_prox(y, 0.0, nonneg=False), y)


def test_prox_leaves_positive_constant_unchanged():
    y = np.full((5, 4), 0.7)
    np.testing.assert_allclose(tv_prox(y, 0.3), y, atol=1e-14)


def test_prox_is_feasible_and_lowers_objective(rng):
    y = rng.standard_normal((8, 8))
    w = 0.2
    x = tv_prox(y, w, max_iter=2000, tol=1e-12)
    assert x.min() >= 0
    cost = lambda z: w * total_variation(z) + 0.5 * np.sum((z - y) ** 2)
    for _ in range(20):
        z = np.maximum(x + 1e-3 * rng.standard_normal(x.shape), 0)
        assert cost(z) >= cost(x) - 1e-12


def test_prox_matches_primal_dual_reference(rng):
    for _ in range(10):
        y = rng.standard_normal((4, 4))
        w = rng.uniform(0.01, 0.3)
        x = tv_prox(y, w, max_iter=5000, tol=1e-12)
        assert np.abs(x - tv_prox_reference(y, w)).max() <= 1e-6


def test_reference_agrees_with_generic_convex_solver(rng):
    cp = pytest.importorskip("cvxpy")
    y = rng.standard_normal((4, 4))
    w = 0.15
    x = cp.Variable((4, 4))
    dx = x[1:, :] - x[:-1, :]
    dy = x[:, 1:] - x[:, :-1]
    # isotropic TV with a replicate boundary: last row / column carry one difference only
    terms = [cp.norm(cp.hstack([dx[i, j], dy[i, j]])) for i in range(3) for j in range(3)]
    terms += [cp.abs(dx[i, 3]) for i in range(3)] + [cp.abs(dy[3, j]) for j in range(3)]
    prob = cp.Problem(cp.Minimize(w * sum(terms) + 0.5 * cp.sum_squares(x - y)), [x >= 0])
    prob.solve()
    cost = lambda z: w * total_variation(z) + 0.5 * np.sum((z - y) ** 2)
    ref = tv_prox_reference(y, w)
    assert cost(ref) <= cost(np.maximum(x.value, 0)) + 1e-6
    assert np.abs(ref - x.value).max() <= 1e-4


# power iteration ------------------------------------------------------------------
def test_power_iteration_on_a_diagonal_operator():
    op = MatrixOperator(np.diag([3.0, 1.0]), (2,))
    res = power_iteration(lambda x: op.adjoint(op.forward(x)), (2,), max_iter=200, tol=1e-10)
    assert res.converged
    assert res.value == pytest.approx(9.0, rel=1e-8)
    assert res.history[-1] == res.value


def test_power_iteration_is_seeded(rng):
    a = rng.standard_normal((6, 6))
    normal = lambda x: a.T @ (a @ x)
    r1 = power_iteration(normal, (6,), seed=3)
    r2 = power_iteration(normal, (6,), seed=3)
    assert r1.history == r2.history
    top = np.linalg.eigvalsh(a.T @ a).max()
    assert r1.value <= top * (1 + 1e-12)


def test_power_iteration_warns_when_not_converged(rng):
    a = np.diag([1.0, 0.999, 0.5])
    with pytest.warns(RuntimeWarning, match="not converged"):
        res = power_iteration(lambda x: a @ x, (3,), max_iter=3, tol=1e-14)
    assert not res.converged and res.iterations == 3
    assert res.value == max(res.history)


def test_power_iteration_zero_operator():
    res = power_iteration(lambda x: 0 * x, (4,))
    assert res.value == 0.0 and res.converged


def test_lipschitz_cache(tmp_path, monkeypatch):
    calls = []

    def compute():
        calls.append(1)
        return 4.5

    monkeypatch.setenv("PAVISCO_CACHE_DIR", str(tmp_path))
    assert cached_lipschitz("abc", compute) == 4.5
    assert cached_lipschitz("abc", compute) == 4.5
    assert len(calls) == 1
    assert json.loads((tmp_path / "lipschitz-abc.json").read_text())["value"] == 4.5
    monkeypatch.delenv("PAVISCO_CACHE_DIR")
    cached_lipschitz("abc", compute)
    assert len(calls) == 2


# objective and metrics -------------------------------------------------------------
def test_relative_error_bounds(rng):
    ph = rng.random((5, 5))
    assert relative_error(ph, ph) == 0.0
    assert relative_error(np.zeros_like(ph), ph) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        relative_error(ph, np.zeros_like(ph))


def test_objective_at_zero_is_half_data_energy(rng):
    data = rng.standard_normal((3, 7))
    op = MatrixOperator(rng.standard_normal((21, 4)), (2, 2))
    re, f = metrics(np.zeros((2, 2)), np.ones((2, 2)), op, data.ravel(), reg=0.5)
    assert f == pytest.approx(0.5 * np.sum(data**2))
    assert re == pytest.approx(100.0)
    assert objective(np.ones(3), np.zeros((2, 2)), 1.0) == 1.5


def test_gradient_is_affine_in_data(rng):
    m = rng.standard_normal((10, 6))
    op = MatrixOperator(m, (2, 3))
    p = rng.standard_normal((2, 3))
    d = rng.standard_normal(10)
    np.testing.assert_allclose(gradient_f(op, p, d), (m.T @ (m @ p.ravel() - d)).reshape(2, 3))
    with pytest.raises(ConfigurationError):
        gradient_f(op, p, np.zeros(9))


@pytest.mark.slow
def test_gradient_matches_finite_differences():
    model = random_model((32, 32), seed=5, pml=4, nt=60)
    op = PatOperator(model)
    rng = np.random.default_rng(9)
    p = rng.random(model.grid.shape)
    data = op.forward(rng.random(model.grid.shape))
    g = gradient_f(op, p, data)
    f = lambda x: objective(op.forward(x) - data, x, 0.0)
    for _ in range(2):
        v = rng.standard_normal(p.shape)
        eps = 1e-3
        fd = (f(p + eps * v) - f(p - eps * v)) / (2 * eps)
        assert rel(fd, np.vdot(g, v)) <= 1e-5


# ISTA -------------------------------------------------------------------------------
def test_ista_identity_converges_to_positive_part(rng):
    y = rng.standard_normal((6, 5))
    res = run_ista(y, Identity(y.shape), ReconConfig(reg=0.0, step_factor=1.0), lipschitz=1.0)
    np.testing.assert_allclose(res.image, np.maximum(y, 0), atol=1e-14)
    assert res.reason == "tolerance"
    slow = run_ista(y, Identity(y.shape), ReconConfig(reg=0.0, tol=1e-12), lipschitz=1.0)
    np.testing.assert_allclose(slow.image, np.maximum(y, 0), atol=1e-5)


def test_ista_on_zero_data_returns_zero():
    res = run_ista(np.zeros((4, 4)), Identity((4, 4)), ReconConfig(), lipschitz=1.0)
    assert res.reason == "zero_objective"
    assert len(res.history) == 2
    assert not np.any(res.image)


def test_ista_objective_is_monotone_and_logged(rng):
    m = rng.standard_normal((40, 16))
    op = MatrixOperator(m, (4, 4))
    truth = rng.random((4, 4))
    data = op.forward(truth)
    L = power_iteration(lambda x: op.adjoint(op.forward(x)), (4, 4), tol=1e-10, max_iter=500).value
    seen = []
    res = run_ista(data, op, ReconConfig(reg=1e-3, max_iter=50), lipschitz=L, phantom=truth,
                   callback=lambda k, p: seen.append(k))
    assert np.all(np.diff(res.history.F) <= 0)
    assert seen == res.history.k
    csv = res.history.to_csv().splitlines()
    assert csv[0] == "k,F,RE,seconds" and len(csv) == len(res.history) + 1
    one = run_ista(data, op, ReconConfig(max_iter=1), lipschitz=L)
    assert len(one.history) == 1 and one.reason == "max_iter"
    assert one.history.to_csv().splitlines()[1].split(",")[2] == ""


def test_ista_computes_lipschitz_when_missing(rng):
    m = np.diag([2.0, 1.0, 0.5, 0.1])
    res = run_ista(np.ones(4), MatrixOperator(m, (4,)), ReconConfig(max_iter=2, power_tol=1e-9, power_iter=500))
    assert res.lipschitz == pytest.approx(4.0, rel=1e-6)


def test_ista_divergence_raises():
    # the top singular vector has mixed signs, so positivity cannot absorb the overshoot
    op = MatrixOperator(np.array([[1.0, -1.0]]), (2,))
    with pytest.raises(DivergenceError, match="step factor"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run_ista(np.array([1.0]), op, ReconConfig(reg=0.0, max_iter=50), lipschitz=0.1)


@pytest.mark.parametrize("kw", [dict(reg=-1), dict(tol=0), dict(step_factor=2.0), dict(max_iter=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        run_ista(np.ones(2), MatrixOperator(np.eye(2), (2,)), ReconConfig(**kw), lipschitz=1.0)
