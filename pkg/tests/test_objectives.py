import numpy as np
import pytest

from tdlab.generators import random_control_problem, random_instance
from tdlab.mrp import Mrp
from tdlab.objectives import (ControlProblem, FixedTargetQuadratic, ForceConstants,
                              control_quadratic, estimate_constants, huber_linear,
                              logistic_linear, quadratic_linear, ridge_regularized)

from conftest import central_diff, rel_err

EPS, GAMMA = 0.1, 0.95


def _fd_check(obj, gen, probes=20, scale=3.0):
    for _ in range(probes):
        theta, w = gen.normal(size=(2, obj.dim)) * scale
        fd = central_diff(lambda x: obj.value(theta, x), w)
        assert rel_err(obj.grad_w(theta, w), fd) < 1e-5


def test_quadratic_counterexample_constants(counterexample):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    fc = quadratic_linear(mrp, phi, [1.0, 1.0, 0.0]).analytic_constants()
    assert fc.F_w == pytest.approx(5.0) and fc.L == pytest.approx(5.0)
    assert fc.F_theta == pytest.approx(GAMMA * (6 - 4 * EPS))
    assert fc.lambda_max_theta == pytest.approx(GAMMA * (6 - 4 * EPS))


def test_quadratic_tabular_constants(rng):
    n = 4
    mrp, _, _ = random_instance(rng, n_max=4)
    n = mrp.n
    d = rng.random(n) + 0.1
    fc = quadratic_linear(mrp, np.eye(n), d).analytic_constants()
    assert fc.F_w == pytest.approx(d.min()) and fc.L == pytest.approx(d.max())


def test_quadratic_fixed_point_gradient(rng):
    mrp, Phi, d = random_instance(rng)
    obj = quadratic_linear(mrp, Phi, d)
    ts = obj.fixed_point()
    assert np.linalg.norm(obj.grad_w(ts, ts)) < 1e-10


def test_lambda_max_differs_from_operator_norm():
    # Mtheta nonsymmetric: largest eigenvalue understates the Lipschitz constant
    mrp = Mrp(P=[[0.0, 1.0], [1.0, 0.0]], R=[0, 0], gamma=0.9)
    fc = quadratic_linear(mrp, [[1.0, 0.0], [0.0, 3.0]], [0.8, 0.2]).analytic_constants()
    assert fc.lambda_max_theta < fc.F_theta


def test_ridge(counterexample, rng):
    mrp, phi, _ = counterexample(EPS, 0.5)
    base = quadratic_linear(mrp, phi, [0.2, 0.2, 0.0])  # Mw = 0.2 + 0.8 = 1
    assert base.analytic_constants().F_w == pytest.approx(1.0)
    fc = ridge_regularized(base, 0.5).analytic_constants()
    assert fc.F_w == pytest.approx(1.5) and fc.L == pytest.approx(1.5)
    assert fc.F_theta == pytest.approx(base.analytic_constants().F_theta)
    for lam in (0.0, -1.0):
        with pytest.raises(ValueError):
            ridge_regularized(base, lam)
    obj = ridge_regularized(base, 0.5)
    theta = np.array([0.7])
    w = obj.argmin_w(theta)
    assert np.linalg.norm(obj.grad_w(theta, w)) < 1e-12
    ts = obj.fixed_point()
    assert np.linalg.norm(obj.grad_w(ts, ts)) < 1e-12


def test_ridge_huber_strong_convexity(rng):
    mrp, Phi, d = random_instance(rng)
    obj = ridge_regularized(huber_linear(mrp, Phi, d, delta=0.5), 1.0)
    est = estimate_constants(obj, samples=500, rng_seed=3)
    assert est.F_w >= 1.0 - 1e-8
    # strong-convexity inequality at every sampled triple with the declared modulus
    for _ in range(200):
        theta, w1, w2 = rng.uniform(-10, 10, size=(3, obj.dim))
        lhs = (obj.grad_w(theta, w1) - obj.grad_w(theta, w2)) @ (w1 - w2)
        assert lhs >= 1.0 * np.sum((w1 - w2) ** 2) - 1e-8


def test_huber_reduces_to_quadratic(rng):
    mrp, Phi, d = random_instance(rng)
    quad = quadratic_linear(mrp, Phi, d)
    hub = huber_linear(mrp, Phi, d, delta=1e12)
    for _ in range(10):
        theta, w = rng.normal(size=(2, quad.dim))
        assert hub.value(theta, w) == pytest.approx(quad.value(theta, w), abs=1e-10)
        np.testing.assert_allclose(hub.grad_w(theta, w), quad.grad_w(theta, w), atol=1e-10)


def test_huber_zero_residual(counterexample):
    mrp, phi, d = counterexample()
    hub = huber_linear(mrp, phi, d, delta=1.0)
    assert hub.value([0.0], [0.0]) == 0.0
    assert np.array_equal(hub.grad_w([0.0], [0.0]), [0.0])
    with pytest.raises(ValueError):
        huber_linear(mrp, phi, d, delta=0.0)


def test_logcosh(counterexample, rng):
    mrp, phi, d = counterexample()
    obj = logistic_linear(mrp, phi, d, scale=2.0)
    assert obj.value([0.0], [0.0]) == 0.0
    assert np.array_equal(obj.grad_w([0.0], [0.0]), [0.0])
    with pytest.raises(ValueError):
        logistic_linear(mrp, phi, d, scale=-1.0)
    mrp, Phi, d = random_instance(rng)
    scale = 100.0
    lc = logistic_linear(mrp, Phi, d, scale=scale)
    quad = quadratic_linear(mrp, Phi, d)
    for _ in range(20):
        theta, w = rng.normal(size=(2, lc.dim))
        r = lc.residual(theta, w)
        if np.max(np.abs(r)) <= scale / 100:
            assert lc.value(theta, w) == pytest.approx(quad.value(theta, w), rel=0.01)
    # large residuals grow linearly and stay finite
    assert np.isfinite(lc.value(np.full(lc.dim, 1e6), np.zeros(lc.dim)))


def test_logcosh_small_residual_explicit():
    mrp = Mrp(P=[[1.0]], R=[0.5], gamma=0.5)
    lc = logistic_linear(mrp, [[1.0]], [1.0], scale=100.0)
    quad = quadratic_linear(mrp, [[1.0]], [1.0])
    assert lc.value([0.0], [0.0]) == pytest.approx(quad.value([0.0], [0.0]), rel=0.01)


@pytest.mark.parametrize("kind", ["quadratic", "huber", "logcosh", "ridge", "control-max",
                                  "control-softmax"])
def test_gradient_finite_differences(kind, rng):
    mrp, Phi, d = random_instance(rng)
    obj = {
        "quadratic": lambda: quadratic_linear(mrp, Phi, d),
        "huber": lambda: huber_linear(mrp, Phi, d, delta=1.0),
        "logcosh": lambda: logistic_linear(mrp, Phi, d, scale=1.0),
        "ridge": lambda: ridge_regularized(huber_linear(mrp, Phi, d, 0.7), 0.3),
        "control-max": lambda: control_quadratic(random_control_problem(rng)),
        "control-softmax": lambda: control_quadratic(random_control_problem(rng, greedify="softmax", tau=0.5)),
    }[kind]()
    _fd_check(obj, rng)


def test_control_single_action_reduces_to_prediction(rng):
    mrp, Phi, d = random_instance(rng)
    cp = ControlProblem(d=d, pi=np.ones((mrp.n, 1)), P=mrp.P, r=mrp.R, features=Phi[:, None, :],
                        gamma=mrp.gamma)
    ctl, quad = control_quadratic(cp), quadratic_linear(mrp, Phi, d)
    for _ in range(10):
        theta, w = rng.normal(size=(2, quad.dim))
        assert ctl.value(theta, w) == pytest.approx(quad.value(theta, w), abs=1e-10)
        np.testing.assert_allclose(ctl.grad_w(theta, w), quad.grad_w(theta, w), atol=1e-10)


def test_control_zero_rewards(rng):
    cp = random_control_problem(rng)
    cp = ControlProblem(d=cp.d, pi=cp.pi, P=cp.P, r=np.zeros(3), features=cp.features, gamma=cp.gamma)
    assert control_quadratic(cp).value(np.zeros(cp.m), np.zeros(cp.m)) == 0.0


def test_control_validation(rng):
    cp = random_control_problem(rng)
    with pytest.raises(ValueError, match="empty action set"):
        ControlProblem(d=cp.d, pi=np.zeros((3, 0)), P=cp.P, r=cp.r, features=np.zeros((3, 0, 2)),
                       gamma=0.9)
    with pytest.raises(ValueError, match="temperature"):
        ControlProblem(d=cp.d, pi=cp.pi, P=cp.P, r=cp.r, features=cp.features, gamma=0.9,
                       greedify="softmax", tau=0.0)
    with pytest.raises(ValueError, match="simplex"):
        ControlProblem(d=cp.d, pi=cp.pi * 2, P=cp.P, r=cp.r, features=cp.features, gamma=0.9)


def test_control_tie_breaking():
    feats = np.array([[[1.0], [1.0]]])
    cp = ControlProblem(d=[1.0], pi=[[0.5, 0.5]], P=[[1.0]], r=[0.0], features=feats, gamma=0.5)
    assert cp.greedy_actions(np.array([2.0]))[0] == 0


def test_softmax_temperature_changes_value(rng):
    base = random_control_problem(rng, greedify="softmax", tau=1.0)
    theta, w = rng.normal(size=(2, base.m))
    vals = []
    for tau in (0.5, 0.51, 1.0):
        cp = ControlProblem(d=base.d, pi=base.pi, P=base.P, r=base.r, features=base.features,
                            gamma=base.gamma, greedify="softmax", tau=tau)
        vals.append(control_quadratic(cp).value(theta, w))
    assert vals[0] != vals[2]
    assert abs(vals[1] - vals[0]) < abs(vals[2] - vals[0])


def test_estimate_constants_counterexample(counterexample):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    obj = quadratic_linear(mrp, phi, [1.0, 1.0, 0.0])
    est = estimate_constants(obj, samples=1000, rng_seed=0)
    assert est.F_theta == pytest.approx(GAMMA * (6 - 4 * EPS), rel=0.01)
    assert est.F_w == pytest.approx(5.0, rel=0.01)
    assert est.empirical


def test_estimate_constants_bracket_analytic(rng):
    mrp, Phi, d = random_instance(rng)
    obj = quadratic_linear(mrp, Phi, d)
    fc, est = obj.analytic_constants(), estimate_constants(obj, samples=2000)
    assert est.F_theta <= fc.F_theta + 1e-10
    assert est.L <= fc.L + 1e-10
    assert est.F_w >= fc.F_w - 1e-10


def test_estimate_constants_theta_free(rng):
    obj = FixedTargetQuadratic(rng.normal(size=(5, 2)), np.full(5, 0.2), rng.normal(size=5))
    assert estimate_constants(obj, samples=100).F_theta == 0.0
    with pytest.raises(ValueError):
        estimate_constants(obj, samples=99)


def test_estimate_constants_ridge_floor(rng):
    mrp, Phi, d = random_instance(rng)
    for base in (huber_linear(mrp, Phi, d, 0.2), logistic_linear(mrp, Phi, d, 0.3)):
        assert estimate_constants(ridge_regularized(base, 0.4), samples=300).F_w >= 0.4 - 1e-8


def test_estimate_constants_deterministic(rng):
    mrp, Phi, d = random_instance(rng)
    obj = huber_linear(mrp, Phi, d, 1.0)
    assert estimate_constants(obj, rng_seed=5) == estimate_constants(obj, rng_seed=5)


def test_force_constants_derived():
    fc = ForceConstants(F_theta=0.5, F_w=1.0, L=4.0)
    assert fc.eta == 0.5 and fc.kappa == 0.25 and fc.hypothesis_holds
    with pytest.raises(ValueError):
        ForceConstants(F_theta=0.5, F_w=2.0, L=1.0)


def test_per_state_target_force_bound(rng):
    mrp, Phi, d = random_instance(rng)
    for obj in (huber_linear(mrp, Phi, d, 0.3), logistic_linear(mrp, Phi, d, 0.5)):
        est = estimate_constants(obj, samples=500)
        assert est.F_theta <= obj.target_force_bound() + 1e-10
        assert est.L <= obj.smoothness() + 1e-10
