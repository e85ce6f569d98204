import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdlab.analysis import COUNTEREXAMPLE_RESTART
from tdlab.generators import random_instance, random_mrp
from tdlab.linear import (FeatureMap, SingularSystemError, build_system, exact_step, grad_w,
                          objective_value, predict_convergence, projection_matrix,
                          spectral_radius)
from tdlab.mrp import Mrp, stationary_distribution, weighted_norm

from conftest import central_diff, rel_err

EPS, GAMMA = 0.1, 0.95


def test_counterexample_forces_unnormalised(counterexample):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    sys = build_system(mrp, phi, [1.0, 1.0, 0.0])
    assert sys.Mw[0, 0] == pytest.approx(5.0, abs=1e-14)
    assert sys.Mtheta[0, 0] == pytest.approx(GAMMA * (6 - 4 * EPS), abs=1e-14)


def test_counterexample_forces_normalised(counterexample):
    mrp, phi, d = counterexample(EPS, GAMMA, d1=0.5)
    sys = build_system(mrp, phi, d)
    assert sys.Mw[0, 0] == pytest.approx(2.5, abs=1e-14)
    assert sys.Mtheta[0, 0] == pytest.approx(GAMMA * (3 - 2 * EPS), abs=1e-14)
    sys1 = build_system(mrp, phi, [1.0, 1.0, 0.0])
    assert sys.A[0, 0] == pytest.approx(sys1.A[0, 0], abs=1e-14)


def test_zero_reward_fixed_point_is_zero(rng):
    mrp, Phi, d = random_instance(rng)
    mrp0 = Mrp(P=mrp.P, R=np.zeros(mrp.n), gamma=mrp.gamma)
    assert np.array_equal(build_system(mrp0, Phi, d).theta_star, np.zeros(Phi.shape[1]))


def test_singular_systems_rejected(counterexample):
    mrp, _, _ = counterexample()
    with pytest.raises(SingularSystemError, match="features not independent"):
        build_system(mrp, FeatureMap([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]), [0.5, 0.5, 0.0])
    # gamma on the threshold: Mw == Mtheta
    eps = 0.25
    mrp = Mrp(P=[[0, 1, 0], [0, 1 - eps, eps], [0, 0, 1]], R=[0, 0, 0], gamma=0.999999999999,
              terminal=[False, False, True])
    with pytest.raises(SingularSystemError, match="no unique fixed point"):
        build_system(mrp, [[1.0], [2.0], [0.0]], [0.5, 0.5, 0.0])


def test_grad_w_examples(counterexample, rng):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    sys = build_system(mrp, phi, [1.0, 1.0, 0.0])
    assert grad_w(sys, [1.0], [0.0])[0] == pytest.approx(-GAMMA * (6 - 4 * EPS), abs=1e-14)
    mrp, Phi, d = random_instance(rng)
    sys = build_system(mrp, Phi, d)
    assert np.linalg.norm(grad_w(sys, sys.theta_star, sys.theta_star)) < 1e-10
    with pytest.raises(ValueError):
        grad_w(sys, np.zeros(sys.m + 1), np.zeros(sys.m))


def test_grad_w_finite_differences(rng):
    for _ in range(20):
        mrp, Phi, d = random_instance(rng)
        sys = build_system(mrp, Phi, d)
        theta, w = rng.normal(size=(2, sys.m))
        fd = central_diff(lambda x: objective_value(mrp, Phi, d, theta, x), w)
        assert rel_err(grad_w(sys, theta, w), fd) < 1e-6


def test_objective_value_examples(counterexample, rng):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    assert objective_value(mrp, phi, [0.5, 0.5, 0], [0.0], [0.0]) == 0.0
    for theta, w in rng.normal(size=(5, 2)):
        expected = 0.5 * (GAMMA * 2 * theta - w) ** 2
        assert objective_value(mrp, phi, [1.0, 0, 0], [theta], [w]) == pytest.approx(expected, rel=1e-12)
    mrp, Phi, d = random_instance(rng)
    theta, w = rng.normal(size=(2, Phi.shape[1]))
    total = 0.0
    for s in range(mrp.n):
        target = mrp.R[s] + mrp.gamma * sum(mrp.P[s, s2] * (Phi[s2] @ theta) for s2 in range(mrp.n))
        total += d[s] * (target - Phi[s] @ w) ** 2 / 2
    assert objective_value(mrp, Phi, d, theta, w) == pytest.approx(total, rel=1e-12)


def test_exact_step_examples(counterexample):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    sys = build_system(mrp, phi, [1.0, 1.0, 0.0])
    assert exact_step(sys, [1.0])[0] == pytest.approx(GAMMA * (6 - 4 * EPS) / 5, abs=1e-14)
    sys2 = build_system(mrp, phi, [0.0, 1.0, 0.0])
    assert exact_step(sys2, [1.0])[0] == pytest.approx(GAMMA * (1 - EPS), abs=1e-14)
    assert exact_step(sys, sys.theta_star) == pytest.approx(sys.theta_star)


def test_spectral_radius_trivial():
    assert spectral_radius(np.eye(3)) == pytest.approx(1.0)
    assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)
    assert spectral_radius([[0.0, -2.0], [2.0, 0.0]]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))
    with pytest.raises(ValueError):
        spectral_radius([[np.nan]])


def _gelfand(A, log2k):
    """``||A^k||^(1/k)`` with ``k = 2**log2k`` via rescaled repeated squaring."""
    B = np.array(A, dtype=float)
    log_norm = 0.0
    for i in range(log2k):
        s = np.linalg.norm(B, 2)
        B = B / s
        log_norm += np.log(s) * 2.0 ** (log2k - i)
        B = B @ B
    log_norm += np.log(np.linalg.norm(B, 2))
    return float(np.exp(log_norm / 2.0**log2k))


@pytest.mark.parametrize("seed", range(5))
def test_spectral_radius_gelfand_oracle(seed):
    A = np.random.default_rng(seed).normal(size=(4, 4))
    rho = spectral_radius(A)
    k200 = np.linalg.norm(np.linalg.matrix_power(A, 200), 2) ** (1 / 200)
    assert k200 >= rho * (1 - 1e-12)
    assert abs(_gelfand(A, 20) - rho) < 1e-3


def test_predict_convergence_counterexample(counterexample):
    mrp, phi, _ = counterexample(EPS, GAMMA)
    pred = predict_convergence(build_system(mrp, phi, [1.0, 1.0, 0.0]))
    assert pred.rho == pytest.approx(0.95 * 5.6 / 5, abs=1e-14) and not pred.converges
    d = stationary_distribution(mrp, COUNTEREXAMPLE_RESTART)
    pred = predict_convergence(build_system(mrp, phi, d))
    assert pred.rho == pytest.approx(GAMMA * (4 - 2 * EPS) / (4 + EPS), abs=1e-12)
    assert pred.converges


def test_tabular_rho_equals_gamma(rng):
    for _ in range(10):
        n = int(rng.integers(2, 7))
        mrp = random_mrp(rng, n)
        d = rng.random(n) + 0.05
        pred = predict_convergence(build_system(mrp, np.eye(n), d))
        assert pred.rho <= mrp.gamma + 1e-10 and pred.converges


def test_projection(rng):
    n = 5
    np.testing.assert_allclose(projection_matrix(np.eye(n), rng.random(n) + 0.1), np.eye(n), atol=1e-12)
    mrp, Phi, d = random_instance(rng)
    Pi = projection_matrix(Phi, d)
    np.testing.assert_allclose(Pi @ Pi, Pi, atol=1e-10)
    w = rng.normal(size=Phi.shape[1])
    np.testing.assert_allclose(Pi @ (Phi @ w), Phi @ w, atol=1e-10)
    for _ in range(100):
        v = rng.normal(size=mrp.n)
        assert weighted_norm(Pi @ v, d) <= weighted_norm(v, d) + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100.0))
def test_recurrence_and_scale_invariance(seed, scale):
    gen = np.random.default_rng(seed)
    mrp, Phi, d = random_instance(gen)
    sys = build_system(mrp, Phi, d)
    assert sys.fixed_point_residual() < 1e-10
    theta = gen.normal(size=sys.m)
    # backward-stable solves: error ~ eps * condition * magnitude
    cond = np.linalg.cond(sys.Mw) + np.linalg.cond(sys.Mw - sys.Mtheta)
    for _ in range(10):
        nxt = exact_step(sys, theta)
        err = (nxt - sys.theta_star) - sys.A @ (theta - sys.theta_star)
        size = max(1.0, np.linalg.norm(theta), np.linalg.norm(sys.theta_star))
        assert np.linalg.norm(err) < 100 * np.finfo(float).eps * cond * size
        theta = nxt
    scaled = build_system(mrp, Phi, scale * d)
    np.testing.assert_allclose(scaled.A, sys.A, atol=1e-10)
    np.testing.assert_allclose(scaled.theta_star, sys.theta_star, atol=1e-8, rtol=1e-8)
    p1, p2 = predict_convergence(sys), predict_convergence(scaled)
    assert p1.converges == p2.converges and p1.rho == pytest.approx(p2.rho, abs=1e-10)


def test_on_policy_regime_converges(rng):
    for _ in range(100):
        mrp, Phi, _ = random_instance(rng)
        d = stationary_distribution(mrp)
        assert predict_convergence(build_system(mrp, Phi, d)).rho < 1


def test_featuremap_problems(counterexample):
    mrp, phi, _ = counterexample()
    assert phi.problems(mrp) == []
    assert FeatureMap([[1.0], [2.0], [1.0]]).problems(mrp) == ["Phi has nonzero rows at terminal states"]
    assert "Phi is not full column rank" in FeatureMap([[1.0, 1.0], [1.0, 1.0]]).problems()
