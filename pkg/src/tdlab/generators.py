"""Random problem instances for property tests, sweeps and demos."""

from __future__ import annotations

import numpy as np

from .mrp import Mrp
from .objectives import ControlProblem


def random_stochastic(rng: np.random.Generator, n: int, sparsity: float = 0.0) -> np.ndarray:
    P = rng.random((n, n))
    if sparsity > 0:
        P[rng.random((n, n)) < sparsity] = 0.0
    P += 1e-3  # keep the chain irreducible
    return P / P.sum(axis=1, keepdims=True)


def random_mrp(rng: np.random.Generator, n: int, gamma: float | None = None) -> Mrp:
    """Irreducible MRP without terminal states."""
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.99))
    return Mrp(P=random_stochastic(rng, n), R=rng.normal(size=n), gamma=gamma)


def random_features(rng: np.random.Generator, n: int, m: int,
                    max_cond: float | None = None) -> np.ndarray:
    """Gaussian features with full column rank, optionally with bounded condition number."""
    while True:
        Phi = rng.normal(size=(n, m))
        sv = np.linalg.svd(Phi, compute_uv=False)
        if sv.min() > 1e-3 and (max_cond is None or sv.max() <= max_cond * sv.min()):
            return Phi


def random_distribution(rng: np.random.Generator, n: int, floor: float = 0.01) -> np.ndarray:
    d = rng.dirichlet(np.ones(n)) + floor
    return d / d.sum()


def random_instance(rng: np.random.Generator, n_max: int = 8, m_max: int = 4,
                    gamma: float | None = None, max_cond: float | None = None):
    """``(mrp, Phi, d)`` with ``m <= n``, full-rank features and full-support weights."""
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, min(m_max, n) + 1))
    return (random_mrp(rng, n, gamma), random_features(rng, n, m, max_cond),
            random_distribution(rng, n))


def random_control_problem(rng: np.random.Generator, n: int = 3, n_actions: int = 2, m: int = 3,
                           gamma: float | None = None, greedify: str = "max",
                           tau: float = 1.0) -> ControlProblem:
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.99))
    pi = rng.dirichlet(np.ones(n_actions), size=n)
    return ControlProblem(
        d=random_distribution(rng, n),
        pi=pi,
        P=random_stochastic(rng, n),
        r=rng.normal(size=n),
        features=rng.normal(size=(n, n_actions, m)),
        gamma=gamma,
        greedify=greedify,
        tau=tau,
    )
