"""Two-argument objectives ``H(theta, w)`` and their force constants.

``theta`` is the frozen target parameter and ``w`` the parameter being
optimised. Convergence of the iterative schemes in :mod:`tdlab.solvers` is
governed by three constants:

* ``F_theta``: Lipschitz constant of ``grad_w H`` in ``theta`` (target force),
* ``F_w``: strong-convexity modulus of ``H`` in ``w`` (optimisation force),
* ``L``: Lipschitz constant of ``grad_w H`` in ``w``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from . import linear
from .linear import FeatureMap, as_features, build_system
from .mrp import Mrp, check_distribution


@dataclass(frozen=True)
class ForceConstants:
    F_theta: float
    F_w: float
    L: float
    lambda_max_theta: float | None = None
    empirical: bool = False

    def __post_init__(self):
        if self.F_theta < 0 or self.F_w < 0:
            raise ValueError("force constants must be nonnegative")
        if self.L < self.F_w * (1 - 1e-12):
            raise ValueError(f"L={self.L} is smaller than F_w={self.F_w}")

    @property
    def eta(self) -> float:
        if self.F_w == 0:
            return np.inf if self.F_theta > 0 else 0.0
        return self.F_theta / self.F_w

    @property
    def kappa(self) -> float:
        if self.L == 0:
            return 0.0
        return min(self.F_w / self.L, 1.0)

    @property
    def hypothesis_holds(self) -> bool:
        """Target force strictly dominated by optimisation force."""
        return self.F_theta < self.F_w

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(eta=self.eta, kappa=self.kappa)
        return out


class Objective(ABC):
    """Interface shared by every ``H(theta, w)``.

    Subclasses with a closed-form inner minimiser override :meth:`argmin_w`;
    those with a known fixed point override :meth:`fixed_point`.
    """

    dim: int

    @abstractmethod
    def value(self, theta, w) -> float: ...

    @abstractmethod
    def grad_w(self, theta, w) -> np.ndarray: ...

    def analytic_constants(self) -> ForceConstants | None:
        return None

    def smoothness(self) -> float | None:
        """Upper bound on ``L`` usable as an inverse step size."""
        fc = self.analytic_constants()
        return None if fc is None else fc.L

    def argmin_w(self, theta) -> np.ndarray | None:
        return None

    def fixed_point(self) -> np.ndarray | None:
        return None

    def _vec(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        return x


def _spd_extremes(M: np.ndarray) -> tuple[float, float]:
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    return float(ev[0]), float(ev[-1])


class QuadraticLinear(Objective):
    """``1/2 ||R + gamma P Phi theta - Phi w||_D^2``."""

    def __init__(self, mrp: Mrp, phi, d):
        self.mrp = mrp
        self.phi = as_features(phi)
        self.d = check_distribution(mrp, d)
        self.system = build_system(mrp, self.phi, self.d)
        self.dim = self.phi.m

    def value(self, theta, w) -> float:
        return linear.objective_value(self.mrp, self.phi, self.d, self._vec(theta), self._vec(w))

    def grad_w(self, theta, w) -> np.ndarray:
        return linear.grad_w(self.system, theta, w)

    def analytic_constants(self) -> ForceConstants:
        Mw, Mt = self.system.Mw, self.system.Mtheta
        lo, hi = _spd_extremes(Mw)
        # Mtheta is not symmetric: its Lipschitz constant is the top singular value
        F_theta = float(np.linalg.norm(Mt, 2))
        lam = float(np.max(np.linalg.eigvals(Mt).real))
        return ForceConstants(F_theta=F_theta, F_w=lo, L=hi, lambda_max_theta=lam)

    def argmin_w(self, theta) -> np.ndarray:
        return linear.exact_step(self.system, theta)

    def fixed_point(self) -> np.ndarray:
        return np.array(self.system.theta_star)


class FixedTargetQuadratic(Objective):
    """Plain weighted regression ``1/2 ||y - Phi w||_D^2``; independent of ``theta``."""

    def __init__(self, phi, d, target):
        self.phi = as_features(phi)
        self.d = np.asarray(d, dtype=float)
        self.target = np.asarray(target, dtype=float)
        self.dim = self.phi.m
        Phi = self.phi.Phi
        self._Mw = Phi.T @ (self.d[:, None] * Phi)
        self._b = Phi.T @ (self.d * self.target)

    def value(self, theta, w) -> float:
        r = self.target - self.phi.Phi @ self._vec(w)
        return 0.5 * float(np.sum(self.d * r * r))

    def grad_w(self, theta, w) -> np.ndarray:
        return self._Mw @ self._vec(w) - self._b

    def analytic_constants(self) -> ForceConstants:
        lo, hi = _spd_extremes(self._Mw)
        return ForceConstants(F_theta=0.0, F_w=lo, L=hi, lambda_max_theta=0.0)

    def argmin_w(self, theta) -> np.ndarray:
        return np.linalg.solve(self._Mw, self._b)

    def fixed_point(self) -> np.ndarray:
        return self.argmin_w(None)


class _PerStateLoss(Objective):
    """``sum_s d(s) loss(target(s, theta) - phi(s)^T w)`` with expected targets."""

    def __init__(self, mrp: Mrp, phi, d):
        self.mrp = mrp
        self.phi = as_features(phi)
        self.d = check_distribution(mrp, d)
        self.dim = self.phi.m
        Phi = self.phi.Phi
        self._PPhi = mrp.gamma * (mrp.P @ Phi)
        self._Mw = Phi.T @ (self.d[:, None] * Phi)

    @abstractmethod
    def _loss(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _dloss(self, x: np.ndarray) -> np.ndarray: ...

    def residual(self, theta, w) -> np.ndarray:
        return self.mrp.R + self._PPhi @ self._vec(theta) - self.phi.Phi @ self._vec(w)

    def value(self, theta, w) -> float:
        return float(np.sum(self.d * self._loss(self.residual(theta, w))))

    def grad_w(self, theta, w) -> np.ndarray:
        return -self.phi.Phi.T @ (self.d * self._dloss(self.residual(theta, w)))

    def smoothness(self) -> float:
        # both losses have second derivative at most 1
        return _spd_extremes(self._Mw)[1]

    def target_force_bound(self) -> float:
        """Certified upper bound on ``F_theta`` for 1-Lipschitz ``loss'``."""
        sd = np.sqrt(self.d)
        return float(np.linalg.norm(sd[:, None] * self.phi.Phi, 2)
                     * np.linalg.norm(sd[:, None] * self._PPhi, 2))


class HuberLinear(_PerStateLoss):
    def __init__(self, mrp: Mrp, phi, d, delta: float):
        if not delta > 0:
            raise ValueError(f"Huber delta must be positive, got {delta}")
        super().__init__(mrp, phi, d)
        self.delta = float(delta)

    def _loss(self, x):
        a = np.abs(x)
        return np.where(a <= self.delta, 0.5 * x * x, self.delta * a - 0.5 * self.delta**2)

    def _dloss(self, x):
        return np.clip(x, -self.delta, self.delta)


class LogCoshLinear(_PerStateLoss):
    """Scaled log-cosh loss ``scale^2 log cosh(x / scale)``, quadratic near zero."""

    def __init__(self, mrp: Mrp, phi, d, scale: float):
        if not scale > 0:
            raise ValueError(f"log-cosh scale must be positive, got {scale}")
        super().__init__(mrp, phi, d)
        self.scale = float(scale)

    def _loss(self, x):
        a = np.abs(x) / self.scale
        return self.scale**2 * (a + np.log1p(np.exp(-2 * a)) - np.log(2.0))

    def _dloss(self, x):
        return self.scale * np.tanh(x / self.scale)


class RidgeRegularized(Objective):
    """``base(theta, w) + lam/2 ||w||^2``."""

    def __init__(self, base: Objective, lam: float):
        if not lam > 0:
            raise ValueError(f"ridge coefficient must be positive, got {lam}")
        self.base = base
        self.lam = float(lam)
        self.dim = base.dim

    def value(self, theta, w) -> float:
        w = self._vec(w)
        return self.base.value(theta, w) + 0.5 * self.lam * float(w @ w)

    def grad_w(self, theta, w) -> np.ndarray:
        w = self._vec(w)
        return self.base.grad_w(theta, w) + self.lam * w

    def analytic_constants(self) -> ForceConstants | None:
        fc = self.base.analytic_constants()
        if fc is None:
            return None
        return ForceConstants(F_theta=fc.F_theta, F_w=fc.F_w + self.lam, L=fc.L + self.lam,
                              lambda_max_theta=fc.lambda_max_theta)

    def smoothness(self) -> float | None:
        L = self.base.smoothness()
        return None if L is None else L + self.lam

    def _linear_parts(self):
        if isinstance(self.base, QuadraticLinear):
            s = self.base.system
            return s.Mw, s.Mtheta, s.b
        return None

    def argmin_w(self, theta) -> np.ndarray | None:
        parts = self._linear_parts()
        if parts is None:
            return None
        Mw, Mt, b = parts
        return np.linalg.solve(Mw + self.lam * np.eye(self.dim), Mt @ self._vec(theta) + b)

    def fixed_point(self) -> np.ndarray | None:
        parts = self._linear_parts()
        if parts is None:
            return None
        Mw, Mt, b = parts
        return np.linalg.solve(Mw + self.lam * np.eye(self.dim) - Mt, b)


@dataclass(frozen=True)
class ControlProblem:
    """State weights, behaviour policy and linear action-value features.

    ``features[s, a]`` is the feature vector of ``(s, a)``; targets use the
    state transition matrix ``P`` and expected reward ``r`` leaving ``s``.
    """

    d: np.ndarray
    pi: np.ndarray
    P: np.ndarray
    r: np.ndarray
    features: np.ndarray
    gamma: float
    greedify: str = "max"
    tau: float = 1.0

    def __post_init__(self):
        for name in ("d", "pi", "P", "r", "features"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.d.shape[0]
        if self.features.ndim != 3 or self.features.shape[0] != n:
            raise ValueError("features must have shape (n_states, n_actions, m)")
        if self.features.shape[1] == 0:
            raise ValueError("empty action set")
        if self.pi.shape != self.features.shape[:2]:
            raise ValueError("pi must have shape (n_states, n_actions)")
        if np.any(self.pi < 0) or not np.allclose(self.pi.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("pi(.|s) must lie on the simplex for every state")
        if self.P.shape != (n, n) or self.r.shape != (n,):
            raise ValueError("P must be (n, n) and r must have length n")
        if np.any(self.d < 0):
            raise ValueError("state weights must be nonnegative")
        if self.greedify not in ("max", "softmax"):
            raise ValueError(f"unknown greedification {self.greedify!r}")
        if self.greedify == "softmax" and not self.tau > 0:
            raise ValueError(f"softmax temperature must be positive, got {self.tau}")

    @property
    def n_states(self) -> int:
        return self.features.shape[0]

    @property
    def n_actions(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return self.features.shape[2]

    def q(self, theta) -> np.ndarray:
        """Action values; a stack of parameters ``(..., m)`` gives ``(..., n, A)``."""
        return np.tensordot(np.asarray(theta, dtype=float), self.features, axes=([-1], [2]))

    def greedy_value(self, theta) -> np.ndarray:
        """Max over actions, or the temperature-``tau`` log-sum-exp soft maximum."""
        q = self.q(theta)
        if self.greedify == "max":
            return q.max(axis=-1)
        return self.tau * logsumexp(q / self.tau, axis=-1)

    def greedy_actions(self, theta) -> np.ndarray:
        # argmax returns the lowest index among ties
        return np.argmax(self.q(theta), axis=1)

    def greedy_weights(self, theta) -> np.ndarray:
        q = self.q(theta)
        if self.greedify == "max":
            return np.eye(self.n_actions)[self.greedy_actions(theta)]
        return softmax(q / self.tau, axis=1)


class ControlQuadratic(Objective):
    """``1/2 sum_s d(s) sum_a pi(a|s) (E[r + gamma g(s', theta)] - q(s, a, w))^2``."""

    def __init__(self, cp: ControlProblem):
        self.cp = cp
        self.dim = cp.m
        wts = cp.d[:, None] * cp.pi
        self._weights = wts
        self._C = np.einsum("sa,sai,saj->ij", wts, cp.features, cp.features)

    def targets(self, theta) -> np.ndarray:
        cp = self.cp
        return cp.r + cp.gamma * (cp.P @ cp.greedy_value(self._vec(theta)))

    def value(self, theta, w) -> float:
        resid = self.targets(theta)[:, None] - self.cp.q(self._vec(w))
        return 0.5 * float(np.sum(self._weights * resid * resid))

    def grad_w(self, theta, w) -> np.ndarray:
        resid = self.targets(theta)[:, None] - self.cp.q(self._vec(w))
        return -np.einsum("sa,sai->i", self._weights * resid, self.cp.features)

    def grad_w_batch(self, thetas, ws) -> np.ndarray:
        """Row-wise :meth:`grad_w` for stacks of shape ``(k, m)``."""
        cp = self.cp
        y = cp.r + cp.gamma * cp.greedy_value(thetas) @ cp.P.T
        resid = y[:, :, None] - cp.q(ws)
        return -np.einsum("ksa,sai->ki", self._weights * resid, cp.features)

    def smoothness(self) -> float:
        return _spd_extremes(self._C)[1]

    def strong_convexity(self) -> float:
        return _spd_extremes(self._C)[0]

    def argmin_w(self, theta) -> np.ndarray:
        y = self.targets(theta)
        rhs = np.einsum("sa,sai->i", self._weights * y[:, None], self.cp.features)
        return np.linalg.solve(self._C, rhs)


def quadratic_linear(mrp: Mrp, phi, d) -> QuadraticLinear:
    return QuadraticLinear(mrp, phi, d)


def ridge_regularized(base: Objective, lam: float) -> RidgeRegularized:
    return RidgeRegularized(base, lam)


def huber_linear(mrp: Mrp, phi, d, delta: float) -> HuberLinear:
    return HuberLinear(mrp, phi, d, delta)


def logistic_linear(mrp: Mrp, phi, d, scale: float) -> LogCoshLinear:
    return LogCoshLinear(mrp, phi, d, scale)


def control_quadratic(cp: ControlProblem) -> ControlQuadratic:
    return ControlQuadratic(cp)


def _box(probe_box) -> tuple[float, float]:
    lo, hi = probe_box
    if not hi > lo:
        raise ValueError("probe box must have hi > lo")
    return float(lo), float(hi)


def estimate_constants(obj: Objective, probe_box: Sequence[float] = (-10.0, 10.0),
                       samples: int = 1000, rng_seed: int = 0) -> ForceConstants:
    """Sampled estimates of ``F_theta``, ``F_w`` and ``L``.

    These are sampled bounds, not certificates: ``F_theta`` and ``L`` are
    under-estimated and ``F_w`` over-estimated relative to the true constants.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    lo, hi = _box(probe_box)
    rng = np.random.default_rng(rng_seed)
    m = obj.dim

    def pair():
        while True:
            a, b = rng.uniform(lo, hi, size=(2, m))
            if np.linalg.norm(a - b) >= 1e-12:
                return a, b

    F_theta, F_w, L = 0.0, np.inf, 0.0
    for _ in range(samples):
        t1, t2 = pair()
        w = rng.uniform(lo, hi, size=m)
        dg = obj.grad_w(t1, w) - obj.grad_w(t2, w)
        F_theta = max(F_theta, float(np.linalg.norm(dg) / np.linalg.norm(t1 - t2)))

        w1, w2 = pair()
        theta = rng.uniform(lo, hi, size=m)
        dg = obj.grad_w(theta, w1) - obj.grad_w(theta, w2)
        dw = w1 - w2
        nw2 = float(dw @ dw)
        F_w = min(F_w, float(dg @ dw) / nw2)
        L = max(L, float(np.linalg.norm(dg)) / np.sqrt(nw2))
    F_w = max(F_w, 0.0)
    return ForceConstants(F_theta=F_theta, F_w=F_w, L=max(L, F_w), empirical=True)


__all__ = [
    "ControlProblem", "ControlQuadratic", "FeatureMap", "FixedTargetQuadratic", "ForceConstants",
    "HuberLinear", "LogCoshLinear", "Objective", "QuadraticLinear", "RidgeRegularized",
    "control_quadratic", "estimate_constants", "huber_linear", "logistic_linear",
    "quadratic_linear", "ridge_regularized",
]
