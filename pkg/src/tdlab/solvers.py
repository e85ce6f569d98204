"""Outer/inner iteration schemes for ``theta <- argmin_w H(theta, w)``.

:func:`solve_exact` minimises each inner problem to optimality;
:func:`solve_gradient` replaces the inner minimisation by ``K`` gradient
steps seeded at the current target, ``w^{t,0} = theta^t``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from os import PathLike
from typing import Any

import numpy as np

from .objectives import Objective

MAX_INNER_ITERS = 10**6


class InnerSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    T: int = 100
    K: int = 1
    alpha: float | None = None
    inner_tol: float = 1e-12
    divergence_guard: float = 1e12
    step_tol: float = 1e-10
    grad_tol: float = 1e-10

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")


@dataclass
class Trajectory:
    thetas: np.ndarray
    grad_residuals: np.ndarray
    distances: np.ndarray | None = None
    theta_star: np.ndarray | None = None
    diverged: bool = False
    converged: bool = False
    method: str = "exact"
    K: int | None = None
    alpha: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        """``distances[t+1] / distances[t]`` wherever ``distances[t] > 1e-14``."""
        return self.ratios_above(1e-14)

    def ratios_above(self, floor: float) -> np.ndarray:
        """Step ratios restricted to steps that start at distance above ``floor``."""
        if self.distances is None:
            return np.empty(0)
        d = self.distances
        ok = d[:-1] > floor
        return d[1:][ok] / d[:-1][ok]

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def rows(self) -> list[list[Any]]:
        """One row per iterate; ratio is blank where undefined."""
        d = self.distances
        out = []
        for t, theta in enumerate(self.thetas):
            dist = "" if d is None else float(d[t])
            ratio = ""
            if d is not None and t > 0 and d[t - 1] > 1e-14:
                ratio = float(d[t] / d[t - 1])
            out.append([t, *map(float, theta), dist, ratio, float(self.grad_residuals[t])])
        return out

    def to_csv(self, path: str | PathLike | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        m = self.thetas.shape[1]
        writer.writerow(["t", *[f"theta_{i}" for i in range(m)], "distance", "ratio", "grad_residual"])
        for row in self.rows():
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "K": self.K,
            "alpha": self.alpha,
            "diverged": self.diverged,
            "converged": self.converged,
            "notes": list(self.notes),
            "thetas": self.thetas.tolist(),
            "distances": None if self.distances is None else self.distances.tolist(),
            "theta_star": None if self.theta_star is None else self.theta_star.tolist(),
            "ratios": self.ratios.tolist(),
            "grad_residuals": self.grad_residuals.tolist(),
        }

    def to_json(self, path: str | PathLike | None = None, config: dict | None = None) -> str:
        doc = {"config": config, "trajectory": self.to_dict()}
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def fixed_point_residual(obj: Objective, theta) -> float:
    """``||grad_w H(theta, theta)||``; zero exactly at a fixed point."""
    return float(np.linalg.norm(obj.grad_w(theta, theta)))


def _inner_step_size(obj: Objective) -> float:
    L = obj.smoothness()
    if L is None:
        from .objectives import estimate_constants

        L = estimate_constants(obj, samples=200).L
    if not L > 0:
        raise InnerSolveError("cannot pick an inner step size: smoothness constant is zero")
    return 1.0 / L


def _minimise(obj: Objective, theta: np.ndarray, w0: np.ndarray, alpha: float,
              tol: float, t: int) -> np.ndarray:
    w = w0.copy()
    for k in range(MAX_INNER_ITERS):
        g = obj.grad_w(theta, w)
        if np.linalg.norm(g) < tol:
            return w
        w = w - alpha * g
        if not np.all(np.isfinite(w)):
            break
    raise InnerSolveError(f"inner minimisation at outer iteration {t} did not reach "
                          f"tolerance {tol} within {MAX_INNER_ITERS} steps")


def _run(obj: Objective, step, theta0, cfg: SolverConfig, theta_star, method: str,
         alpha: float | None, notes: list[str]) -> Trajectory:
    theta = obj._vec(np.ones(obj.dim) if theta0 is None else theta0).copy()
    if theta_star is None:
        theta_star = obj.fixed_point()
    star = None if theta_star is None else obj._vec(theta_star)

    thetas = [theta]
    resid = [fixed_point_residual(obj, theta)]
    diverged = converged = False
    if resid[0] < cfg.grad_tol:
        converged = True
    else:
        for t in range(cfg.T):
            new = step(theta, t)
            if not np.all(np.isfinite(new)) or np.linalg.norm(new) > cfg.divergence_guard:
                diverged = True
                if np.all(np.isfinite(new)):
                    thetas.append(new)
                    resid.append(fixed_point_residual(obj, new))
                break
            thetas.append(new)
            resid.append(fixed_point_residual(obj, new))
            moved = np.linalg.norm(new - theta)
            theta = new
            if moved < cfg.step_tol or resid[-1] < cfg.grad_tol:
                converged = True
                break
    thetas = np.array(thetas)
    dist = None if star is None else np.linalg.norm(thetas - star, axis=1)
    return Trajectory(thetas=thetas, grad_residuals=np.array(resid), distances=dist, theta_star=star,
                      diverged=diverged, converged=converged, method=method,
                      K=None if method == "exact" else cfg.K, alpha=alpha, notes=notes)


def solve_exact(obj: Objective, theta0=None, cfg: SolverConfig | None = None,
                theta_star=None) -> Trajectory:
    """Run ``theta^{t+1} = argmin_w H(theta^t, w)`` for up to ``cfg.T`` steps.

    Uses the objective's closed-form minimiser when it has one, otherwise
    gradient descent with step ``1/L`` until ``||grad_w H|| < cfg.inner_tol``.
    Divergence sets ``diverged`` instead of raising.
    """
    cfg = cfg or SolverConfig()
    probe = obj.argmin_w(np.ones(obj.dim))
    if probe is not None:
        def step(theta, t):
            return obj.argmin_w(theta)
    else:
        alpha = _inner_step_size(obj)

        def step(theta, t):
            return _minimise(obj, theta, theta, alpha, cfg.inner_tol, t)
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(obj, step, theta0, cfg, theta_star, "exact", None, [])


def solve_gradient(obj: Objective, theta0=None, cfg: SolverConfig | None = None,
                   theta_star=None) -> Trajectory:
    """``T`` outer iterations of ``K`` gradient steps on ``w -> H(theta^t, w)``.

    The step size defaults to ``1/L``. Any other value is allowed but noted in
    the trajectory, since the contraction factor ``sigma_K`` assumes ``1/L``.
    """
    cfg = cfg or SolverConfig()
    L = obj.smoothness()
    notes = []
    if cfg.alpha is None:
        if L is None:
            raise ValueError("objective has no smoothness constant; pass alpha explicitly")
        alpha = 1.0 / L
    else:
        alpha = float(cfg.alpha)
        if L is None or not np.isclose(alpha, 1.0 / L, rtol=1e-12, atol=0.0):
            notes.append("step size is not 1/L: sigma_K contraction bound does not apply")

    def step(theta, t):
        w = theta
        for _ in range(cfg.K):
            w = w - alpha * obj.grad_w(theta, w)
        return w

    with np.errstate(over="ignore", invalid="ignore"):
        return _run(obj, step, theta0, cfg, theta_star, "gradient", alpha, notes)


def config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
