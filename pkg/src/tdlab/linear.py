"""Linear value approximation with the weighted squared loss.

With features ``Phi`` and diagonal weights ``D = diag(d)`` the per-iteration
objective is ``H(theta, w) = 1/2 ||R + gamma P Phi theta - Phi w||_D^2`` and

    grad_w H = Mw w - Mtheta theta - b,
    Mw = Phi^T D Phi,  Mtheta = gamma Phi^T D P Phi,  b = Phi^T D R.

Exact minimisation in ``w`` gives the linear recurrence
``theta' - theta* = A (theta - theta*)`` with ``A = Mw^{-1} Mtheta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .mrp import Mrp, check_distribution

SINGULAR_TOL = 1e-10


class SingularSystemError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMap:
    Phi: np.ndarray

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=float)
        if Phi.ndim == 1:
            Phi = Phi[:, None]
        if Phi.ndim != 2:
            raise ValueError("Phi must be an n x m matrix")
        Phi.setflags(write=False)
        object.__setattr__(self, "Phi", Phi)

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def m(self) -> int:
        return self.Phi.shape[1]

    def problems(self, mrp: Mrp | None = None) -> list[str]:
        out = []
        sv = np.linalg.svd(self.Phi, compute_uv=False)
        if self.m > self.n or sv.min() <= SINGULAR_TOL:
            out.append("Phi is not full column rank")
        if mrp is not None:
            if self.n != mrp.n:
                out.append(f"Phi has {self.n} rows but the MRP has {mrp.n} states")
            elif np.any(self.Phi[mrp.terminal] != 0):
                out.append("Phi has nonzero rows at terminal states")
        return out


def as_features(phi) -> FeatureMap:
    return phi if isinstance(phi, FeatureMap) else FeatureMap(phi)


@dataclass(frozen=True)
class LinearTdSystem:
    Mw: np.ndarray
    Mtheta: np.ndarray
    A: np.ndarray
    b: np.ndarray
    theta_star: np.ndarray

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def fixed_point_residual(self) -> float:
        return float(np.linalg.norm((self.Mw - self.Mtheta) @ self.theta_star - self.b))


class ConvergencePrediction(NamedTuple):
    converges: bool
    rho: float


def _smallest_sv(M: np.ndarray) -> float:
    return float(np.linalg.svd(M, compute_uv=False).min())


def build_system(mrp: Mrp, phi, d) -> LinearTdSystem:
    """Assemble ``Mw``, ``Mtheta``, ``b``, the iteration matrix and the fixed point.

    Weights ``d`` may be unnormalised; ``A`` and ``theta_star`` do not depend
    on their scale.
    """
    phi = as_features(phi)
    d = check_distribution(mrp, d)
    if phi.n != mrp.n:
        raise ValueError(f"Phi has {phi.n} rows but the MRP has {mrp.n} states")
    Phi = phi.Phi
    DPhi = d[:, None] * Phi
    Mw = Phi.T @ DPhi
    Mw = 0.5 * (Mw + Mw.T)
    Mtheta = mrp.gamma * (DPhi.T @ (mrp.P @ Phi))
    b = DPhi.T @ mrp.R
    if _smallest_sv(Mw) <= SINGULAR_TOL:
        raise SingularSystemError("features not independent under d")
    if _smallest_sv(Mw - Mtheta) <= SINGULAR_TOL:
        raise SingularSystemError("no unique fixed point")
    lu = scipy.linalg.lu_factor(Mw)
    A = scipy.linalg.lu_solve(lu, Mtheta)
    theta_star = np.linalg.solve(Mw - Mtheta, b)
    for arr in (Mw, Mtheta, A, b, theta_star):
        arr.setflags(write=False)
    return LinearTdSystem(Mw=Mw, Mtheta=Mtheta, A=A, b=b, theta_star=theta_star)


def _vec(x, m: int, what: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (m,):
        raise ValueError(f"{what} has shape {x.shape}, expected ({m},)")
    return x


def grad_w(sys: LinearTdSystem, theta, w) -> np.ndarray:
    theta = _vec(theta, sys.m, "theta")
    w = _vec(w, sys.m, "w")
    return sys.Mw @ w - sys.Mtheta @ theta - sys.b


def objective_value(mrp: Mrp, phi, d, theta, w) -> float:
    phi = as_features(phi)
    d = np.asarray(d, dtype=float)
    if d.shape != (mrp.n,) or phi.n != mrp.n:
        raise ValueError("dimension mismatch between MRP, features and weights")
    theta = _vec(theta, phi.m, "theta")
    w = _vec(w, phi.m, "w")
    resid = mrp.R + mrp.gamma * (mrp.P @ (phi.Phi @ theta)) - phi.Phi @ w
    return 0.5 * float(np.sum(d * resid * resid))


def exact_step(sys: LinearTdSystem, theta) -> np.ndarray:
    """``argmin_w H(theta, w) = Mw^{-1} (Mtheta theta + b)``."""
    theta = _vec(theta, sys.m, "theta")
    return np.linalg.solve(sys.Mw, sys.Mtheta @ theta + sys.b)


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(np.abs(eig)))


def predict_convergence(sys: LinearTdSystem) -> ConvergencePrediction:
    rho = spectral_radius(sys.A)
    return ConvergencePrediction(converges=rho < 1.0, rho=rho)


def projection_matrix(phi, d) -> np.ndarray:
    """Weighted projection ``Phi (Phi^T D Phi)^{-1} Phi^T D`` onto span(Phi)."""
    Phi = as_features(phi).Phi
    d = np.asarray(d, dtype=float)
    if d.shape != (Phi.shape[0],):
        raise ValueError("dimension mismatch between features and weights")
    PhiTD = Phi.T * d
    G = PhiTD @ Phi
    if _smallest_sv(G) <= SINGULAR_TOL:
        raise SingularSystemError("features not independent under d")
    return Phi @ np.linalg.solve(G, PhiTD)
