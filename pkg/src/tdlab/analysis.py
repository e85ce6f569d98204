"""Convergence predictions, the two-state counter-example, and bound checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .linear import FeatureMap, SingularSystemError, build_system, spectral_radius
from .mrp import Mrp, ReducibleChainError, stationary_distribution
from .objectives import ControlProblem, ControlQuadratic, ForceConstants
from .solvers import Trajectory

BOUND_TOL = 1e-8
BOUNDARY_BAND = 1e-6
# relative distance below which rounding noise dominates a step ratio
RATIO_RESOLUTION = 1e-6


def sigma_k(kappa: float, eta: float, K: int) -> float:
    """Per-outer-step contraction factor of ``K`` gradient steps with step ``1/L``.

    ``sigma_K^2 = (1 - kappa)^K (1 - eta^2) + eta^2``. Decreases toward
    ``eta`` as ``K`` grows when ``eta < 1``; equals 1 when ``kappa = 0``.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    if K < 1:
        raise ValueError("K must be at least 1")
    e2 = eta * eta
    return float(np.sqrt((1.0 - kappa) ** K * (1.0 - e2) + e2))


@dataclass(frozen=True)
class CounterExampleParams:
    epsilon: float
    gamma: float
    d1: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.d1 < 1.0:
            raise ValueError(f"d1 must lie in [0, 1), got {self.d1}")


def counterexample_build(p: CounterExampleParams) -> tuple[Mrp, FeatureMap, np.ndarray]:
    """Two non-terminal states with features 1 and 2 plus an absorbing terminal.

    ``s1 -> s2`` surely; ``s2`` stays with probability ``1 - epsilon`` and
    terminates otherwise. All rewards are zero.
    """
    eps = p.epsilon
    P = [[0.0, 1.0, 0.0],
         [0.0, 1.0 - eps, eps],
         [0.0, 0.0, 1.0]]
    mrp = Mrp(P=P, R=[0.0, 0.0, 0.0], gamma=p.gamma, terminal=[False, False, True])
    phi = FeatureMap(np.array([[1.0], [2.0], [0.0]]))
    d = np.array([p.d1, 1.0 - p.d1, 0.0])
    return mrp, phi, d


COUNTEREXAMPLE_RESTART = np.array([1.0, 0.0, 0.0])


def counterexample_gamma_threshold(epsilon: float) -> float:
    """Exact TD with equal weights on both states converges iff ``gamma < 5 / (6 - 4 eps)``."""
    return 5.0 / (6.0 - 4.0 * epsilon)


def counterexample_d1_threshold(epsilon: float, gamma: float) -> float:
    """Exact TD converges iff the weight on ``s1`` is below this value.

    May exceed 1 (every weighting is safe), e.g. for small ``gamma``.
    """
    c = 4.0 * gamma * (1.0 - epsilon)
    return (4.0 - c) / (3.0 + 2.0 * gamma - c)


def counterexample_rate(epsilon: float, gamma: float, d1: float) -> float:
    """Scalar iteration factor ``Mtheta / Mw`` for weights ``(d1, 1 - d1)``."""
    d2 = 1.0 - d1
    return gamma * (2.0 * d1 + 4.0 * (1.0 - epsilon) * d2) / (d1 + 4.0 * d2)


def classify(rho: float, band: float = BOUNDARY_BAND) -> str:
    """``"converge"``, ``"diverge"``, or ``"boundary"`` within ``band`` of 1."""
    if abs(rho - 1.0) < band:
        return "boundary"
    return "converge" if rho < 1.0 else "diverge"


@dataclass(frozen=True)
class ContractionReport:
    predicted_sigma: float
    max_observed_ratio: float
    bound_satisfied: bool
    margin: float
    n_ratios: int

    def to_dict(self) -> dict:
        return asdict(self)


def resolution_floor(traj: Trajectory) -> float:
    """Smallest distance at which a step ratio is resolved to about 1e-9.

    Iterates carry absolute rounding error of order ``1e-16 * ||theta*||``, so
    ratios of distances much below ``1e-6 * max(1, ||theta*||)`` are noise.
    """
    scale = 1.0 if traj.theta_star is None else max(1.0, float(np.linalg.norm(traj.theta_star)))
    return RATIO_RESOLUTION * scale


def verify_contraction(traj: Trajectory, fc: ForceConstants, K: int | None = None,
                       min_distance: float | None = None) -> ContractionReport:
    """Compare the largest observed step ratio with the predicted contraction factor.

    Exact-solver trajectories are checked against ``eta``; gradient-solver
    trajectories against ``sigma_k(kappa, eta, K)``. ``K`` defaults to the
    trajectory's own inner step count. Only steps starting farther than
    ``min_distance`` from the fixed point count (default
    :func:`resolution_floor`).
    """
    if traj.distances is None:
        raise ValueError("trajectory has no distances to a fixed point")
    if K is None:
        K = traj.K
    if min_distance is None:
        min_distance = resolution_floor(traj)
    predicted = fc.eta if traj.method == "exact" or K is None else sigma_k(fc.kappa, fc.eta, K)
    ratios = traj.ratios_above(min_distance)
    observed = float(ratios.max()) if ratios.size else 0.0
    return ContractionReport(
        predicted_sigma=float(predicted),
        max_observed_ratio=observed,
        bound_satisfied=observed <= predicted + BOUND_TOL,
        margin=float(predicted - observed),
        n_ratios=int(ratios.size),
    )


@dataclass(frozen=True)
class ControlLipschitzReport:
    max_ratio: float
    bound: float
    slack: float
    violations: int
    samples: int
    stepwise_bound: float

    @property
    def satisfied(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {**asdict(self), "satisfied": self.satisfied}


def control_lipschitz_bounds(cp: ControlProblem) -> tuple[float, float]:
    """Two upper bounds on the Lipschitz constant of ``grad_w H`` in ``theta``.

    Returns ``(bound, stepwise)``. ``bound`` is
    ``gamma * sum_s d(s) E_{s'|s}[max_a' ||phi(s', a')||^2]``, i.e. ``gamma``
    times the next-state expectation of the squared largest feature norm,
    scaled by the total weight. ``stepwise`` keeps the per-pair factors,
    ``gamma * sum_s d(s) sum_a pi(a|s) ||phi(s, a)|| E_{s'|s}[max_a' ||phi(s', a')||]``.
    """
    norms = np.linalg.norm(cp.features, axis=2)
    top = norms.max(axis=1)
    bound = cp.gamma * float(cp.d @ (cp.P @ top**2))
    stepwise = cp.gamma * float(np.sum(cp.d[:, None] * cp.pi * norms * (cp.P @ top)[:, None]))
    return bound, stepwise


def control_lipschitz_check(cp: ControlProblem, samples: int = 1000, rng_seed: int = 0,
                            probe_box: Sequence[float] = (-10.0, 10.0)) -> ControlLipschitzReport:
    """Sample ``(theta1, theta2, w)`` and compare gradient-difference ratios to the bound."""
    obj = ControlQuadratic(cp)
    bound, stepwise = control_lipschitz_bounds(cp)
    lo, hi = probe_box
    rng = np.random.default_rng(rng_seed)
    m = cp.m
    t1, t2, w = rng.uniform(lo, hi, size=(3, samples, m))
    dist = np.linalg.norm(t1 - t2, axis=1)
    for i in np.flatnonzero(dist < 1e-12):
        while dist[i] < 1e-12:
            t2[i] = rng.uniform(lo, hi, size=m)
            dist[i] = np.linalg.norm(t1[i] - t2[i])
    diff = obj.grad_w_batch(t1, w) - obj.grad_w_batch(t2, w)
    ratios = np.linalg.norm(diff, axis=1) / dist
    worst = float(ratios.max()) if samples else 0.0
    violations = int(np.sum(ratios > bound + BOUND_TOL))
    return ControlLipschitzReport(max_ratio=worst, bound=bound, slack=bound - worst,
                                  violations=violations, samples=samples, stepwise_bound=stepwise)


@dataclass(frozen=True)
class SafeDistributionResult:
    d: np.ndarray
    rho: float
    found: bool
    evaluated: int
    stationary_rho: float | None

    def to_dict(self) -> dict:
        return {"d": self.d.tolist(), "rho": self.rho, "found": self.found,
                "evaluated": self.evaluated, "stationary_rho": self.stationary_rho}


def _rho(mrp: Mrp, phi, d) -> float | None:
    try:
        return spectral_radius(build_system(mrp, phi, d).A)
    except SingularSystemError:
        return None


def safe_distribution_search(mrp: Mrp, phi, trials: int = 1000, rng_seed: int = 0,
                             restart=None) -> SafeDistributionResult:
    """Randomised search for an update distribution with ``rho(A) < 1``.

    A heuristic, not an optimiser: candidates are the stationary distribution
    (when it exists) plus ``trials`` Dirichlet draws on the non-terminal
    simplex. Returns the candidate with the smallest spectral radius.
    """
    keep = np.flatnonzero(mrp.nonterminal)
    rng = np.random.default_rng(rng_seed)
    best_d, best_rho, evaluated = None, np.inf, 0
    stat_rho = None
    try:
        d_stat = stationary_distribution(mrp, restart)
    except (ReducibleChainError, ValueError):
        d_stat = None
    if d_stat is not None:
        stat_rho = _rho(mrp, phi, d_stat)
        if stat_rho is not None:
            best_d, best_rho, evaluated = d_stat, stat_rho, 1
    for _ in range(trials):
        d = np.zeros(mrp.n)
        d[keep] = rng.dirichlet(np.ones(len(keep)))
        rho = _rho(mrp, phi, d)
        if rho is None:
            continue
        evaluated += 1
        if rho < best_rho:
            best_d, best_rho = d, rho
    if best_d is None:
        raise SingularSystemError("features not independent under any sampled distribution")
    return SafeDistributionResult(d=best_d, rho=float(best_rho), found=bool(best_rho < 1.0),
                                  evaluated=evaluated, stationary_rho=stat_rho)


def format_table(rows: Sequence[Sequence], headers: Sequence[str]) -> str:
    """Right-aligned plain-text table."""
    def fmt(x):
        if isinstance(x, bool) or x is None:
            return str(x)
        if isinstance(x, (float, np.floating)):
            return f"{x:.6g}"
        return str(x)

    cells = [[fmt(x) for x in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)
