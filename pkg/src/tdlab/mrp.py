"""Finite Markov reward processes and Bellman machinery.

States transition according to a row-stochastic matrix ``P``; ``R[s]`` is the
reward collected when leaving state ``s``. Terminal states self-loop with zero
reward so that their value is identically zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from os import PathLike
from typing import Any, Mapping

import numpy as np

STOCHASTIC_TOL = 1e-12


class InvalidMrpError(ValueError):
    """Raised when an MRP document or array set violates its invariants."""


class ReducibleChainError(ValueError):
    """Raised when a chain has no unique stationary distribution."""


def _frozen(a: Any, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Mrp:
    P: np.ndarray
    R: np.ndarray
    gamma: float
    terminal: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim == 2 and P.shape[0] == P.shape[1]:
            sums = P.sum(axis=1)
            close = np.abs(sums - 1.0) <= STOCHASTIC_TOL
            # renormalise rows that are stochastic up to rounding only
            P[close] = P[close] / sums[close, None]
        object.__setattr__(self, "P", _frozen(P))
        object.__setattr__(self, "R", _frozen(self.R))
        object.__setattr__(self, "gamma", float(self.gamma))
        term = self.terminal
        if term is None:
            term = np.zeros(len(self.R), dtype=bool)
        object.__setattr__(self, "terminal", _frozen(term, dtype=bool))

    @property
    def n(self) -> int:
        return int(self.R.shape[0])

    @property
    def nonterminal(self) -> np.ndarray:
        return ~self.terminal

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Mrp":
        """Build and validate an MRP from ``{"n", "P", "R", "gamma", "terminal"}``."""
        for key in ("P", "R", "gamma"):
            if key not in doc:
                raise InvalidMrpError(f"missing field '{key}'")
        mrp = cls(P=doc["P"], R=doc["R"], gamma=doc["gamma"], terminal=doc.get("terminal"))
        if "n" in doc and int(doc["n"]) != mrp.n:
            raise InvalidMrpError(f"field 'n' is {doc['n']} but R has {mrp.n} entries")
        problems = validate_mrp(mrp)
        if problems:
            raise InvalidMrpError("; ".join(problems))
        return mrp

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "P": self.P.tolist(),
            "R": self.R.tolist(),
            "gamma": self.gamma,
            "terminal": [bool(t) for t in self.terminal],
        }


def load_mrp(path: str | PathLike) -> Mrp:
    with open(path) as fh:
        return Mrp.from_dict(json.load(fh))


def validate_mrp(m: Mrp) -> list[str]:
    """Return a list of violated invariants; empty when ``m`` is valid."""
    problems = []
    P, R, term = m.P, m.R, m.terminal
    n = R.shape[0] if R.ndim == 1 else -1
    if R.ndim != 1:
        problems.append("R must be a vector")
    if P.ndim != 2 or P.shape != (n, n):
        problems.append(f"P has shape {P.shape}, expected ({n}, {n})")
        return problems
    if term.shape != (n,):
        problems.append(f"terminal has shape {term.shape}, expected ({n},)")
        return problems
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(R))):
        problems.append("non-finite entries")
    if np.any(P < 0):
        problems.append("negative transition probability")
    bad_rows = np.flatnonzero(np.abs(P.sum(axis=1) - 1.0) > STOCHASTIC_TOL)
    if bad_rows.size:
        problems.append(f"row not stochastic: {bad_rows.tolist()}")
    for s in np.flatnonzero(term):
        if P[s, s] != 1.0:
            problems.append(f"terminal state {s} does not self-loop")
        if R[s] != 0.0:
            problems.append(f"terminal reward nonzero at state {s}")
    if not 0.0 < m.gamma < 1.0:
        problems.append(f"gamma {m.gamma} outside (0, 1)")
    return problems


def _check_len(m: Mrp, v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (m.n,):
        raise ValueError(f"{what} has shape {v.shape}, expected ({m.n},)")
    return v


def bellman_apply(m: Mrp, v) -> np.ndarray:
    """One application of the Bellman operator, ``R + gamma * P @ v``."""
    v = _check_len(m, v, "value vector")
    return m.R + m.gamma * (m.P @ v)


def true_values(m: Mrp) -> np.ndarray:
    """Unique fixed point of the Bellman operator, ``(I - gamma P)^{-1} R``."""
    v = np.linalg.solve(np.eye(m.n) - m.gamma * m.P, m.R)
    v[m.terminal] = 0.0
    return v


def restart_chain(m: Mrp, restart=None) -> np.ndarray:
    """Transition matrix with every entry into a terminal state sent to ``restart``.

    Terminal rows are replaced by the restart distribution as well, so the
    returned matrix is row-stochastic and puts no mass on terminal states.
    """
    term = m.terminal
    if not term.any():
        return np.array(m.P)
    if restart is None:
        raise ValueError("a restart distribution is required when terminal states exist")
    restart = _check_len(m, restart, "restart distribution")
    if np.any(restart < 0) or restart[term].any() or restart.sum() <= 0:
        raise ValueError("restart must be a nonnegative distribution over non-terminal states")
    restart = restart / restart.sum()
    Pt = np.array(m.P)
    into_terminal = Pt[:, term].sum(axis=1)
    Pt[:, term] = 0.0
    Pt += np.outer(into_terminal, restart)
    Pt[term] = restart
    return Pt


def stationary_distribution(m: Mrp, restart=None) -> np.ndarray:
    """Stationary distribution of the episodic-restart chain.

    Raises :class:`ReducibleChainError` if the invariant distribution is not unique.
    """
    Pt = restart_chain(m, restart)
    keep = np.flatnonzero(m.nonterminal)
    Q = Pt[np.ix_(keep, keep)]
    k = len(keep)
    G = np.eye(k) - Q.T
    sv = np.linalg.svd(G, compute_uv=False)
    if k > 1 and sv[-2] < 1e-10:
        raise ReducibleChainError("chain has more than one stationary distribution")
    # replace one balance equation by the normalisation constraint
    A = np.vstack([G, np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    sol = np.clip(sol, 0.0, None)
    d = np.zeros(m.n)
    d[keep] = sol / sol.sum()
    return d


def check_distribution(m: Mrp, d) -> np.ndarray:
    """Validate an update distribution (weights need not sum to one)."""
    d = _check_len(m, d, "update distribution")
    if np.any(d < 0) or not np.any(d > 0):
        raise ValueError("update distribution must be nonnegative with some positive weight")
    if np.any(d[m.terminal] != 0):
        raise ValueError("update distribution puts weight on a terminal state")
    return d


def weighted_norm(v, d) -> float:
    """``sqrt(sum_s d(s) v(s)^2)``."""
    v = np.asarray(v, dtype=float)
    d = np.asarray(d, dtype=float)
    if v.shape != d.shape:
        raise ValueError(f"dimension mismatch: {v.shape} vs {d.shape}")
    return float(np.sqrt(np.sum(d * v * v)))
