"""Bound-constrained maximisation on top of scipy's L-BFGS-B.

scipy supplies the quasi-Newton engine.  This wrapper handles maximisation
framing, projection of the start point, best-point tracking and a status
derived from the projected gradient rather than scipy's message strings.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max-iters"
LINE_SEARCH_FAILURE = "line-search-failure"


@dataclass
class BoundedProblem:
    """Maximise ``fun`` subject to ``lower <= x <= upper``.

    ``fun(x)`` must return ``(value, gradient)``.
    """

    fun: Callable[[np.ndarray], tuple[float, np.ndarray]]
    x0: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    gtol: float = 1e-6
    xtol: float = 0.0
    max_iter: int = 500

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n = self.x0.size
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the parameter length")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if self.gtol <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive")

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass
class SolveReport:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    status: str
    n_evals: int = 0
    initial_value: float = float("nan")
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def projected_gradient(x, g, lower, upper) -> np.ndarray:
    """Gradient-projection step ``P(x + g) - x`` for a maximisation problem."""
    return np.clip(x + g, lower, upper) - x


def maximize(problem: BoundedProblem) -> SolveReport:
    """Maximise a smooth objective over a box with L-BFGS-B."""
    x0 = problem.project(problem.x0)
    f0, g0 = problem.fun(x0)
    g0 = np.asarray(g0, dtype=float)
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise ValueError("objective is not finite at the initial point")

    best = {"x": x0.copy(), "f": float(f0), "g": g0.copy()}
    n_evals = [1]

    def neg(x):
        f, g = problem.fun(x)
        n_evals[0] += 1
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(x)
        if f > best["f"]:
            best.update(x=x.copy(), f=f, g=g.copy())
        return -f, -g

    bounds = list(zip(np.where(np.isfinite(problem.lower), problem.lower, None), np.where(np.isfinite(problem.upper), problem.upper, None)))
    pg0 = np.max(np.abs(projected_gradient(x0, g0, problem.lower, problem.upper)), initial=0.0)
    if pg0 <= problem.gtol:
        return SolveReport(x0, float(f0), float(pg0), 0, CONVERGED, 1, float(f0), _active(x0, problem))

    res = minimize(
        neg,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": problem.max_iter, "maxfun": 20 * problem.max_iter + 50, "gtol": problem.gtol, "ftol": 1e-15, "maxcor": 20},
    )
    x = problem.project(best["x"])
    pg = float(np.max(np.abs(projected_gradient(x, best["g"], problem.lower, problem.upper)), initial=0.0))
    if pg <= problem.gtol:
        status = CONVERGED
    elif res.nit >= problem.max_iter or n_evals[0] >= 20 * problem.max_iter + 50:
        status = MAX_ITERS
    else:
        status = LINE_SEARCH_FAILURE
    if status != CONVERGED:
        log.debug("inner solve stopped with %s after %d iterations (|pg| = %.3g)", status, res.nit, pg)
    return SolveReport(x, best["f"], pg, int(res.nit), status, n_evals[0], float(f0), _active(x, problem))


def _active(x, problem: BoundedProblem) -> np.ndarray:
    return (x <= problem.lower) | (x >= problem.upper)
