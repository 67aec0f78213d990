"""Post-estimation analysis of fitted mixture models."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ChoicePanel
from .kernel import mixture_log_likelihood
from .model import MixtureModel
from .support import enumerate_support

TIME_UNITS = {"hour": 1.0, "hours": 1.0, "hr": 1.0, "h": 1.0, "minute": 60.0, "minutes": 60.0, "min": 60.0}


def info_criteria(ll: float, P: int, N_persons: int) -> tuple[float, float]:
    """Return ``(BIC, AIC)``; the BIC sample size is the number of persons.

    >>> bic, aic = info_criteria(-10521, 7, 17700)
    >>> round(aic), round(bic, 1)
    (21056, 21110.5)
    """
    if P < 0 or N_persons < 1:
        raise ValueError("P must be nonnegative and N_persons positive")
    aic = 2.0 * P - 2.0 * ll
    bic = -2.0 * ll + P * math.log(N_persons)
    return bic, aic


def holdout_log_likelihood(model: MixtureModel, holdout: ChoicePanel) -> float:
    """Mixture log-likelihood of persons not used in estimation."""
    missing = [n for n in model.attribute_names if n not in holdout.attribute_names]
    if missing:
        raise ValueError(f"holdout panel lacks model attributes: {missing}")
    return mixture_log_likelihood(model, holdout)


# -- marginals ----------------------------------------------------------------

def _dim_index(model: MixtureModel, dims) -> list[int]:
    names = model.support.random_dims
    if isinstance(dims, str):
        dims = [dims]
    out = []
    for d in dims:
        if isinstance(d, (int, np.integer)):
            out.append(int(d))
        elif d in names:
            out.append(names.index(d))
        else:
            raise KeyError(f"{d!r} is not a random dimension of the model")
    if not out:
        raise ValueError("at least one dimension is required")
    return out


def marginal_pmf(model: MixtureModel, dims) -> tuple[np.ndarray, np.ndarray]:
    """Probability mass function of the selected random dimensions.

    Returns ``(coords, masses)``: ``coords`` has one row per distinct
    projected support point (sorted lexicographically) and ``masses`` sums the
    class masses sharing that projection.
    """
    idx = _dim_index(model, dims)
    pts = enumerate_support(model.support)[idx].T  # (S, d)
    coords, inv = np.unique(pts, axis=0, return_inverse=True)
    masses = np.bincount(inv.reshape(-1), weights=model.gamma, minlength=len(coords))
    return coords, masses


def marginal_cdf(model: MixtureModel, dim) -> tuple[np.ndarray, np.ndarray]:
    """Sorted support points of one dimension and the cumulative mass at each."""
    coords, masses = marginal_pmf(model, [dim])
    cum = np.cumsum(masses)
    cum[-1] = 1.0 if abs(cum[-1] - 1.0) < 1e-9 else cum[-1]
    return coords[:, 0], cum


def step_cdf(points, masses) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    masses = np.asarray(masses, dtype=float)
    order = np.argsort(points, kind="stable")
    x, m = points[order], masses[order]
    ux, inv = np.unique(x, return_inverse=True)
    return ux, np.cumsum(np.bincount(inv, weights=m))


def ks_distance(points, masses, cdf) -> float:
    """Kolmogorov-Smirnov distance between a discrete distribution and a continuous CDF."""
    x, F = step_cdf(points, masses)
    G = np.asarray(cdf(x), dtype=float)
    left = np.concatenate([[0.0], F[:-1]])
    return float(max(np.max(np.abs(F - G)), np.max(np.abs(left - G))))


def discrete_median(points, masses) -> float:
    """Smallest support point whose cumulative mass reaches one half."""
    x, F = step_cdf(points, masses)
    return float(x[np.searchsorted(F, 0.5 - 1e-12)])


# -- willingness to pay -------------------------------------------------------

@dataclass(frozen=True)
class WtpDistribution:
    points: np.ndarray  # currency per hour, sorted
    masses: np.ndarray
    mean: float
    median: float
    time_dim: str
    cost_coefficient: float
    income: float | None

    def as_rows(self):
        return [(float(p), float(m)) for p, m in zip(self.points, self.masses)]


def _coefficient(model: MixtureModel, name: str) -> np.ndarray:
    """Per-class value of a coefficient, fixed or random."""
    if name in model.fixed_names:
        return np.full(model.n_classes, model.fixed[model.fixed_names.index(name)])
    if name in model.support.random_dims:
        return enumerate_support(model.support)[model.support.random_dims.index(name)]
    raise KeyError(f"{name!r} is not a model coefficient")


def wtp_distribution(fit_or_model, time_dim: str, cost: str, cost_income: str | None = None, income: float | None = None, time_unit: str = "hour") -> WtpDistribution:
    """Distribution of the value of a time attribute in currency per hour.

    The cost sensitivity is ``b[cost] + b[cost_income] * income`` and must be
    the same in every class.  ``time_unit`` names the unit the time attribute
    was measured in; minute-denominated coefficients are scaled by 60.
    """
    model = getattr(fit_or_model, "model", fit_or_model)
    if time_unit not in TIME_UNITS:
        raise ValueError(f"unknown time unit {time_unit!r}")
    bc = _coefficient(model, cost)
    if cost_income is not None:
        if income is None:
            raise ValueError("an income level is needed with an income-interacted cost term")
        bc = bc + _coefficient(model, cost_income) * income
    if np.ptp(bc) > 1e-12:
        raise ValueError("the cost coefficient must be identical across classes")
    c = float(bc[0])
    if c == 0.0:
        raise ZeroDivisionError("cost coefficient at this income is zero")
    bt = _coefficient(model, time_dim)
    vot = bt / c * TIME_UNITS[time_unit]
    pts, mass = step_cdf(vot, model.gamma)
    mass = np.diff(np.concatenate([[0.0], mass]))
    return WtpDistribution(
        points=pts,
        masses=mass,
        mean=float(np.dot(vot, model.gamma)),
        median=discrete_median(pts, mass),
        time_dim=time_dim,
        cost_coefficient=c,
        income=income,
    )


# -- moments ------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureMoments:
    names: tuple[str, ...]
    mean: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray  # NaN marks an undefined entry


def mixture_moments(model: MixtureModel) -> MixtureMoments:
    B = enumerate_support(model.support)
    g = model.gamma
    mean = B @ g
    D = B - mean[:, None]
    cov = (D * g[None, :]) @ D.T
    cov = 0.5 * (cov + cov.T)
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[np.outer(sd, sd) == 0] = np.nan
    for k in range(len(sd)):
        if sd[k] > 0:
            corr[k, k] = 1.0
    return MixtureMoments(model.support.random_dims, mean, cov, corr)


def covariance_rmse(estimate, truth) -> float:
    d = np.asarray(estimate) - np.asarray(truth)
    return float(np.sqrt(np.mean(d * d)))


# -- non-attendance -----------------------------------------------------------

@dataclass(frozen=True)
class NonattendanceRow:
    dimension: str
    mass_near_zero: float
    pinned_at_bound: bool
    flagged: bool


def nonattendance_report(fit_or_model, epsilon: float, asc_dims: Sequence[str] = (), asc_threshold: float = -5.0, flag_mass: float = 0.0):
    """Mass near zero sensitivity per random dimension, and large negative constants.

    A dimension is flagged when more than ``flag_mass`` of its marginal mass
    sits within ``epsilon`` of zero.  ``asc_dims`` names random constants
    whose share below ``asc_threshold`` is reported as a choice-set signal.
    """
    model = getattr(fit_or_model, "model", fit_or_model)
    sup = model.support
    rows = []
    for k, name in enumerate(sup.random_dims):
        coords, masses = marginal_pmf(model, [k])
        near = np.abs(coords[:, 0]) <= epsilon
        mass = float(masses[near].sum()) if np.isfinite(epsilon) else float(masses.sum())
        lo, hi = sup.bounds[k] if sup.bounds else (-np.inf, np.inf)
        pinned = bool(np.any(((coords[:, 0] == lo) | (coords[:, 0] == hi)) & (masses > 0) & ((lo == 0) | (hi == 0))))
        rows.append(NonattendanceRow(name, min(mass, 1.0), pinned, mass > flag_mass))
    asc = {}
    for name in asc_dims:
        coords, masses = marginal_pmf(model, [name])
        asc[name] = float(masses[coords[:, 0] < asc_threshold].sum())
    return rows, asc


# -- CSV writers --------------------------------------------------------------

def write_rows(path, header, rows) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_pmf_csv(path, model: MixtureModel, dims) -> None:
    coords, masses = marginal_pmf(model, dims)
    names = [model.support.random_dims[i] for i in _dim_index(model, dims)]
    write_rows(path, names + ["mass"], [list(c) + [m] for c, m in zip(coords, masses)])


def write_cdf_csv(path, model: MixtureModel, dim) -> None:
    x, F = marginal_cdf(model, dim)
    write_rows(path, [str(dim), "cumulative"], zip(x, F))
