"""EM estimation of finite-mixture logit models.

Each iteration evaluates the per-person, per-class panel log-likelihoods
once; the observed-data log-likelihood and the posterior class memberships
both come from that matrix.  The M-step updates the class masses in closed
form and then maximises the weighted logit over the support parameters and
the shared fixed coefficients in a single bound-constrained problem.

Equal-interval grids are optimised in terms of their two extreme corners
``lo = alpha`` and ``hi = alpha + delta``.  This is a linear
reparameterisation of ``(alpha, delta)`` under which a sign constraint on the
whole grid becomes a pair of box bounds.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ChoicePanel
from .kernel import Design, class_log_likelihoods, design_for, logsumexp, weighted_class_scores
from .model import MixtureModel, ModelSpec
from .optimize import BoundedProblem, SolveReport, maximize
from .support import EQUAL, UNEQUAL, UNSTRUCTURED, MixtureSupport, class_multi_indices, equal_grid_loadings

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimationConfig:
    """Convergence and numerical settings for :func:`fit`.

    ``tol`` is an absolute threshold on the per-iteration log-likelihood gain;
    ``paper_convergence`` replaces it by 0.1.  ``empty_class_threshold`` is
    multiplied by the number of persons.
    """

    tol: float = 1e-6
    paper_convergence: bool = False
    max_iter: int = 2000
    seed: int = 0
    start: str = "random"
    empty_class_threshold: float = 1e-8
    gamma_floor: float = 1e-12
    inner_max_iter: int = 500
    inner_gtol: float = 1e-6
    standard_errors: bool = False

    def __post_init__(self):
        if self.tol <= 0 or self.empty_class_threshold <= 0 or self.inner_gtol <= 0:
            raise ValueError("thresholds must be positive")
        if self.gamma_floor < 0 or self.gamma_floor >= 1:
            raise ValueError("gamma_floor must lie in [0, 1)")
        if self.max_iter < 0 or self.inner_max_iter < 1:
            raise ValueError("iteration limits must be nonnegative")
        if self.start not in ("random",):
            raise ValueError(f"unknown starting-value policy {self.start!r}")

    @property
    def threshold(self) -> float:
        return 0.1 if self.paper_convergence else self.tol


@dataclass(frozen=True)
class MStepInfo:
    reports: tuple[SolveReport, ...] = ()
    frozen: np.ndarray | None = None

    @property
    def hit_max_iters(self) -> bool:
        return any(r.status == "max-iters" for r in self.reports)


@dataclass(frozen=True, eq=False)
class FitResult:
    model: MixtureModel
    spec: ModelSpec
    ll_trajectory: np.ndarray
    iterations: int
    posteriors: np.ndarray
    converged: bool
    n_params: int
    n_persons: int
    bic: float
    aic: float
    frozen: np.ndarray
    wall_time: float = 0.0
    seed: int | None = None
    inner_warnings: int = 0
    standard_errors: object | None = None

    @property
    def log_likelihood(self) -> float:
        return float(self.ll_trajectory[-1])


# -- E-step -----------------------------------------------------------------

def _log_gamma(gamma):
    with np.errstate(divide="ignore"):
        return np.log(gamma)


def posterior_from_logf(logf: np.ndarray, gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior memberships and per-person mixture log-likelihoods."""
    a = logf + _log_gamma(gamma)[None, :]
    ll_n = logsumexp(a, axis=1)
    if not np.all(np.isfinite(ll_n)):
        bad = int(np.flatnonzero(~np.isfinite(ll_n))[0])
        raise EstimationError(f"person {bad} has zero likelihood under every class")
    q = np.exp(a - ll_n[:, None])
    q /= q.sum(axis=1, keepdims=True)
    return q, ll_n


def e_step(model: MixtureModel, panel: ChoicePanel) -> np.ndarray:
    """Posterior class-membership probabilities, shape (N, S)."""
    design = design_for(panel, model.attribute_names)
    logf = class_log_likelihoods(design, model.coefficient_matrix())
    return posterior_from_logf(logf, model.gamma)[0]


def m_step_gamma(q: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Class masses as the average posterior membership, floored then renormalised."""
    q = np.asarray(q, dtype=float)
    g = q.sum(axis=0) / q.shape[0]
    if floor > 0:
        g = np.maximum(g, floor)
    return g / g.sum()


# -- parameter layouts ------------------------------------------------------

class _Layout:
    """Packs the free parameters of one M-step into a vector and back."""

    def __init__(self, model: MixtureModel, spec: ModelSpec, active: np.ndarray | None = None):
        self.model = model
        self.spec = spec
        sup = model.support
        self.variant = sup.variant
        self.F = len(model.fixed_names)
        self.Kr = sup.n_random
        self.S = sup.n_classes
        fb = np.array(spec.fixed_bounds, dtype=float).reshape(-1, 2)
        rb = np.array(spec.random_bounds, dtype=float).reshape(-1, 2)
        lo, hi, x0 = [fb[:, 0]], [fb[:, 1]], [model.fixed]
        if self.variant == UNSTRUCTURED:
            self.active = np.ones(self.S, dtype=bool) if active is None else active
            self.base = sup.points.copy()
            n_act = int(self.active.sum())
            x0.append(sup.points[:, self.active].ravel())
            lo.append(np.repeat(rb[:, 0], n_act))
            hi.append(np.repeat(rb[:, 1], n_act))
        elif self.variant == EQUAL:
            counts = np.asarray(sup.counts)
            self.H = equal_grid_loadings(sup.counts)  # (S, Kr)
            self.wide = counts > 1
            x0 += [sup.alpha, (sup.alpha + sup.delta)[self.wide]]
            lo += [rb[:, 0], rb[self.wide, 0]]
            hi += [rb[:, 1], rb[self.wide, 1]]
        else:
            self.multi = class_multi_indices(sup.counts)
            self.counts = sup.counts
            x0 += list(sup.lambdas)
            lo += [np.full(m, rb[k, 0]) for k, m in enumerate(sup.counts)]
            hi += [np.full(m, rb[k, 1]) for k, m in enumerate(sup.counts)]
        self.x0 = np.concatenate(x0) if x0 else np.zeros(0)
        self.lower = np.concatenate(lo)
        self.upper = np.concatenate(hi)

    def random_block(self, theta) -> np.ndarray:
        r = theta[self.F :]
        if self.Kr == 0:
            return np.zeros((0, self.S))
        if self.variant == UNSTRUCTURED:
            B = self.base.copy()
            B[:, self.active] = r.reshape(self.Kr, -1)
            return B
        if self.variant == EQUAL:
            lo = r[: self.Kr]
            hi = lo.copy()
            hi[self.wide] = r[self.Kr :]
            return (lo[None, :] + self.H * (hi - lo)[None, :]).T
        out = np.empty((self.Kr, self.S))
        pos = 0
        for k, m in enumerate(self.counts):
            out[k] = r[pos : pos + m][self.multi[:, k]]
            pos += m
        return out

    def coefficients(self, theta) -> np.ndarray:
        top = np.repeat(theta[: self.F, None], self.S, axis=1)
        if self.Kr == 0:
            return top
        return np.vstack([top, self.random_block(theta)])

    def chain(self, G) -> np.ndarray:
        gf = G[: self.F].sum(axis=1)
        Gr = G[self.F :]
        if self.variant == UNSTRUCTURED:
            return np.concatenate([gf, Gr[:, self.active].ravel()])
        if self.variant == EQUAL:
            ghi = (self.H.T * Gr).sum(axis=1)
            glo = Gr.sum(axis=1) - ghi
            return np.concatenate([gf, glo, ghi[self.wide]])
        parts = [gf]
        for k, m in enumerate(self.counts):
            parts.append(np.bincount(self.multi[:, k], weights=Gr[k], minlength=m))
        return np.concatenate(parts)

    def to_model(self, theta, gamma) -> MixtureModel:
        fixed = theta[: self.F].copy()
        sup = self.model.support
        r = theta[self.F :]
        if self.variant == UNSTRUCTURED:
            new = MixtureSupport.unstructured(sup.random_dims, self.random_block(theta), sup.bounds)
        elif self.variant == EQUAL:
            lo = r[: self.Kr].copy()
            hi = lo.copy()
            hi[self.wide] = r[self.Kr :]
            gamma = np.asarray(gamma, dtype=float).copy()
            flip = hi < lo
            if flip.any():
                G = gamma.reshape(sup.counts)
                for k in np.flatnonzero(flip):
                    G = np.flip(G, axis=k)
                    lo[k], hi[k] = hi[k], lo[k]
                gamma = np.ascontiguousarray(G).reshape(-1)
            new = MixtureSupport.equal_grid(sup.random_dims, lo, hi - lo, sup.counts, sup.bounds)
        else:
            lams, perms, pos = [], [], 0
            for m in self.counts:
                lam = r[pos : pos + m]
                p = np.argsort(lam, kind="stable")
                lams.append(lam[p].copy())
                perms.append(p)
                pos += m
            gamma = np.asarray(gamma, dtype=float).reshape(self.counts)[np.ix_(*perms)].reshape(-1)
            new = MixtureSupport.unequal_grid(sup.random_dims, lams, sup.bounds)
        return MixtureModel(self.model.fixed_names, fixed, new, gamma)


def _spec_from_model(model: MixtureModel) -> ModelSpec:
    sup = model.support
    cons = {}
    for name, b in zip(sup.random_dims, sup.bounds):
        if np.isfinite(b).any():
            cons[name] = b
    if sup.variant == UNSTRUCTURED:
        return ModelSpec(model.fixed_names, sup.random_dims, UNSTRUCTURED, n_classes=sup.n_classes, constraints=cons)
    return ModelSpec(model.fixed_names, sup.random_dims, sup.variant, counts=sup.counts, constraints=cons)


# -- M-step objective -------------------------------------------------------

def m_step_objective(model: MixtureModel, panel: ChoicePanel, q: np.ndarray) -> tuple[float, dict]:
    """Weighted logit objective of the M-step and its gradient in natural parameters.

    Returns ``(value, grads)`` where ``grads`` always has ``"fixed"`` and, per
    variant, ``"points"`` (unstructured, K_r x S), ``"alpha"`` and ``"delta"``
    (equal grid) or ``"lambdas"`` (unequal grid, list of arrays).
    """
    design = design_for(panel, model.attribute_names)
    value, G = weighted_class_scores(design, model.coefficient_matrix(), q)
    F = len(model.fixed_names)
    sup = model.support
    grads = {"fixed": G[:F].sum(axis=1)}
    Gr = G[F:]
    if sup.variant == UNSTRUCTURED:
        grads["points"] = Gr
    elif sup.variant == EQUAL:
        H = equal_grid_loadings(sup.counts)
        grads["alpha"] = Gr.sum(axis=1)
        grads["delta"] = (H.T * Gr).sum(axis=1)
    else:
        multi = class_multi_indices(sup.counts)
        grads["lambdas"] = [np.bincount(multi[:, k], weights=Gr[k], minlength=m) for k, m in enumerate(sup.counts)]
    return value, grads


def equal_grid_objective(alpha, delta, fixed, model: MixtureModel, panel: ChoicePanel, q):
    """M-step objective for an equal grid as a function of ``(alpha, delta, fixed)``."""
    sup = MixtureSupport.equal_grid(model.support.random_dims, alpha, delta, model.support.counts, model.support.bounds)
    m = MixtureModel(model.fixed_names, fixed, sup, model.gamma)
    value, g = m_step_objective(m, panel, q)
    return value, g["alpha"], g["delta"], g["fixed"]


def unequal_grid_objective(lambdas, fixed, model: MixtureModel, panel: ChoicePanel, q):
    sup = MixtureSupport.unequal_grid(model.support.random_dims, lambdas, model.support.bounds)
    m = MixtureModel(model.fixed_names, fixed, sup, model.gamma)
    value, g = m_step_objective(m, panel, q)
    return value, g["lambdas"], g["fixed"]


def unstructured_objective(points, fixed, model: MixtureModel, panel: ChoicePanel, q):
    sup = MixtureSupport.unstructured(model.support.random_dims, points, model.support.bounds)
    m = MixtureModel(model.fixed_names, fixed, sup, model.gamma)
    value, g = m_step_objective(m, panel, q)
    return value, g["points"], g["fixed"]


# -- M-steps ----------------------------------------------------------------

def _solve(design: Design, layout: _Layout, W, config: EstimationConfig) -> SolveReport:
    def fun(theta):
        value, G = weighted_class_scores(design, layout.coefficients(theta), W)
        return value, layout.chain(G)

    problem = BoundedProblem(fun, layout.x0, layout.lower, layout.upper, gtol=config.inner_gtol, max_iter=config.inner_max_iter)
    return maximize(problem)


def _check_variant(model, variant):
    if model.support.variant != variant:
        raise TypeError(f"expected a {variant} support, got {model.support.variant}")


def m_step_unstructured(q, panel: ChoicePanel, model: MixtureModel, spec: ModelSpec | None = None, config: EstimationConfig | None = None):
    """Update an unstructured support and the fixed coefficients.

    Classes whose posterior mass is below the empty-class threshold keep
    their previous coordinates.  Without fixed coefficients each class is an
    independent weighted logit; with them, one joint problem is solved.
    """
    _check_variant(model, UNSTRUCTURED)
    config = config or EstimationConfig()
    spec = spec or _spec_from_model(model)
    q = np.asarray(q, dtype=float)
    design = design_for(panel, model.attribute_names)
    mass = q.sum(axis=0)
    active = mass >= config.empty_class_threshold * q.shape[0]
    frozen = ~active
    if model.support.n_random == 0 or not active.any():
        if model.support.n_random == 0 and model.fixed.size:
            layout = _Layout(model, spec, active)
            rep = _solve(design, layout, q, config)
            return layout.to_model(rep.x, model.gamma), MStepInfo((rep,), frozen)
        return model, MStepInfo((), frozen)
    if model.fixed.size:
        layout = _Layout(model, spec, active)
        rep = _solve(design, layout, q, config)
        return layout.to_model(rep.x, model.gamma), MStepInfo((rep,), frozen)

    points = model.support.points.copy()
    reports = []
    for s in np.flatnonzero(active):
        sub_sup = MixtureSupport.unstructured(model.support.random_dims, points[:, [s]], model.support.bounds)
        sub = MixtureModel((), np.zeros(0), sub_sup, np.ones(1))
        layout = _Layout(sub, spec)
        rep = _solve(design, layout, q[:, [s]], config)
        points[:, s] = rep.x
        reports.append(rep)
    new = MixtureSupport.unstructured(model.support.random_dims, points, model.support.bounds)
    return MixtureModel(model.fixed_names, model.fixed.copy(), new, model.gamma), MStepInfo(tuple(reports), frozen)


def m_step_equal_grid(q, panel: ChoicePanel, model: MixtureModel, spec: ModelSpec | None = None, config: EstimationConfig | None = None):
    """Update ``(alpha, delta)`` and the fixed coefficients of an equal grid."""
    _check_variant(model, EQUAL)
    config = config or EstimationConfig()
    spec = spec or _spec_from_model(model)
    design = design_for(panel, model.attribute_names)
    layout = _Layout(model, spec)
    rep = _solve(design, layout, np.asarray(q, dtype=float), config)
    return layout.to_model(rep.x, model.gamma), MStepInfo((rep,), np.zeros(model.n_classes, dtype=bool))


def m_step_unequal_grid(q, panel: ChoicePanel, model: MixtureModel, spec: ModelSpec | None = None, config: EstimationConfig | None = None):
    """Update the per-dimension point sets and fixed coefficients of an unequal grid.

    Point sets come back sorted; ``gamma`` is re-indexed to follow them.
    """
    _check_variant(model, UNEQUAL)
    config = config or EstimationConfig()
    spec = spec or _spec_from_model(model)
    design = design_for(panel, model.attribute_names)
    layout = _Layout(model, spec)
    rep = _solve(design, layout, np.asarray(q, dtype=float), config)
    return layout.to_model(rep.x, model.gamma), MStepInfo((rep,), np.zeros(model.n_classes, dtype=bool))


_M_STEPS = {UNSTRUCTURED: m_step_unstructured, EQUAL: m_step_equal_grid, UNEQUAL: m_step_unequal_grid}


# -- MNL and starting values ------------------------------------------------

def fit_mnl(panel: ChoicePanel, spec: ModelSpec | None = None, config: EstimationConfig | None = None, names=None):
    """Single-class logit with unit weights.

    Every coefficient of ``spec`` (fixed and random) is treated as fixed.
    Returns ``(beta, report)`` with ``beta`` ordered as
    ``spec.attribute_names``.
    """
    config = config or EstimationConfig()
    if spec is None:
        spec = ModelSpec.mnl(panel.attribute_names if names is None else names)
    mspec = ModelSpec.mnl(spec.attribute_names, spec.constraints)
    start = MixtureModel.single_class(mspec.fixed, np.zeros(len(mspec.fixed)))
    design = design_for(panel, mspec.fixed)
    layout = _Layout(start, mspec)
    rep = _solve(design, layout, np.ones((panel.n_persons, 1)), config)
    return rep.x.copy(), rep


def _power_of_ten_above(b: float) -> float:
    b = abs(float(b))
    if b == 0.0:
        return 1.0
    return 10.0 ** (np.floor(np.log10(b)) + 1)


def _draw_range(top: float, bound: tuple[float, float]) -> tuple[float, float]:
    lo, hi = max(-top, bound[0]), min(top, bound[1])
    if lo <= hi:
        return lo, hi
    if np.isfinite(bound[0]) and np.isfinite(bound[1]):
        return bound
    edge = bound[0] if np.isfinite(bound[0]) else bound[1]
    return (edge, edge + top) if np.isfinite(bound[0]) else (edge - top, edge)


def initial_values(panel: ChoicePanel, spec: ModelSpec, seed: int, mnl_beta=None) -> MixtureModel:
    """Random starting model.

    Masses are uniform on the simplex, fixed coefficients start at their
    single-class estimates, and each support coordinate is uniform on
    ``(-10**d, 10**d)`` with ``10**d`` the smallest power of ten above the
    magnitude of that attribute's single-class estimate (intersected with
    any bound on the attribute).
    """
    rng = np.random.default_rng(seed)
    if mnl_beta is None:
        mnl_beta, _ = fit_mnl(panel, spec)
    F = len(spec.fixed)
    fixed = np.clip(mnl_beta[:F], *np.array(spec.fixed_bounds, dtype=float).reshape(-1, 2).T) if F else np.zeros(0)
    ranges = [_draw_range(_power_of_ten_above(b), spec.bound(n)) for n, b in zip(spec.random, mnl_beta[F:])]
    S = spec.n_classes
    gamma = rng.dirichlet(np.ones(S)) if S > 1 else np.ones(1)
    bounds = spec.random_bounds
    if spec.variant == UNSTRUCTURED:
        pts = np.array([rng.uniform(lo, hi, S) for lo, hi in ranges]).reshape(len(ranges), S)
        sup = MixtureSupport.unstructured(spec.random, pts, bounds)
    elif spec.variant == EQUAL:
        ab = np.array([np.sort(rng.uniform(lo, hi, 2)) for lo, hi in ranges]).reshape(-1, 2)
        alpha, top = ab[:, 0], ab[:, 1]
        delta = np.where(np.asarray(spec.counts) > 1, top - alpha, 0.0)
        sup = MixtureSupport.equal_grid(spec.random, alpha, delta, spec.counts, bounds)
    else:
        lams = [np.sort(rng.uniform(lo, hi, m)) for (lo, hi), m in zip(ranges, spec.counts)]
        sup = MixtureSupport.unequal_grid(spec.random, lams, bounds)
    return MixtureModel(spec.fixed, fixed, sup, gamma)


def _check_spec_model(spec: ModelSpec, model: MixtureModel):
    sup = model.support
    if model.fixed_names != spec.fixed or sup.random_dims != spec.random or sup.variant != spec.variant:
        raise ValueError("initial model does not match the model spec")
    if sup.is_grid and sup.counts != spec.counts:
        raise ValueError("initial model grid counts do not match the model spec")
    if not sup.is_grid and sup.n_classes != spec.n_classes:
        raise ValueError("initial model class count does not match the model spec")


# -- driver -----------------------------------------------------------------

def fit(panel: ChoicePanel, spec: ModelSpec, config: EstimationConfig | None = None, init: MixtureModel | None = None, callback=None) -> FitResult:
    """Estimate a finite-mixture logit by EM.

    Stops when the log-likelihood gain of one iteration falls below the
    configured threshold or after ``max_iter`` iterations.
    """
    from .analytics import info_criteria

    config = config or EstimationConfig()
    t0 = time.perf_counter()
    model = initial_values(panel, spec, config.seed) if init is None else init
    _check_spec_model(spec, model)
    # re-attach spec bounds to the support so saved models carry them
    model = replace(model, support=replace(model.support, bounds=spec.random_bounds))
    design = design_for(panel, model.attribute_names)
    m_step = _M_STEPS[spec.variant]
    N = panel.n_persons
    traj: list[float] = []
    frozen = np.zeros(model.n_classes, dtype=bool)
    converged = False
    warnings = 0
    it = 0
    while True:
        logf = class_log_likelihoods(design, model.coefficient_matrix())
        try:
            q, ll_n = posterior_from_logf(logf, model.gamma)
        except EstimationError as exc:
            raise EstimationError(f"iteration {it}: {exc}") from None
        ll = float(ll_n.sum())
        if not np.isfinite(ll):
            raise EstimationError(f"iteration {it}: log-likelihood is not finite")
        traj.append(ll)
        if callback is not None:
            callback(it, ll, model)
        if len(traj) > 1:
            gain = traj[-1] - traj[-2]
            if gain < -1e-9:
                log.warning("iteration %d: log-likelihood fell by %.3g", it, -gain)
            if gain < config.threshold:
                converged = True
                break
        if it >= config.max_iter:
            break
        gamma = m_step_gamma(q, config.gamma_floor)
        model, info = m_step(q, panel, replace(model, gamma=gamma), spec, config)
        frozen = info.frozen if info.frozen is not None else frozen
        if info.hit_max_iters:
            warnings += 1
            log.warning("iteration %d: inner solve hit its iteration cap; accepting the improved point", it)
        it += 1

    P = spec.n_parameters
    bic, aic = info_criteria(traj[-1], P, N)
    if not converged:
        log.warning("EM stopped at the iteration cap (%d) without meeting the convergence threshold", config.max_iter)
    result = FitResult(
        model=model,
        spec=spec,
        ll_trajectory=np.asarray(traj),
        iterations=it,
        posteriors=q,
        converged=converged,
        n_params=P,
        n_persons=N,
        bic=bic,
        aic=aic,
        frozen=np.asarray(frozen, dtype=bool),
        wall_time=time.perf_counter() - t0,
        seed=config.seed if init is None else None,
        inner_warnings=warnings,
    )
    if config.standard_errors:
        from .stderr import standard_errors

        result = replace(result, standard_errors=standard_errors(result, panel))
    return result
