"""Standard errors from a numerical Hessian of the observed-data log-likelihood.

The gradient of the mixture log-likelihood is analytic: by the Fisher
identity it equals the posterior-weighted class scores, and for class masses
written as a softmax of ``eta`` (largest class as reference) it is
``sum_n (q_ns - gamma_s)``.  The Hessian is obtained by central differences
of that gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import ChoicePanel
from .kernel import class_log_likelihoods, design_for, weighted_class_scores
from .model import MixtureModel

log = logging.getLogger(__name__)

BOUNDARY = "boundary"
SMALL_MASS = "small-mass"


@dataclass(frozen=True)
class StandardErrors:
    names: tuple[str, ...]
    values: np.ndarray
    se: np.ndarray  # NaN where no standard error is reported
    flags: tuple[str, ...]
    hessian_ok: bool

    @property
    def t_stats(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.values / self.se

    def as_dict(self) -> dict:
        return {
            n: {"value": float(v), "se": None if not np.isfinite(s) else float(s), "flag": f or None}
            for n, v, s, f in zip(self.names, self.values, self.se, self.flags)
        }


def _labels(model: MixtureModel) -> list[str]:
    sup = model.support
    out = list(model.fixed_names)
    if sup.variant == "unstructured":
        out += [f"{d}[{s}]" for d in sup.random_dims for s in range(sup.n_classes)]
    elif sup.variant == "equal":
        out += [f"{d}.lo" for d in sup.random_dims]
        out += [f"{d}.hi" for d, m in zip(sup.random_dims, sup.counts) if m > 1]
    else:
        out += [f"{d}[{m}]" for d, c in zip(sup.random_dims, sup.counts) for m in range(c)]
    return out


def observed_gradient(layout, theta_beta, gamma, design):
    """Gradient of the observed log-likelihood in (support/fixed, eta) coordinates."""
    B = layout.coefficients(theta_beta)
    logf = class_log_likelihoods(design, B)
    from .em import posterior_from_logf

    q, ll_n = posterior_from_logf(logf, gamma)
    _, G = weighted_class_scores(design, B, q)
    g_beta = layout.chain(G)
    g_eta = q.sum(axis=0) - q.shape[0] * gamma
    return float(ll_n.sum()), g_beta, g_eta


def standard_errors(fit, panel: ChoicePanel, rel_step: float = 1e-5, bound_tol: float = 1e-8, mass_tol: float = 1e-6) -> StandardErrors:
    """Per-parameter standard errors for a fitted model.

    Parameters at an active bound and classes with mass below ``mass_tol``
    are flagged and held fixed; they receive no standard error.  If the
    negative Hessian of the remaining parameters is not positive definite,
    all standard errors are omitted with a warning.
    """
    from .em import _Layout

    model: MixtureModel = getattr(fit, "model", fit)
    spec = fit.spec
    design = design_for(panel, model.attribute_names)
    layout = _Layout(model, spec)
    theta = layout.x0.copy()
    gamma = model.gamma.copy()
    S = gamma.size
    ref = int(np.argmax(gamma))
    eta_idx = np.array([s for s in range(S) if s != ref], dtype=int)
    with np.errstate(divide="ignore"):
        eta = np.log(gamma[eta_idx]) - np.log(gamma[ref])

    nb = theta.size
    tol = bound_tol * np.maximum(1.0, np.abs(theta))
    at_bound = (np.abs(theta - layout.lower) <= tol) | (np.abs(theta - layout.upper) <= tol)
    small = gamma[eta_idx] < mass_tol
    free = np.concatenate([~at_bound, ~small])
    values = np.concatenate([theta, gamma])

    def grad(x):
        tb, e = x[:nb], x[nb:]
        full = np.zeros(S)
        full[eta_idx] = e
        g = np.exp(full - full.max())
        g /= g.sum()
        _, gb, ge = observed_gradient(layout, tb, g, design)
        return np.concatenate([gb, ge[eta_idx]])

    x0 = np.concatenate([theta, eta])
    idx = np.flatnonzero(free & np.isfinite(x0))
    H = np.zeros((idx.size, idx.size))
    for col, i in enumerate(idx):
        h = rel_step * max(1.0, abs(x0[i]))
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        H[:, col] = (grad(xp)[idx] - grad(xm)[idx]) / (2 * h)
    H = 0.5 * (H + H.T)

    flags = [BOUNDARY if b else "" for b in at_bound]
    gflags = [""] * S
    for j, s in enumerate(eta_idx):
        if small[j]:
            gflags[s] = SMALL_MASS
    se_beta = np.full(nb, np.nan)
    se_gamma = np.full(S, np.nan)
    ok = True
    try:
        np.linalg.cholesky(-H)
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        ok = False
        log.warning("negative Hessian is not positive definite; standard errors omitted")
    if ok:
        full_cov = np.zeros((x0.size, x0.size))
        full_cov[np.ix_(idx, idx)] = cov
        se_beta[:] = np.where(free[:nb], np.sqrt(np.clip(np.diag(full_cov)[:nb], 0, None)), np.nan)
        # delta method: d gamma_i / d eta_j = gamma_i (1[i = j] - gamma_j)
        Jac = np.zeros((S, eta_idx.size))
        for j, s in enumerate(eta_idx):
            Jac[:, j] = -gamma * gamma[s]
            Jac[s, j] += gamma[s]
        C_eta = full_cov[nb:, nb:]
        C_g = Jac @ C_eta @ Jac.T
        se_gamma = np.sqrt(np.clip(np.diag(C_g), 0, None))
        for s in range(S):
            if gflags[s]:
                se_gamma[s] = np.nan
    names = tuple(_labels(model) + [f"gamma[{s}]" for s in range(S)])
    return StandardErrors(names, values, np.concatenate([se_beta, se_gamma]), tuple(flags + gflags), ok)
