"""Logit probabilities, panel likelihoods and weighted-logit scores.

The vectorised routines work on a :class:`Design`, an alternative-major view
of the panel restricted to the attributes a model uses.  Utilities for all
classes are computed at once from ``B`` of shape ``(K, S)``; classes are
processed in chunks so that temporaries stay around a few million entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import AlternativeRow, ChoicePanel, PersonRecord

PROB_FLOOR = 1e-300
LOG_FLOOR = float(np.log(PROB_FLOOR))
_CHUNK_ELEMENTS = 4_000_000


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


# -- single-observation API ------------------------------------------------

def _observation_arrays(observation, avail=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(observation, np.ndarray) or (
        isinstance(observation, Sequence) and observation and not isinstance(observation[0], AlternativeRow)
    ):
        x = np.atleast_2d(np.asarray(observation, dtype=float))
        av = np.ones(x.shape[0], dtype=bool) if avail is None else np.asarray(avail, dtype=bool)
        return x, av
    rows = list(observation)
    if not rows:
        raise ValueError("empty choice set")
    x = np.stack([np.asarray(r.attributes, dtype=float) for r in rows])
    av = np.array([r.available for r in rows], dtype=bool)
    return x, av


def logit_probabilities(beta, observation, avail=None) -> np.ndarray:
    """Choice probabilities over the available alternatives of one observation.

    ``observation`` is either a ``(J, K)`` attribute array (with an optional
    availability mask) or a sequence of :class:`AlternativeRow`.  The returned
    vector lists the available alternatives in their original order.
    """
    x, av = _observation_arrays(observation, avail)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if x.shape[1] != beta.size:
        raise ValueError(f"coefficient length {beta.size} does not match {x.shape[1]} attributes")
    if not np.all(np.isfinite(beta)):
        raise ValueError("coefficients must be finite")
    if not av.any():
        raise ValueError("empty choice set")
    v = x[av] @ beta
    v = v - v.max()
    e = np.exp(v)
    p = e / e.sum()
    return np.maximum(p, PROB_FLOOR)


def panel_log_likelihood(beta, person: PersonRecord) -> float:
    """Log-probability of a person's whole choice sequence."""
    total = 0.0
    for rows in person.observations:
        av_rows = [r for r in rows if r.available]
        p = logit_probabilities(beta, av_rows)
        k = next(i for i, r in enumerate(av_rows) if r.chosen)
        total += max(float(np.log(p[k])), LOG_FLOOR)
    return total


# -- vectorised core -------------------------------------------------------

@dataclass(frozen=True)
class Design:
    """Attribute layout used by the vectorised kernel.

    ``X3`` is stored alternative-major, ``(J, O, K)``, so that utilities for
    ``S`` classes form a ``(J, O, S)`` stack and reductions over alternatives
    are elementwise operations on contiguous ``(O, S)`` slabs.
    """

    names: tuple[str, ...]
    X3: np.ndarray  # (J, O, K)
    X2T: np.ndarray  # (K, J * O), transposed flat view of X3
    mask: np.ndarray | None  # (J, O, 1): 0 where available, -inf otherwise; None if all available
    chosen: np.ndarray  # (O,)
    chosen_flat: np.ndarray  # (O,) row of the chosen alternative in the flat (J * O) layout
    obs_person: np.ndarray  # (O,)
    starts: np.ndarray  # (N,) first observation of each person
    n_persons: int
    n_obs: int
    n_alts: int

    @property
    def n_attributes(self) -> int:
        return self.X3.shape[2]


def design_for(panel: ChoicePanel, names: Sequence[str]) -> Design:
    """Design arrays for the named attributes, cached on the panel."""
    names = tuple(names)
    cache = panel._design_cache
    if names in cache:
        return cache[names]
    idx = panel.attribute_index(names)
    O, J = panel.n_obs, panel.n_alternatives
    X = np.where(panel.present[..., None], panel.X[..., idx], 0.0)
    mask = None
    if not panel.avail.all():
        mask = np.ascontiguousarray(np.where(panel.avail, 0.0, -np.inf).T[:, :, None])
    X3 = np.ascontiguousarray(X.transpose(1, 0, 2))
    d = Design(
        names=names,
        X3=X3,
        X2T=np.ascontiguousarray(X3.reshape(J * O, len(idx)).T),
        mask=mask,
        chosen=np.asarray(panel.chosen),
        chosen_flat=np.asarray(panel.chosen) * O + np.arange(O),
        obs_person=np.asarray(panel.obs_person),
        starts=np.asarray(panel.obs_start[:-1]),
        n_persons=panel.n_persons,
        n_obs=O,
        n_alts=J,
    )
    cache[names] = d
    return d


def _chunk_size(design: Design) -> int:
    return max(1, _CHUNK_ELEMENTS // max(1, design.n_obs * design.n_alts))


def _chosen_log_probs(design: Design, B: np.ndarray, want_probs: bool = False):
    """Log-probability of the chosen alternative, (O, S), and optionally P as (J, O, S)."""
    V = np.matmul(design.X3, B)  # (J, O, S)
    if design.mask is not None:
        V += design.mask
    V -= V.max(axis=0)
    v_ch = np.take(V.reshape(-1, V.shape[2]), design.chosen_flat, axis=0)
    E = np.exp(V, out=V)
    den = E.sum(axis=0)
    logp = v_ch - np.log(den)
    np.maximum(logp, LOG_FLOOR, out=logp)
    if not want_probs:
        return logp, None
    E /= den
    return logp, E


def class_log_likelihoods(design: Design, B: np.ndarray) -> np.ndarray:
    """(N, S) matrix of per-person panel log-likelihoods for each class column of ``B``."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    S = B.shape[1]
    out = np.empty((design.n_persons, S))
    step = _chunk_size(design)
    for a in range(0, S, step):
        logp, _ = _chosen_log_probs(design, B[:, a : a + step])
        out[:, a : a + step] = np.add.reduceat(logp, design.starts, axis=0)
    return out


def weighted_class_scores(design: Design, B: np.ndarray, W: np.ndarray, gradient: bool = True):
    """Weighted logit objective summed over classes, with per-class scores.

    Parameters
    ----------
    B : (K, S) coefficient columns.
    W : (N, S) nonnegative person weights.

    Returns
    -------
    value : float
        ``sum_n sum_s W[n, s] * log f(y_n | B[:, s])``.
    G : (K, S) array or None
        Column s is the gradient of the class-s term with respect to ``B[:, s]``.
    """
    B = np.asarray(B, dtype=float)
    W = np.asarray(W, dtype=float)
    K, S = B.shape
    value = 0.0
    G = np.zeros((K, S)) if gradient else None
    step = _chunk_size(design)
    JO = design.n_alts * design.n_obs
    for a in range(0, S, step):
        b = slice(a, a + step)
        Wobs = W[design.obs_person, b]
        logp, P = _chosen_log_probs(design, B[:, b], want_probs=gradient)
        value += float(np.sum(Wobs * logp))
        if gradient:
            # residual (y - P) weighted per observation, then X^T r summed over alternatives
            P *= -Wobs
            P2 = P.reshape(JO, -1)
            P2[design.chosen_flat] += Wobs
            G[:, b] = design.X2T @ P2
    return value, G


# -- public objective APIs -------------------------------------------------

def weighted_logit_objective(beta, panel: ChoicePanel, weights, names: Sequence[str] | None = None):
    """Weighted single-class logit log-likelihood and its analytic score.

    ``weights`` holds one nonnegative weight per person.  ``names`` selects
    the attributes matching ``beta`` (all panel attributes by default).
    """
    names = panel.attribute_names if names is None else tuple(names)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape != (panel.n_persons,):
        raise ValueError("one weight per person is required")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    d = design_for(panel, names)
    value, G = weighted_class_scores(d, np.asarray(beta, dtype=float).reshape(-1, 1), w[:, None])
    return value, G[:, 0]


def person_mixture_log_likelihoods(model, panel: ChoicePanel, logf: np.ndarray | None = None) -> np.ndarray:
    if logf is None:
        logf = class_log_likelihoods(design_for(panel, model.attribute_names), model.coefficient_matrix())
    with np.errstate(divide="ignore"):
        lg = np.log(model.gamma)
    return logsumexp(logf + lg[None, :], axis=1)


def check_simplex(gamma, tol: float = 1e-8) -> None:
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma < -tol) or abs(gamma.sum() - 1.0) > tol:
        raise ValueError(f"class masses are off the simplex (sum {gamma.sum():.12g})")


def mixture_log_likelihood(model, panel: ChoicePanel) -> float:
    """Observed-data log-likelihood of a finite mixture of logits."""
    check_simplex(model.gamma)
    ll = person_mixture_log_likelihoods(model, panel)
    total = float(np.sum(ll))
    if not np.isfinite(total):
        raise FloatingPointError("mixture log-likelihood is not finite")
    return total
