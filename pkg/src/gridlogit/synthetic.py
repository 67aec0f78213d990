"""Synthetic panels for the three Monte Carlo designs.

Each person gets an independent random stream spawned from one
``SeedSequence``, so a panel is a pure function of ``(scenario, seed)`` and
person ``n``'s draws do not depend on how many persons come after it.

Notation ``N(a, b2)`` in the design tables is read as mean ``a`` and
variance ``b2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .data import ChoicePanel

EXPERIMENT1_KINDS = ("normal", "lognormal", "mixture")

EXP1_ALTS = ("walk", "bike", "car", "transit")
EXP1_ATTRS = ("asc_bike", "asc_car", "asc_transit", "tt", "cost")
EXP1_ASC = (-3.50, 2.50, 0.50)
EXP1_COST = -1.80

EXP2_ALTS = EXP1_ALTS
EXP2_ATTRS = ("asc_bike", "asc_car", "asc_transit", "ivtt", "ovtt", "cost")
EXP2_ASC = (-3.50, -1.50, -2.00)
EXP2_COST = -1.80
EXP2_MEAN = np.array([-18.0, -54.0])
EXP2_COV = np.array([[16.20, 6.48], [6.48, 32.4]])

EXP3_ALTS = ("1", "2", "3")
EXP3_ATTRS = ("price", "opcost", "hybrid", "electric", "premium")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticScenario:
    """Generator settings.

    ``scale`` multiplies the noiseless utilities (0 gives pure noise) and
    ``noise=False`` drops the Gumbel term; both are diagnostic switches.
    """

    experiment: int = 1
    n_persons: int = 1000
    n_obs: int = 10
    kind: str = "normal"
    seed: int = 0
    scale: float = 1.0
    noise: bool = True

    def __post_init__(self):
        if self.experiment not in (1, 2, 3):
            raise ScenarioError(f"experiment must be 1, 2 or 3, got {self.experiment!r}")
        if self.n_persons < 1 or self.n_obs < 1:
            raise ScenarioError("n_persons and n_obs must be at least 1")
        if self.experiment == 1 and self.kind not in EXPERIMENT1_KINDS:
            raise ScenarioError(f"kind must be one of {EXPERIMENT1_KINDS}, got {self.kind!r}")
        if self.scale < 0:
            raise ScenarioError("scale must be nonnegative")


@dataclass
class TruthRecord:
    """What the generator knows but the data do not show."""

    scenario: SyntheticScenario
    coefficient_names: tuple[str, ...]
    beta: np.ndarray  # (N, K) per-person coefficients
    labels: np.ndarray | None  # mixture component per person
    utilities: np.ndarray  # (O, J) noiseless utilities before scaling
    gumbel: np.ndarray  # (O, J) noise draws actually added
    noiseless_choice: np.ndarray  # (O,) argmax of the noiseless utilities

    def replay_choices(self) -> np.ndarray:
        return np.argmax(self.scenario.scale * self.utilities + self.gumbel, axis=1)

    def to_json(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "coefficient_names": list(self.coefficient_names),
            "beta": self.beta.tolist(),
            "labels": None if self.labels is None else self.labels.tolist(),
            "noiseless_choice": self.noiseless_choice.tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class TruncatedMvnSpec:
    weights: np.ndarray
    means: np.ndarray  # (C, K)
    scales: np.ndarray  # (C, K)
    correlation: np.ndarray  # (K, K)
    lower: np.ndarray  # (K,)
    upper: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("mixture weights must lie on the simplex")
        R = np.asarray(self.correlation, dtype=float)
        if not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1.0):
            raise ValueError("correlation must be symmetric with unit diagonal")
        np.linalg.cholesky(R)

    def covariance(self, c: int) -> np.ndarray:
        D = np.diag(self.scales[c])
        return D @ self.correlation @ D

    def untruncated_mean(self) -> np.ndarray:
        return self.weights @ self.means


EXPERIMENT3_MIXTURE = TruncatedMvnSpec(
    weights=np.array([0.3, 0.4, 0.3]),
    means=np.array([
        [0.00, -0.14, -0.87, -1.30, 1.60],
        [-0.94, -1.01, 1.30, 0.07, -1.81],
        [-1.81, -1.74, 0.14, 1.45, 0.22],
    ]),
    scales=np.array([
        [0.20, 0.25, 0.23, 0.35, 0.25],
        [0.15, 0.10, 0.25, 0.35, 0.30],
        [0.40, 0.30, 0.20, 0.30, 0.40],
    ]),
    correlation=np.array([
        [1.0, 0.5, 0.3, 0.3, -0.5],
        [0.5, 1.0, 0.6, 0.6, -0.2],
        [0.3, 0.6, 1.0, 0.3, -0.4],
        [0.3, 0.6, 0.3, 1.0, 0.0],
        [-0.5, -0.2, -0.4, 0.0, 1.0],
    ]),
    lower=np.full(5, -np.inf),
    upper=np.array([0.0, 0.0, np.inf, np.inf, np.inf]),
)

_MIN_ACCEPTANCE = 1e-4
_PILOT = 100_000


def _truncated_component(rng, mean, chol, lower, upper, count):
    out = np.empty((count, mean.size))
    got = 0
    tried = 0
    accepted = 0
    while got < count:
        batch = max(16, 2 * (count - got))
        z = mean + rng.standard_normal((batch, mean.size)) @ chol.T
        ok = np.all((z > lower) & (z < upper), axis=1)
        tried += batch
        accepted += int(ok.sum())
        take = z[ok][: count - got]
        out[got : got + len(take)] = take
        got += len(take)
        if tried >= _PILOT and accepted < _MIN_ACCEPTANCE * tried:
            raise ValueError(
                f"rejection acceptance rate {accepted / tried:.2e} is below {_MIN_ACCEPTANCE}; the truncation box "
                "carries almost no mass under this component, review the mixture specification"
            )
    return out


def sample_truncated_mvn(spec: TruncatedMvnSpec, count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw from a mixture of box-truncated multivariate normals by rejection.

    Returns ``(draws, labels)`` with ``draws`` of shape ``(count, K)``.
    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    means = np.atleast_2d(spec.means)
    C, K = means.shape
    labels = rng.choice(C, size=count, p=spec.weights)
    draws = np.empty((count, K))
    for c in range(C):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        chol = np.linalg.cholesky(spec.covariance(c))
        draws[idx] = _truncated_component(rng, means[c], chol, spec.lower, spec.upper, idx.size)
    return draws, labels


def single_normal_spec(mean, cov, lower=None, upper=None) -> TruncatedMvnSpec:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sd = np.sqrt(np.diag(cov))
    K = mean.size
    return TruncatedMvnSpec(
        weights=np.ones(1),
        means=mean[None, :],
        scales=sd[None, :],
        correlation=cov / np.outer(sd, sd),
        lower=np.full(K, -np.inf) if lower is None else np.asarray(lower, dtype=float),
        upper=np.full(K, np.inf) if upper is None else np.asarray(upper, dtype=float),
    )


# -- per-person draws ------------------------------------------------------

def _exp1_beta_tt(rng, kind):
    if kind == "normal":
        return rng.normal(-0.9, np.sqrt(0.09)), None
    if kind == "lognormal":
        return -np.exp(rng.normal(-0.5, np.sqrt(0.03))), None
    label = int(rng.random() >= 0.7)
    if label == 0:
        return rng.normal(-0.45, np.sqrt(0.02)), label
    return rng.normal(-1.50, np.sqrt(0.09)), label


def _exp1_attributes(rng, T):
    tt_car = rng.uniform(10, 60, T)
    tt = np.stack([
        rng.uniform(1.5, 2.5, T) * tt_car,
        rng.uniform(1.0, 1.5, T) * tt_car,
        tt_car,
        rng.uniform(1.0, 2.5, T) * tt_car,
    ], axis=1)
    cost = np.zeros((T, 4))
    cost[:, 2] = rng.uniform(0, 20, T)
    cost[:, 3] = rng.uniform(0, 4, T)
    return tt, cost


def _asc_block(T, J):
    """(T, J, J-1) dummies for alternatives 2..J."""
    eye = np.eye(J)[:, 1:]
    return np.broadcast_to(eye, (T, J, J - 1))


def _exp2_attributes(rng, T):
    ivtt_car = rng.uniform(10, 50, T)
    ovtt_car = rng.uniform(0, 10, T)
    v_car = rng.lognormal(2.05, 0.63, T)
    s_car = v_car * ivtt_car / 60.0
    cost_car = rng.uniform(0, 5, T) + 0.6 * s_car
    v_walk = rng.lognormal(0.28, 0.43, T)
    v_bike = rng.lognormal(1.38, 0.38, T)
    ivtt = np.zeros((T, 4))
    ovtt = np.zeros((T, 4))
    cost = np.zeros((T, 4))
    ovtt[:, 0] = 60.0 * s_car / v_walk
    ovtt[:, 1] = 60.0 * s_car / v_bike
    ivtt[:, 2], ovtt[:, 2], cost[:, 2] = ivtt_car, ovtt_car, cost_car
    ivtt[:, 3] = rng.uniform(0.8, 1.5, T) * ivtt_car
    ovtt[:, 3] = rng.uniform(0, 15, T) + rng.uniform(0, 15, T)
    cost[:, 3] = rng.uniform(0, 4, T)
    return ivtt, ovtt, cost


def _exp3_attributes(rng, T):
    price = rng.uniform(1.5, 8.0, (T, 3))
    opcost = rng.uniform(0.5, 4.0, (T, 3))
    power = rng.choice(3, size=(T, 3), p=[1 / 3, 1 / 3, 1 / 3])
    premium = (rng.random((T, 3)) < 0.4).astype(float)
    return np.stack([price, opcost, (power == 1).astype(float), (power == 2).astype(float), premium], axis=2)


def generate(scenario: SyntheticScenario) -> tuple[ChoicePanel, TruthRecord]:
    """Generate a panel and its truth record for any experiment."""
    N, T = scenario.n_persons, scenario.n_obs
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(scenario.seed).spawn(N)]
    J = 3 if scenario.experiment == 3 else 4
    X_all, betas, labels, gumbels = [], [], [], []
    for rng in streams:
        if scenario.experiment == 1:
            b_tt, lab = _exp1_beta_tt(rng, scenario.kind)
            tt, cost = _exp1_attributes(rng, T)
            X = np.concatenate([_asc_block(T, 4), tt[..., None], cost[..., None]], axis=2)
            beta = np.array([*EXP1_ASC, b_tt, EXP1_COST])
        elif scenario.experiment == 2:
            b = rng.multivariate_normal(EXP2_MEAN, EXP2_COV, method="cholesky")
            lab = None
            ivtt, ovtt, cost = _exp2_attributes(rng, T)
            X = np.concatenate([_asc_block(T, 4), ivtt[..., None] / 60.0, ovtt[..., None] / 60.0, cost[..., None]], axis=2)
            beta = np.array([*EXP2_ASC, b[0], b[1], EXP2_COST])
        else:
            draw, lab_arr = sample_truncated_mvn(EXPERIMENT3_MIXTURE, 1, rng)
            beta, lab = draw[0], int(lab_arr[0])
            X = _exp3_attributes(rng, T)
        g = rng.gumbel(0.0, 1.0, (T, J)) if scenario.noise else np.zeros((T, J))
        X_all.append(X)
        betas.append(beta)
        labels.append(lab)
        gumbels.append(g)

    X = np.concatenate(X_all, axis=0)
    beta = np.stack(betas)
    gumbel = np.concatenate(gumbels, axis=0)
    obs_person = np.repeat(np.arange(N), T)
    V = np.einsum("ojk,ok->oj", X, beta[obs_person])
    chosen = np.argmax(scenario.scale * V + gumbel, axis=1)
    if scenario.experiment == 1:
        names, alts = EXP1_ATTRS, EXP1_ALTS
    elif scenario.experiment == 2:
        names, alts = EXP2_ATTRS, EXP2_ALTS
    else:
        names, alts = EXP3_ATTRS, EXP3_ALTS
    panel = ChoicePanel.from_arrays(X, chosen, np.full(N, T), names, alternative_labels=alts)
    lab = None if labels[0] is None else np.array(labels, dtype=int)
    truth = TruthRecord(scenario, names, beta, lab, V, gumbel, np.argmax(V, axis=1))
    return panel, truth


def gen_experiment1(kind: str = "normal", N: int = 1000, T: int = 10, seed: int = 0, **kw):
    return generate(SyntheticScenario(1, N, T, kind, seed, **kw))


def gen_experiment2(N: int = 1000, T: int = 10, seed: int = 0, **kw):
    return generate(SyntheticScenario(2, N, T, "normal", seed, **kw))


def gen_experiment3(N: int = 1000, T: int = 10, seed: int = 0, **kw):
    return generate(SyntheticScenario(3, N, T, "normal", seed, **kw))


def error_rate(panel: ChoicePanel, truth: TruthRecord) -> float:
    """Share of observations whose realised choice differs from the noiseless argmax."""
    if len(truth.noiseless_choice) != panel.n_obs:
        raise ValueError("truth record does not belong to this panel")
    return float(np.mean(panel.chosen != truth.noiseless_choice))


# -- true value-of-time distributions --------------------------------------

def experiment1_vot_cdf(kind: str):
    """CDF of the true value of time ($/hr) for an Experiment I design."""
    c = 60.0 / -EXP1_COST  # VOT = beta_tt * 60 / beta_cost, beta_cost < 0
    if kind == "normal":
        return stats.norm(-(-0.9) * c, np.sqrt(0.09) * c).cdf
    if kind == "lognormal":
        return stats.lognorm(s=np.sqrt(0.03), scale=c * np.exp(-0.5)).cdf
    if kind == "mixture":
        a = stats.norm(0.45 * c, np.sqrt(0.02) * c)
        b = stats.norm(1.50 * c, np.sqrt(0.09) * c)
        return lambda x: 0.7 * a.cdf(x) + 0.3 * b.cdf(x)
    raise ValueError(f"unknown kind {kind!r}")


def experiment2_correlation() -> float:
    return float(EXP2_COV[0, 1] / np.sqrt(EXP2_COV[0, 0] * EXP2_COV[1, 1]))


def experiment3_true_moments(n_draws: int = 400_000, seed: int = 12345) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean and covariance of the truncated-mixture taste distribution."""
    draws, _ = sample_truncated_mvn(EXPERIMENT3_MIXTURE, n_draws, seed)
    return draws.mean(axis=0), np.cov(draws, rowvar=False)


EXP3_PRINTED_MEAN = np.array([-0.919, -0.968, 0.301, 0.073, -0.178])
EXP3_PRINTED_COV = np.array([
    [0.47, 0.38, -0.21, -0.70, 0.25],
    [0.38, 0.34, -0.20, -0.59, 0.28],
    [-0.21, -0.20, 0.91, 0.48, -1.39],
    [-0.70, -0.59, 0.48, 1.36, -0.62],
    [0.25, 0.28, -1.39, -0.62, 2.25],
])
