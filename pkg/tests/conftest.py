import math

import numpy as np
import pytest

from gridlogit.data import ChoicePanel


def random_panel(N=12, T=4, J=3, K=3, seed=0, with_avail=False, names=None):
    """Small panel with choices drawn from a logit at a random coefficient."""
    rng = np.random.default_rng(seed)
    counts = rng.integers(1, T + 1, size=N)
    O = int(counts.sum())
    X = rng.normal(size=(O, J, K))
    avail = np.ones((O, J), dtype=bool)
    if with_avail and J > 2:
        drop = rng.random(O) < 0.4
        avail[drop, rng.integers(0, J, size=drop.sum())] = False
    beta = rng.normal(size=K)
    V = X @ beta + rng.gumbel(size=(O, J))
    V[~avail] = -np.inf
    chosen = V.argmax(axis=1)
    names = names or tuple(f"x{k}" for k in range(K))
    return ChoicePanel.from_arrays(X, chosen, counts, names, avail=avail)


def loop_person_ll(panel, beta):
    """Per-person log-likelihood from plain loops over the long rows."""
    out = []
    for n in range(panel.n_persons):
        total = 0.0
        for o in range(panel.obs_start[n], panel.obs_start[n + 1]):
            utils = [sum(b * x for b, x in zip(beta, panel.X[o, j])) for j in range(panel.n_alternatives) if panel.avail[o, j]]
            v_ch = sum(b * x for b, x in zip(beta, panel.X[o, panel.chosen[o]]))
            m = max(utils)
            total += v_ch - m - math.log(sum(math.exp(u - m) for u in utils))
        out.append(total)
    return np.array(out)


@pytest.fixture
def panel():
    return random_panel()


@pytest.fixture
def avail_panel():
    return random_panel(N=10, T=3, J=4, seed=3, with_avail=True)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS.append((label, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}", flush=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[1].rstrip(":"))):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
