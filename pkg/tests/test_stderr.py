import numpy as np
import pytest

from conftest import loop_person_ll, random_panel
from gridlogit.em import EstimationConfig, fit
from gridlogit.model import ModelSpec
from gridlogit.stderr import BOUNDARY, SMALL_MASS, standard_errors


def logit_information(panel, beta):
    """Expected-equals-observed information of a logit, by explicit loops."""
    K = len(beta)
    I = np.zeros((K, K))
    for o in range(panel.n_obs):
        x = panel.X[o][panel.avail[o]]
        v = x @ beta
        p = np.exp(v - v.max())
        p /= p.sum()
        xb = p @ x
        I += (x - xb).T @ (p[:, None] * (x - xb))
    return I


def second_differences(f, x, h=1e-4):
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def test_single_class_matches_logit_information():
    panel = random_panel(N=60, T=5, seed=2)
    res = fit(panel, ModelSpec.mnl(panel.attribute_names), EstimationConfig(max_iter=5))
    se = standard_errors(res, panel)
    beta = res.model.fixed
    want = np.sqrt(np.diag(np.linalg.inv(logit_information(panel, beta))))
    np.testing.assert_allclose(se.se[:3], want, rtol=1e-4)
    assert se.names[:3] == ("x0", "x1", "x2") and se.hessian_ok


def test_two_class_against_loglik_second_differences():
    panel = random_panel(N=80, T=6, seed=4)
    spec = ModelSpec(fixed=("x0", "x1"), random=("x2",), variant="unstructured", n_classes=2)
    res = fit(panel, spec, EstimationConfig(seed=1, max_iter=300, tol=1e-10))
    se = standard_errors(res, panel)
    if not se.hessian_ok:
        pytest.skip("fitted point is not a strict local maximum")
    m = res.model
    ref = int(np.argmax(m.gamma))
    other = 1 - ref
    x0 = np.concatenate([m.fixed, m.support.points[0], [np.log(m.gamma[other] / m.gamma[ref])]])

    def ll(x):
        g = np.zeros(2)
        g[other] = 1.0 / (1.0 + np.exp(-x[4]))
        g[ref] = 1.0 - g[other]
        per = [loop_person_ll(panel, [x[0], x[1], x[2 + s]]) for s in range(2)]
        return float(np.sum(np.log(g[0] * np.exp(per[0]) + g[1] * np.exp(per[1]))))

    cov = np.linalg.inv(-second_differences(ll, x0))
    np.testing.assert_allclose(se.se[:4], np.sqrt(np.diag(cov))[:4], rtol=2e-3)
    # delta method for the masses of two classes: se(gamma) = gamma0 gamma1 se(eta)
    g_se = m.gamma[0] * m.gamma[1] * np.sqrt(cov[4, 4])
    np.testing.assert_allclose(se.se[4:], [g_se, g_se], rtol=2e-3)
    assert se.names == ("x0", "x1", "x2[0]", "x2[1]", "gamma[0]", "gamma[1]")


def test_boundary_parameters_are_flagged():
    panel = random_panel(N=40, T=5, seed=3)
    beta_free = fit(panel, ModelSpec.mnl(panel.attribute_names), EstimationConfig(max_iter=5)).model.fixed
    # constrain the attribute against the sign of its free estimate so the bound binds
    c = "nonpositive" if beta_free[0] > 0 else "nonnegative"
    res = fit(panel, ModelSpec.mnl(panel.attribute_names, {"x0": c}), EstimationConfig(max_iter=5))
    se = standard_errors(res, panel)
    assert se.flags[0] == BOUNDARY and np.isnan(se.se[0])
    assert np.all(np.isfinite(se.se[1:3]))
    d = se.as_dict()
    assert d["x0"]["se"] is None and d["x0"]["flag"] == BOUNDARY


def test_small_mass_flag():
    from dataclasses import replace

    panel = random_panel(N=40, T=5, seed=5)
    spec = ModelSpec(fixed=("x0", "x1"), random=("x2",), variant="unstructured", n_classes=2)
    res = fit(panel, spec, EstimationConfig(seed=0, max_iter=30))
    g = np.array([1 - 1e-9, 1e-9]) if res.model.gamma[0] > res.model.gamma[1] else np.array([1e-9, 1 - 1e-9])
    res = replace(res, model=replace(res.model, gamma=g))
    se = standard_errors(res, panel)
    small = int(np.argmin(g))
    assert se.flags[4 + small] == SMALL_MASS and np.isnan(se.se[4 + small])


def test_fit_option_attaches_errors():
    panel = random_panel(N=30, T=4, seed=6)
    res = fit(panel, ModelSpec.mnl(panel.attribute_names), EstimationConfig(max_iter=5, standard_errors=True))
    assert res.standard_errors is not None
    assert np.all(np.isfinite(res.standard_errors.t_stats[:3]))
