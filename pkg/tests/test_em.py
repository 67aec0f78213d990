import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from conftest import loop_person_ll, random_panel
from gridlogit.em import (
    EstimationConfig,
    EstimationError,
    _power_of_ten_above,
    e_step,
    equal_grid_objective,
    fit,
    fit_mnl,
    initial_values,
    m_step_equal_grid,
    m_step_gamma,
    m_step_objective,
    m_step_unequal_grid,
    m_step_unstructured,
    posterior_from_logf,
    unequal_grid_objective,
    unstructured_objective,
)
from gridlogit.kernel import mixture_log_likelihood
from gridlogit.model import MixtureModel, ModelSpec
from gridlogit.support import MixtureSupport, enumerate_support


def fd(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def random_q(rng, N, S):
    q = rng.dirichlet(np.ones(S), size=N)
    return q


class TestPosterior:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        logf = rng.normal(scale=30, size=(6, 4))
        q, ll = posterior_from_logf(logf, np.array([0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_allclose(q.sum(axis=1), 1.0)
        want = np.log(np.exp(logf) @ np.array([0.1, 0.2, 0.3, 0.4]))
        np.testing.assert_allclose(ll, want, rtol=1e-12)

    def test_zero_mass_class_gets_zero_posterior(self):
        q, _ = posterior_from_logf(np.zeros((3, 2)), np.array([1.0, 0.0]))
        np.testing.assert_array_equal(q[:, 1], 0.0)

    def test_impossible_person_raises(self):
        with pytest.raises(EstimationError):
            posterior_from_logf(np.array([[0.0, -np.inf]]), np.array([0.0, 1.0]))

    def test_gamma_update_is_mean_posterior(self):
        q = np.array([[0.2, 0.8], [0.6, 0.4]])
        np.testing.assert_allclose(m_step_gamma(q), [0.4, 0.6])

    def test_gamma_floor(self):
        g = m_step_gamma(np.array([[1.0, 0.0], [1.0, 0.0]]), floor=1e-12)
        assert g[1] > 0 and abs(g.sum() - 1) < 1e-15


def _models(panel):
    rb = ((-np.inf, np.inf),)
    un = MixtureModel(("x0", "x1"), [0.2, -0.4], MixtureSupport.unstructured(["x2"], [[-1.0, 0.3, 1.5]], rb), np.array([0.3, 0.3, 0.4]))
    eq = MixtureModel(("x0",), [0.2], MixtureSupport.equal_grid(["x1", "x2"], [-1.0, -0.5], [2.0, 1.5], [3, 2]), np.full(6, 1 / 6))
    ue = MixtureModel(("x0",), [0.2], MixtureSupport.unequal_grid(["x1", "x2"], [[-1.0, 0.1, 0.9], [-0.3, 0.8]]), np.full(6, 1 / 6))
    return un, eq, ue


class TestObjectiveGradients:
    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_unstructured(self, seed):
        rng = np.random.default_rng(seed)
        panel = random_panel(N=8, T=3, seed=seed, with_avail=True)
        m = _models(panel)[0]
        pts, fixed = rng.normal(size=(1, 3)), rng.normal(size=2)
        q = random_q(rng, 8, 3)
        v, gp, gf = unstructured_objective(pts, fixed, m, panel, q)
        np.testing.assert_allclose(gp, fd(lambda x: unstructured_objective(x, fixed, m, panel, q)[0], pts), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gf, fd(lambda x: unstructured_objective(pts, x, m, panel, q)[0], fixed), rtol=1e-5, atol=1e-7)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_equal_grid(self, seed):
        rng = np.random.default_rng(seed)
        panel = random_panel(N=8, T=3, seed=seed)
        m = _models(panel)[1]
        a, d, f = rng.normal(size=2), rng.uniform(0.1, 2, size=2), rng.normal(size=1)
        q = random_q(rng, 8, 6)
        v, ga, gd, gf = equal_grid_objective(a, d, f, m, panel, q)
        np.testing.assert_allclose(ga, fd(lambda x: equal_grid_objective(x, d, f, m, panel, q)[0], a), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gd, fd(lambda x: equal_grid_objective(a, x, f, m, panel, q)[0], d), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gf, fd(lambda x: equal_grid_objective(a, d, x, m, panel, q)[0], f), rtol=1e-5, atol=1e-7)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_unequal_grid(self, seed):
        rng = np.random.default_rng(seed)
        panel = random_panel(N=8, T=3, seed=seed)
        m = _models(panel)[2]
        lam = [rng.normal(size=3), rng.normal(size=2)]
        f = rng.normal(size=1)
        q = random_q(rng, 8, 6)
        v, gl, gf = unequal_grid_objective(lam, f, m, panel, q)
        for k in range(2):
            def obj(x, k=k):
                ll = list(lam)
                ll[k] = x
                return unequal_grid_objective(ll, f, m, panel, q)[0]

            np.testing.assert_allclose(gl[k], fd(obj, lam[k]), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gf, fd(lambda x: unequal_grid_objective(lam, x, m, panel, q)[0], f), rtol=1e-5, atol=1e-7)

    def test_value_matches_loop(self, panel):
        rng = np.random.default_rng(3)
        for m in _models(panel):
            q = random_q(rng, panel.n_persons, m.n_classes)
            B = m.coefficient_matrix()
            want = sum(q[:, s] @ loop_person_ll(panel, B[:, s]) for s in range(m.n_classes))
            assert m_step_objective(m, panel, q)[0] == pytest.approx(want, rel=1e-12)


class TestMSteps:
    @pytest.mark.parametrize("which", [0, 1, 2])
    def test_m_step_improves_objective(self, panel, which):
        m = _models(panel)[which]
        q = random_q(np.random.default_rng(which), panel.n_persons, m.n_classes)
        step = (m_step_unstructured, m_step_equal_grid, m_step_unequal_grid)[which]
        new, info = step(q, panel, m)
        assert m_step_objective(new, panel, q)[0] >= m_step_objective(m, panel, q)[0] - 1e-9
        # the weighted objective is invariant under class relabelling of (points, q)
        assert new.n_classes == m.n_classes

    def test_unequal_points_come_back_sorted(self):
        panel = random_panel(N=30, T=4, seed=5)
        m = MixtureModel(("x0",), [0.0], MixtureSupport.unequal_grid(["x1", "x2"], [[2.0, -2.0, 0.0], [1.0, -1.0]]), np.full(6, 1 / 6))
        q = random_q(np.random.default_rng(1), 30, 6)
        before = m_step_objective(m, panel, q)[0]
        new, info = m_step_unequal_grid(q, panel, m)
        for lam in new.support.lambdas:
            assert np.all(np.diff(lam) >= 0)
        assert info.reports[0].value >= before - 1e-9

    def test_empty_class_is_frozen(self, panel):
        m = _models(panel)[0]
        m = MixtureModel((), [], MixtureSupport.unstructured(["x0", "x1", "x2"], np.array([[0.1, 5.0], [0.2, 5.0], [0.3, 5.0]])), np.array([1.0, 0.0]))
        q = np.zeros((panel.n_persons, 2))
        q[:, 0] = 1.0
        new, info = m_step_unstructured(q, panel, m)
        assert info.frozen.tolist() == [False, True]
        np.testing.assert_array_equal(new.support.points[:, 1], 5.0)

    def test_equal_grid_respects_bounds(self):
        panel = random_panel(N=30, T=4, seed=6)
        spec = ModelSpec(fixed=("x0",), random=("x1",), variant="equal", counts=(3,), constraints={"x1": "nonpositive"})
        m = initial_values(panel, spec, seed=2)
        q = random_q(np.random.default_rng(0), 30, 3)
        new, _ = m_step_equal_grid(q, panel, m, spec)
        assert np.all(enumerate_support(new.support) <= 1e-12)


class TestMnl:
    def test_matches_independent_optimiser(self, panel):
        beta, rep = fit_mnl(panel)
        assert rep.converged
        res = minimize(lambda b: -loop_person_ll(panel, b).sum(), np.zeros(3), method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 20000})
        np.testing.assert_allclose(beta, res.x, atol=1e-4)

    def test_sign_constraint(self, panel):
        spec = ModelSpec.mnl(panel.attribute_names, {"x0": "nonpositive", "x1": "nonnegative"})
        beta, _ = fit_mnl(panel, spec)
        assert beta[0] <= 0 and beta[1] >= 0


class TestStartingValues:
    @pytest.mark.parametrize("b,want", [(0.0, 1.0), (0.5, 1.0), (-3.54, 10.0), (25.0, 100.0), (10.0, 100.0), (1.0, 10.0)])
    def test_power_of_ten(self, b, want):
        assert _power_of_ten_above(b) == want

    @pytest.mark.parametrize("variant,counts,n", [("unstructured", (), 4), ("equal", (3, 2), None), ("unequal", (3, 2), None)])
    def test_ranges_and_simplex(self, panel, variant, counts, n):
        kw = {"n_classes": n} if n else {"counts": counts}
        spec = ModelSpec(fixed=("x0",), random=("x1", "x2"), variant=variant, constraints={"x2": "nonpositive"}, **kw)
        mnl, _ = fit_mnl(panel, spec)
        m = initial_values(panel, spec, seed=11, mnl_beta=mnl)
        assert abs(m.gamma.sum() - 1) < 1e-12 and np.all(m.gamma > 0)
        assert m.fixed[0] == mnl[0]
        pts = enumerate_support(m.support)
        for k in range(2):
            top = _power_of_ten_above(mnl[1 + k])
            assert np.all(np.abs(pts[k]) <= top)
        assert np.all(pts[1] <= 0)

    def test_seed_determinism(self, panel):
        spec = ModelSpec(fixed=("x0",), random=("x1",), variant="unequal", counts=(3,))
        a = initial_values(panel, spec, 4)
        b = initial_values(panel, spec, 4)
        c = initial_values(panel, spec, 5)
        assert a.support == b.support and np.array_equal(a.gamma, b.gamma)
        assert a.support != c.support


class TestFit:
    @pytest.mark.parametrize("variant,kw", [("unstructured", {"n_classes": 3}), ("equal", {"counts": (3,)}), ("unequal", {"counts": (3,)})])
    def test_monotone_and_consistent(self, variant, kw):
        panel = random_panel(N=40, T=5, seed=8)
        spec = ModelSpec(fixed=("x0", "x1"), random=("x2",), variant=variant, **kw)
        res = fit(panel, spec, EstimationConfig(seed=1, max_iter=60))
        assert np.all(np.diff(res.ll_trajectory) >= -1e-9)
        assert res.log_likelihood == pytest.approx(mixture_log_likelihood(res.model, panel), rel=1e-10)
        assert res.n_params == spec.n_parameters
        np.testing.assert_allclose(res.posteriors, e_step(res.model, panel) if not res.converged else res.posteriors)

    def test_reproducible(self):
        panel = random_panel(N=30, T=4, seed=9)
        spec = ModelSpec(fixed=("x0",), random=("x1", "x2"), variant="unequal", counts=(2, 2))
        a = fit(panel, spec, EstimationConfig(seed=3, max_iter=20))
        b = fit(panel, spec, EstimationConfig(seed=3, max_iter=20))
        np.testing.assert_array_equal(a.ll_trajectory, b.ll_trajectory)

    def test_mixture_beats_mnl(self):
        panel = random_panel(N=40, T=5, seed=10)
        spec = ModelSpec(fixed=("x0",), random=("x1", "x2"), variant="unequal", counts=(2, 2))
        res = fit(panel, spec, EstimationConfig(seed=0, max_iter=100))
        beta, _ = fit_mnl(panel, spec)
        # allowance for stopping at a gain below 1e-6 per iteration
        assert res.log_likelihood >= loop_person_ll(panel, beta).sum() - 1e-4

    def test_zero_iterations(self, panel):
        spec = ModelSpec(fixed=("x0",), random=("x1",), variant="unequal", counts=(2,))
        res = fit(panel, spec, EstimationConfig(max_iter=0))
        assert res.iterations == 0 and len(res.ll_trajectory) == 1 and not res.converged

    def test_init_mismatch(self, panel):
        spec = ModelSpec(fixed=("x0",), random=("x1",), variant="unequal", counts=(2,))
        other = ModelSpec(fixed=("x0",), random=("x1",), variant="unequal", counts=(3,))
        with pytest.raises(ValueError):
            fit(panel, spec, init=initial_values(panel, other, 0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EstimationConfig(tol=0)
        with pytest.raises(ValueError):
            EstimationConfig(start="kmeans")
        assert EstimationConfig(paper_convergence=True).threshold == 0.1


class TestRelabelling:
    def _mass_by_point(self, model):
        pts = enumerate_support(model.support).T
        return {tuple(np.round(p, 12)): g for p, g in zip(pts, model.gamma)}

    def test_unequal_sort_keeps_point_mass_pairs(self):
        from gridlogit.em import _Layout

        raw = MixtureModel(("x0",), [0.5], MixtureSupport.unequal_grid(["x1", "x2"], [[3.0, -1.0, 2.0], [0.5, -0.5]]), np.arange(1, 7) / 21)
        spec = ModelSpec(fixed=("x0",), random=("x1", "x2"), variant="unequal", counts=(3, 2))
        layout = _Layout(raw, spec)
        out = layout.to_model(layout.x0, raw.gamma)
        assert all(np.all(np.diff(l) > 0) for l in out.support.lambdas)
        assert self._mass_by_point(out) == self._mass_by_point(raw)

    def test_equal_corner_swap_keeps_point_mass_pairs(self):
        from gridlogit.em import _Layout

        base = MixtureModel((), [], MixtureSupport.equal_grid(["x1", "x2"], [0.0, 0.0], [1.0, 1.0], [3, 2]), np.arange(1, 7) / 21)
        spec = ModelSpec(fixed=(), random=("x1", "x2"), variant="equal", counts=(3, 2))
        layout = _Layout(base, spec)
        theta = np.array([2.0, 0.0, -2.0, 1.0])  # lo = (2, 0), hi = (-2, 1): first axis reversed
        raw_pts = layout.coefficients(theta)
        raw = {tuple(np.round(p, 12)): g for p, g in zip(raw_pts.T, base.gamma)}
        out = layout.to_model(theta, base.gamma)
        assert np.all(out.support.delta >= 0)
        assert self._mass_by_point(out) == raw
