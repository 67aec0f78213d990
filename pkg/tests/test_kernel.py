import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import loop_person_ll, random_panel
from gridlogit.data import ChoicePanel
from gridlogit.kernel import (
    LOG_FLOOR,
    class_log_likelihoods,
    design_for,
    logit_probabilities,
    mixture_log_likelihood,
    panel_log_likelihood,
    weighted_class_scores,
    weighted_logit_objective,
)
from gridlogit.model import MixtureModel
from gridlogit.support import MixtureSupport


class TestSingleObservation:
    def test_hand_computed(self):
        p = logit_probabilities([math.log(2.0)], np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(p, [1 / 3, 2 / 3], rtol=1e-14)

    def test_availability_drops_alternatives(self):
        x = np.array([[0.0], [1.0], [5.0]])
        p = logit_probabilities([math.log(2.0)], x, avail=[True, True, False])
        np.testing.assert_allclose(p, [1 / 3, 2 / 3])

    def test_empty_choice_set(self):
        with pytest.raises(ValueError):
            logit_probabilities([1.0], np.array([[0.0], [1.0]]), avail=[False, False])

    def test_bad_coefficients(self):
        with pytest.raises(ValueError):
            logit_probabilities([1.0, 2.0], np.array([[0.0], [1.0]]))
        with pytest.raises(ValueError):
            logit_probabilities([np.nan], np.array([[0.0], [1.0]]))

    @given(st.lists(st.floats(-800, 800), min_size=2, max_size=6))
    def test_sums_to_one_and_finite_at_extremes(self, v):
        p = logit_probabilities([1.0], np.array(v)[:, None])
        assert np.all(np.isfinite(p)) and np.all(p > 0)
        assert abs(p.sum() - 1.0) < 1e-12

    def test_record_api_matches_loop(self, avail_panel):
        beta = np.array([0.3, -0.7, 1.1])
        want = loop_person_ll(avail_panel, beta)
        got = [panel_log_likelihood(beta, avail_panel.person(n)) for n in range(avail_panel.n_persons)]
        np.testing.assert_allclose(got, want, rtol=1e-12)


class TestVectorised:
    def test_matches_loop(self, avail_panel):
        rng = np.random.default_rng(1)
        B = rng.normal(size=(3, 5))
        got = class_log_likelihoods(design_for(avail_panel, avail_panel.attribute_names), B)
        for s in range(5):
            np.testing.assert_allclose(got[:, s], loop_person_ll(avail_panel, B[:, s]), rtol=1e-11)

    def test_chunking_does_not_change_result(self, panel, monkeypatch):
        import gridlogit.kernel as k

        B = np.random.default_rng(2).normal(size=(3, 7))
        d = design_for(panel, panel.attribute_names)
        full = class_log_likelihoods(d, B)
        monkeypatch.setattr(k, "_CHUNK_ELEMENTS", 1)
        np.testing.assert_allclose(class_log_likelihoods(d, B), full, rtol=1e-14)

    def test_log_floor_for_impossible_choice(self):
        X = np.array([[[0.0], [1.0]]])
        p = ChoicePanel.from_arrays(X, [0], [1], ["x"])
        ll = class_log_likelihoods(design_for(p, ["x"]), np.array([[2000.0]]))
        assert ll[0, 0] == LOG_FLOOR

    def test_shift_invariance(self, panel):
        # adding a common attribute offset to every alternative leaves probabilities unchanged
        beta = np.array([0.4, 0.2, -0.5])
        shifted = ChoicePanel.from_arrays(panel.X + np.array([3.0, -1.0, 2.0]), panel.chosen, panel.obs_per_person, panel.attribute_names)
        a = class_log_likelihoods(design_for(panel, panel.attribute_names), beta)
        b = class_log_likelihoods(design_for(shifted, shifted.attribute_names), beta)
        np.testing.assert_allclose(a, b, atol=1e-11)

    def test_attribute_subset(self, panel):
        beta = np.array([0.5, -0.25])
        got = class_log_likelihoods(design_for(panel, ("x2", "x0")), beta)[:, 0]
        np.testing.assert_allclose(got, loop_person_ll(panel, [-0.25, 0.0, 0.5]), rtol=1e-12)


class TestScores:
    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        panel = random_panel(N=8, T=3, J=3, K=3, seed=seed, with_avail=True)
        beta = rng.normal(size=3)
        w = rng.uniform(0, 2, size=8)
        v, g = weighted_logit_objective(beta, panel, w)
        h = 1e-6
        fd = np.array([(weighted_logit_objective(beta + h * e, panel, w)[0] - weighted_logit_objective(beta - h * e, panel, w)[0]) / (2 * h) for e in np.eye(3)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_value_is_weighted_loop_sum(self, avail_panel):
        beta = np.array([0.1, 0.2, -0.3])
        w = np.linspace(0.5, 1.5, avail_panel.n_persons)
        v, _ = weighted_logit_objective(beta, avail_panel, w)
        assert v == pytest.approx(float(w @ loop_person_ll(avail_panel, beta)), rel=1e-12)

    def test_zero_weights_give_zero(self, panel):
        v, g = weighted_logit_objective(np.ones(3), panel, np.zeros(panel.n_persons))
        assert v == 0.0 and not g.any()

    def test_weight_checks(self, panel):
        with pytest.raises(ValueError):
            weighted_logit_objective(np.ones(3), panel, np.ones(3))
        with pytest.raises(ValueError):
            weighted_logit_objective(np.ones(3), panel, -np.ones(panel.n_persons))

    def test_multi_class_columns_are_independent(self, panel):
        rng = np.random.default_rng(4)
        B = rng.normal(size=(3, 4))
        W = rng.uniform(size=(panel.n_persons, 4))
        d = design_for(panel, panel.attribute_names)
        v, G = weighted_class_scores(d, B, W)
        parts = [weighted_logit_objective(B[:, s], panel, W[:, s]) for s in range(4)]
        assert v == pytest.approx(sum(p[0] for p in parts), rel=1e-12)
        np.testing.assert_allclose(G, np.stack([p[1] for p in parts], axis=1), rtol=1e-12, atol=1e-12)


class TestMixture:
    def test_matches_scalar_mixture(self, panel):
        pts = np.array([[-1.0, 0.5, 2.0]])
        gamma = np.array([0.2, 0.5, 0.3])
        m = MixtureModel(("x0", "x1"), [0.3, -0.2], MixtureSupport.unstructured(["x2"], pts), gamma)
        per_class = [loop_person_ll(panel, [0.3, -0.2, b]) for b in pts[0]]
        want = np.sum(np.log(sum(g * np.exp(l) for g, l in zip(gamma, per_class))))
        assert mixture_log_likelihood(m, panel) == pytest.approx(want, rel=1e-12)

    def test_class_permutation_invariance(self, panel):
        pts = np.array([[-1.0, 0.5, 2.0]])
        m = MixtureModel(("x0", "x1"), [0.3, -0.2], MixtureSupport.unstructured(["x2"], pts), np.array([0.2, 0.5, 0.3]))
        assert mixture_log_likelihood(m.permuted([2, 0, 1]), panel) == pytest.approx(mixture_log_likelihood(m, panel), rel=1e-13)

    def test_off_simplex_rejected(self, panel):
        m = MixtureModel((), [], MixtureSupport.unstructured(["x0", "x1", "x2"], np.zeros((3, 2))), np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            mixture_log_likelihood(m, panel)
