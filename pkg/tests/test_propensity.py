"""Propensity model fitting, gradient correctness, and IPW reweighting."""

import numpy as np
import pytest

from labelaudit.cohort import Cohort, GeneratorConfig, generate_cohort
from labelaudit.forest import ForestConfig, fit_forest
from labelaudit.labeling import LabelStrategy, build_training_set
from labelaudit.propensity import (
    GRADIENT_TOLERANCE,
    PropensityError,
    PropensityScorer,
    PropensityWarning,
    constant_propensity,
    fit_propensity,
    penalized_log_likelihood,
    penalized_log_likelihood_grad,
    propensity_weights,
)
from conftest import forests_equal, observed_instance, random_cohort, wlst_instance


class TestGradient:
    def test_matches_central_differences(self, rng):
        h = 1e-6
        for _ in range(20):
            n, d = int(rng.integers(5, 40)), int(rng.integers(1, 6))
            X = rng.standard_normal((n, d))
            y = (rng.random(n) < 0.5).astype(float)
            params = rng.standard_normal(d + 1)
            l2 = float(rng.random() * 2)
            grad = penalized_log_likelihood_grad(params, X, y, l2)
            for j in range(d + 1):
                step = np.zeros(d + 1)
                step[j] = h
                numeric = (
                    penalized_log_likelihood(params + step, X, y, l2)
                    - penalized_log_likelihood(params - step, X, y, l2)
                ) / (2 * h)
                denom = max(abs(numeric), abs(grad[j]), 1e-8)
                assert abs(grad[j] - numeric) / denom < 1e-5


class TestFitting:
    def test_independent_observation_gives_near_zero_coefficients(self, rng):
        n, d = 2000, 4
        X = rng.standard_normal((n, d))
        y = (rng.random(n) < 0.4).astype(float)  # independent of X
        model = PropensityScorer().fit(X, y)
        assert model.converged_
        assert np.max(np.abs(model.coef_)) < 0.1
        preds = model.predict_proba(X)
        assert abs(preds.mean() - y.mean()) < 0.05

    def test_separable_input_is_clipped_without_overflow(self, rng):
        X = rng.standard_normal((200, 1))
        y = (X[:, 0] > 0).astype(float)
        model = PropensityScorer(clip_epsilon=0.01).fit(X, y)
        probs = model.clipped_proba(X)
        assert np.all(np.isfinite(model.predict_proba(X)))
        assert probs.min() >= 0.01 and probs.max() <= 0.99

    def test_zero_iteration_fit_predicts_half(self, rng):
        X = rng.standard_normal((50, 3))
        y = (rng.random(50) < 0.5).astype(float)
        model = PropensityScorer(max_iter=0).fit(X, y)
        # standardized-zero input with zero parameters -> logistic(0) = 0.5
        preds = model.predict_proba(model.feature_means_.reshape(1, -1))
        assert preds[0] == pytest.approx(0.5)

    def test_constant_status_rejected(self, rng):
        X = rng.standard_normal((20, 2))
        with pytest.raises(PropensityError, match="degenerate"):
            PropensityScorer().fit(X, np.ones(20))

    def test_non_convergence_is_reported(self, rng):
        X = rng.standard_normal((500, 6))
        y = (rng.random(500) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
        with pytest.warns(PropensityWarning, match="gradient norm"):
            model = PropensityScorer(max_iter=1).fit(X, y)
        assert not model.converged_

    def test_converges_below_tolerance(self, rng):
        cohort = random_cohort(rng, 80, 60, 5)
        model = fit_propensity(cohort)
        assert model.converged_
        X = cohort.covariate_matrix()
        y = np.array([1.0 if i.observed else 0.0 for i in cohort.instances])
        Xs = (X - model.feature_means_) / model.feature_scales_
        params = np.append(model.coef_, model.intercept_)
        grad = penalized_log_likelihood_grad(params, Xs, y, model.l2)
        assert np.max(np.abs(grad)) <= GRADIENT_TOLERANCE

    def test_fit_propensity_needs_both_groups(self, rng):
        cohort = random_cohort(rng, 10, 0, 3)
        with pytest.raises(PropensityError, match="degenerate"):
            fit_propensity(cohort)

    def test_deterministic(self, rng):
        cohort = random_cohort(rng, 40, 30, 4)
        a = fit_propensity(cohort)
        b = fit_propensity(cohort)
        assert np.array_equal(a.coef_, b.coef_)
        assert a.intercept_ == b.intercept_

    def test_json_dump_round_trip_fields(self, rng, tmp_path):
        import json

        cohort = random_cohort(rng, 40, 30, 4)
        model = fit_propensity(cohort)
        path = tmp_path / "model.json"
        model.save_json(path)
        payload = json.loads(path.read_text())
        assert payload["coefficients"] == model.coef_.tolist()
        assert payload["clip_epsilon"] == model.clip_epsilon
        assert payload["converged"] is True


class TestPropensityWeights:
    def examples(self):
        return [
            build_training_set(
                Cohort(
                    (
                        observed_instance("n0", [1.0, 0.0], 1),
                        wlst_instance("w0", [0.5, 0.5], (0, 0, 1)),
                    ),
                    2,
                ),
                LabelStrategy(kind),
            )
            for kind in ("experts_agree_wlst_ipw",)
        ][0]

    def test_inverse_weighting(self):
        model = constant_propensity(0.25, 2)
        reweighted = propensity_weights(model, self.examples())
        by_id = {e.instance_id: e for e in reweighted}
        assert by_id["n0"].weight == pytest.approx(4.0)

    def test_clipping_caps_extreme_weights(self):
        model = constant_propensity(0.001, 2, clip_epsilon=0.01)
        reweighted = propensity_weights(model, self.examples())
        by_id = {e.instance_id: e for e in reweighted}
        assert by_id["n0"].weight == pytest.approx(100.0)

    def test_wlst_sourced_weight_unchanged(self):
        model = constant_propensity(0.25, 2)
        reweighted = propensity_weights(model, self.examples())
        by_id = {e.instance_id: e for e in reweighted}
        assert by_id["w0"].weight == 1.0
        assert by_id["w0"].soft_label == 0.01

    def test_weight_bounds(self, rng):
        cohort = random_cohort(rng, 50, 40, 4)
        model = fit_propensity(cohort)
        eps = model.clip_epsilon
        examples = build_training_set(cohort, LabelStrategy("observed_only_ipw"))
        for e in propensity_weights(model, examples):
            assert 1.0 / (1.0 - eps) <= e.weight <= 1.0 / eps


class TestConstantPropensityNeutrality:
    def test_forest_identical_under_uniform_rescaling(self, rng):
        cohort = random_cohort(rng, 40, 20, 4)
        model = constant_propensity(0.3, 4)
        base = build_training_set(cohort, LabelStrategy("observed_only"))
        reweighted = propensity_weights(
            model, build_training_set(cohort, LabelStrategy("observed_only_ipw"))
        )
        weights = {e.weight for e in reweighted}
        assert len(weights) == 1  # uniform rescaling of unit base weights
        cfg = ForestConfig(n_trees=10, seed=42)
        assert forests_equal(fit_forest(base, cfg), fit_forest(reweighted, cfg))
