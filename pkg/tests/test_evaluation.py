"""AUC oracles, cross-validation semantics, and vertically averaged ROC."""

import numpy as np
import pytest

from labelaudit.cohort import split_folds
from labelaudit.evaluation import (
    EvaluationError,
    EvaluationWarning,
    FoldResult,
    auc_score,
    cross_validate,
    roc_with_bounds,
    trapezoid_auc,
)
from labelaudit.forest import ForestConfig
from labelaudit.labeling import LabelStrategy
from labelaudit.propensity import constant_propensity
from conftest import observed_instance, random_cohort
from labelaudit.cohort import Cohort


def brute_force_auc(scores, labels):
    """Pairwise counting form: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


SMALL_FOREST = ForestConfig(n_trees=4, seed=0)


class TestAuc:
    def test_hand_example(self):
        assert auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_perfect_separation(self):
        assert auc_score([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auc_score([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError, match="both classes"):
            auc_score([0.1, 0.2], [1, 1])

    def test_matches_brute_force(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 31))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            assert auc_score(scores, labels) == pytest.approx(
                brute_force_auc(scores, labels), abs=1e-12
            )

    def test_matches_trapezoid(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 200))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 2)
            assert auc_score(scores, labels) == pytest.approx(
                trapezoid_auc(scores, labels), abs=1e-9
            )

    def test_monotone_transform_invariance(self, rng):
        scores = rng.random(50)
        labels = rng.integers(0, 2, size=50)
        labels[0], labels[1] = 0, 1
        base = auc_score(scores, labels)
        assert auc_score(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc_score(3 * scores - 7, labels) == pytest.approx(base, abs=1e-12)


class TestCrossValidate:
    def test_strategies_coincide_without_wlst(self, rng):
        cohort = random_cohort(rng, 24, 0, 3)
        base = cross_validate(cohort, LabelStrategy("observed_only"), 4, SMALL_FOREST, 0)
        for kind in ("wlst_zero", "nearest_neighbor", "experts_mean", "experts_agree"):
            other = cross_validate(cohort, LabelStrategy(kind), 4, SMALL_FOREST, 0)
            assert [fr.predictions for fr in other] == [fr.predictions for fr in base]
            assert [fr.auc for fr in other] == [fr.auc for fr in base]

    def test_deterministic_rerun(self, rng):
        cohort = random_cohort(rng, 20, 8, 3)
        strategy = LabelStrategy("experts_all")
        assert cross_validate(cohort, strategy, 4, SMALL_FOREST, 1) == cross_validate(
            cohort, strategy, 4, SMALL_FOREST, 1
        )

    def test_paired_folds_across_strategies(self, rng):
        cohort = random_cohort(rng, 21, 7, 3)
        runs = [
            cross_validate(cohort, LabelStrategy(kind), 3, SMALL_FOREST, 2)
            for kind in ("observed_only", "wlst_zero", "experts_max")
        ]
        for fold in range(3):
            id_sets = [set(run[fold].predictions) for run in runs]
            assert id_sets[0] == id_sets[1] == id_sets[2]

    def test_wlst_never_in_holdout(self, rng):
        cohort = random_cohort(rng, 15, 9, 3)
        w_ids = {i.id for i in cohort.indeterminate_instances}
        results = cross_validate(cohort, LabelStrategy("wlst_zero"), 3, SMALL_FOREST, 0)
        held_out = {iid for fr in results for iid in fr.predictions}
        assert held_out == {i.id for i in cohort.observed_instances}
        assert held_out & w_ids == set()

    def test_ipw_with_constant_propensity_matches_plain(self, rng):
        cohort = random_cohort(rng, 24, 10, 3)
        model = constant_propensity(0.4, 3)
        plain = cross_validate(cohort, LabelStrategy("observed_only"), 4, SMALL_FOREST, 0)
        ipw = cross_validate(
            cohort,
            LabelStrategy("observed_only_ipw"),
            4,
            SMALL_FOREST,
            0,
            propensity_model=model,
        )
        assert [fr.predictions for fr in ipw] == [fr.predictions for fr in plain]

    def _cohort_with_sparse_positives(self):
        """12 observed, 2 positives landing in different folds under k=4."""
        for seed in range(500):
            rng = np.random.default_rng(seed)
            instances = tuple(
                observed_instance(f"n{i:02d}", rng.standard_normal(2), 1 if i < 2 else 0)
                for i in range(12)
            )
            cohort = Cohort(instances, 2)
            folds = split_folds(cohort, 4, seed=0)
            holding = [any(i in ("n00", "n01") for i in f) for f in folds]
            if sum(holding) == 2:
                return cohort
        raise AssertionError("no suitable seed found")

    def test_single_class_fold_warns_and_skips_auc(self):
        cohort = self._cohort_with_sparse_positives()
        with pytest.warns(EvaluationWarning, match="single class"):
            results = cross_validate(
                cohort, LabelStrategy("observed_only"), 4, SMALL_FOREST, 0
            )
        aucs = [fr.auc for fr in results]
        assert aucs.count(None) == 2
        assert all(a is None or 0.0 <= a <= 1.0 for a in aucs)

    def test_single_class_training_complement_rejected(self, rng):
        # 4 observed, 1 positive, k=4: the fold holding the positive leaves
        # an all-negative training complement
        instances = tuple(
            observed_instance(f"n{i}", rng.standard_normal(2), 1 if i == 0 else 0)
            for i in range(4)
        )
        cohort = Cohort(instances, 2)
        import warnings

        with pytest.raises(EvaluationError, match="single class"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", EvaluationWarning)
                cross_validate(cohort, LabelStrategy("observed_only"), 4, SMALL_FOREST, 0)


class TestRocWithBounds:
    def _fold(self, index, predictions):
        return FoldResult("observed_only", index, predictions, None)

    def test_perfect_folds(self):
        labels = {"a": 1, "b": 0, "c": 1, "d": 0}
        folds = [
            self._fold(0, {"a": 0.9, "b": 0.1}),
            self._fold(1, {"c": 0.8, "d": 0.2}),
        ]
        curve = roc_with_bounds(folds, labels)
        assert all(v == 1.0 for v in curve.mean_tpr)
        assert all(v == 0.0 for v in curve.tpr_std)

    def test_repeated_fold_has_zero_std(self, rng):
        labels = {f"i{j}": int(j % 2) for j in range(30)}
        predictions = {f"i{j}": float(rng.random()) for j in range(30)}
        folds = [self._fold(0, predictions), self._fold(1, dict(predictions))]
        curve = roc_with_bounds(folds, labels)
        assert all(v == 0.0 for v in curve.tpr_std)

    def test_random_scores_hug_the_diagonal(self, rng):
        labels = {f"i{j}": int(rng.random() < 0.5) for j in range(4000)}
        labels["i0"], labels["i1"] = 0, 1
        folds = [
            self._fold(f, {k: float(rng.random()) for k in labels}) for f in range(2)
        ]
        curve = roc_with_bounds(folds, labels)
        gap = np.abs(np.array(curve.mean_tpr) - np.array(curve.fpr_grid))
        assert gap.mean() < 0.1

    def test_mean_tpr_nondecreasing(self, rng):
        labels = {f"i{j}": int(rng.random() < 0.4) for j in range(60)}
        labels["i0"], labels["i1"] = 0, 1
        folds = [
            self._fold(f, {k: float(rng.random()) for k in labels}) for f in range(4)
        ]
        curve = roc_with_bounds(folds, labels)
        assert np.all(np.diff(curve.mean_tpr) >= 0)
        assert len(curve.fpr_grid) == 101

    def test_needs_two_folds(self):
        with pytest.raises(EvaluationError, match="at least 2 folds"):
            roc_with_bounds([self._fold(0, {"a": 0.5})], {"a": 1})

    def test_single_class_fold_excluded_with_warning(self):
        labels = {"a": 1, "b": 0, "c": 1, "d": 1}
        folds = [
            self._fold(0, {"a": 0.9, "b": 0.1}),
            self._fold(1, {"c": 0.8, "d": 0.2}),  # both positive
        ]
        with pytest.warns(EvaluationWarning, match="excluded"):
            curve = roc_with_bounds(folds, labels)
        assert all(v == 0.0 for v in curve.tpr_std)  # only one fold remained
