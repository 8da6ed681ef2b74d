"""Cross-validated evaluation on the instances with known labels.

Produces per-strategy out-of-fold predictions, fold AUCs, and ROC curves
with cross-fold confidence bounds. The positive class is recovery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .cohort import Cohort, split_folds
from .forest import ForestConfig, fit_forest
from .labeling import LabelStrategy, build_training_set
from .propensity import PropensityScorer, fit_propensity, propensity_weights

__all__ = [
    "EvaluationError",
    "FoldResult",
    "RocCurve",
    "auc_score",
    "roc_points",
    "trapezoid_auc",
    "cross_validate",
    "roc_with_bounds",
]


class EvaluationError(ValueError):
    """Raised for malformed evaluation input."""


class EvaluationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FoldResult:
    strategy: str
    fold_index: int
    predictions: dict[str, float]
    auc: float | None = None


@dataclass(frozen=True)
class RocCurve:
    fpr_grid: tuple[float, ...]
    mean_tpr: tuple[float, ...]
    tpr_std: tuple[float, ...]


def auc_score(scores, labels) -> float:
    """AUC in its Mann-Whitney form via average ranks; ties count 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be aligned 1-D sequences")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    return float(
        (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def roc_points(scores, labels):
    """ROC curve from a full threshold sweep: (fpr, tpr) arrays from (0,0) to (1,1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    # keep one point per distinct threshold
    distinct = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    tpr = np.r_[0.0, tp[distinct] / n_pos]
    fpr = np.r_[0.0, fp[distinct] / n_neg]
    return fpr, tpr


def trapezoid_auc(scores, labels) -> float:
    """Area under the threshold-sweep ROC curve; independent route to the AUC."""
    fpr, tpr = roc_points(scores, labels)
    return float(np.trapezoid(tpr, fpr))


def _forest_config_for_fold(fcfg: ForestConfig, seed: int, fold: int) -> ForestConfig:
    # one fixed forest seed per fold, shared across strategies
    derived = int(np.random.SeedSequence(entropy=seed, spawn_key=(7, fold)).generate_state(1)[0])
    return ForestConfig(
        n_trees=fcfg.n_trees,
        max_depth=fcfg.max_depth,
        min_weight_fraction_leaf=fcfg.min_weight_fraction_leaf,
        features_per_split=fcfg.features_per_split,
        bootstrap=fcfg.bootstrap,
        uniform_bootstrap=fcfg.uniform_bootstrap,
        seed=derived,
    )


def strategy_examples(
    cohort: Cohort,
    strategy: LabelStrategy,
    propensity_model: PropensityScorer | None = None,
):
    """Training examples for one strategy, with IPW reweighting if it applies."""
    examples = build_training_set(cohort, strategy)
    if strategy.uses_ipw:
        if propensity_model is None:
            if cohort.indeterminate_instances:
                raise EvaluationError(
                    f"strategy {strategy.kind} needs a fitted propensity model"
                )
            # fully observed cohort: observation is certain, IPW is inert
            return examples
        examples = propensity_weights(propensity_model, examples)
    return examples


def cross_validate(
    cohort: Cohort,
    strategy: LabelStrategy,
    k: int,
    fcfg: ForestConfig,
    seed: int,
    propensity_model: PropensityScorer | None = None,
) -> list[FoldResult]:
    """k-fold cross validation over the observed instances.

    Fold assignment depends only on (cohort, k, seed), so every strategy is
    evaluated on identical fold partitions. Indeterminate instances never
    enter a holdout; each fold's training set is the strategy-constructed
    set over the remaining observed instances plus all applicable
    indeterminate-derived examples.
    """
    folds = split_folds(cohort, k, seed)
    if (
        strategy.uses_ipw
        and propensity_model is None
        and cohort.indeterminate_instances
    ):
        propensity_model = fit_propensity(cohort, seed=seed)
    labels = cohort.observed_labels()
    inst_by_id = {i.id: i for i in cohort.instances}

    results = []
    for fold_index, fold_ids in enumerate(folds):
        train_cohort = cohort.restrict(set(fold_ids))
        train_labels = [
            i.known_label for i in train_cohort.observed_instances
        ]
        if len(set(train_labels)) < 2:
            raise EvaluationError(
                f"fold {fold_index}: training complement has a single class"
            )
        examples = strategy_examples(train_cohort, strategy, propensity_model)
        model = fit_forest(examples, _forest_config_for_fold(fcfg, seed, fold_index))
        X_hold = np.array(
            [inst_by_id[i].covariates for i in fold_ids], dtype=np.float64
        )
        preds = model.predict(X_hold)
        predictions = {iid: float(p) for iid, p in zip(fold_ids, preds)}
        fold_labels = [labels[i] for i in fold_ids]
        if len(set(fold_labels)) < 2:
            warnings.warn(
                f"fold {fold_index} has a single class; AUC not defined",
                EvaluationWarning,
            )
            auc = None
        else:
            auc = auc_score(list(predictions.values()), fold_labels)
        results.append(FoldResult(strategy.kind, fold_index, predictions, auc))
    return results


def roc_with_bounds(
    fold_results: list[FoldResult],
    labels: dict[str, int],
    grid_size: int = 101,
) -> RocCurve:
    """Vertically averaged ROC over folds on a shared FPR grid."""
    if len(fold_results) < 2:
        raise EvaluationError("need at least 2 folds for confidence bounds")
    grid = np.linspace(0.0, 1.0, grid_size)
    curves = []
    for fr in fold_results:
        ids = list(fr.predictions)
        fold_labels = np.array([labels[i] for i in ids])
        scores = np.array([fr.predictions[i] for i in ids])
        if len(set(fold_labels.tolist())) < 2:
            warnings.warn(
                f"fold {fr.fold_index} has a single class; excluded from ROC bounds",
                EvaluationWarning,
            )
            continue
        fpr, tpr = roc_points(scores, fold_labels)
        # collapse vertical ROC segments: one (max) tpr per distinct fpr
        keep = np.r_[fpr[1:] != fpr[:-1], True]
        curves.append(np.interp(grid, fpr[keep], tpr[keep]))
    if not curves:
        raise EvaluationError("no fold with both classes; cannot build ROC bounds")
    stack = np.vstack(curves)
    return RocCurve(
        tuple(float(v) for v in grid),
        tuple(float(v) for v in stack.mean(axis=0)),
        tuple(float(v) for v in stack.std(axis=0)),
    )
