"""Cross-strategy disagreement analysis on the indeterminate instances.

All operations are pure post-processing over a prediction matrix: one row
per instance, one column per strategy, every cell a predicted recovery
probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort
from .evaluation import FoldResult, _forest_config_for_fold, strategy_examples
from .forest import ForestConfig, fit_forest
from .labeling import LabelStrategy
from .propensity import PropensityScorer, fit_propensity

__all__ = [
    "MultiplicityError",
    "PredictionMatrix",
    "ConflictMatrix",
    "DisagreementSummary",
    "predict_indeterminacy_set",
    "matrix_from_fold_results",
    "retention_fraction",
    "conflict_matrix",
    "tercile_instability",
    "disagreement_summary",
]

DEFAULT_THRESHOLD_PAIRS = ((0.01, 0.10), (0.01, 0.25), (0.01, 0.50))


class MultiplicityError(ValueError):
    """Raised for malformed disagreement-analysis input."""


@dataclass(frozen=True)
class PredictionMatrix:
    instance_ids: tuple[str, ...]
    strategies: tuple[str, ...]
    values: np.ndarray  # |ids| x |strategies|, entries in [0, 1]
    subset_tag: str  # "W" or "N_holdout"

    def __post_init__(self):
        if self.values.shape != (len(self.instance_ids), len(self.strategies)):
            raise MultiplicityError("prediction matrix shape mismatch")
        if np.any(~np.isfinite(self.values)):
            raise MultiplicityError("prediction matrix has missing cells")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise MultiplicityError("predictions must lie in [0, 1]")

    def column(self, strategy: str) -> np.ndarray:
        return self.values[:, self.strategies.index(strategy)]


@dataclass(frozen=True)
class ConflictMatrix:
    strategies: tuple[str, ...]
    low_threshold: float
    high_threshold: float
    counts: np.ndarray  # counts[r][c]: pred_r <= low and pred_c > high


@dataclass(frozen=True)
class DisagreementSummary:
    """Per-instance disagreement statistics for one instance subset."""

    subset_tag: str
    instance_ids: tuple[str, ...]
    max_difference: np.ndarray
    variance: np.ndarray  # population variance across strategies
    conflict_flags: dict[tuple[float, float], np.ndarray]

    @property
    def mean_max_difference(self) -> float:
        return float(self.max_difference.mean())

    @property
    def mean_variance(self) -> float:
        return float(self.variance.mean())

    def conflict_fraction(self, pair: tuple[float, float]) -> float:
        return float(self.conflict_flags[pair].mean())


def _split_ids(ids: list[str], k: int, seed: int) -> list[list[str]]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(13,)))
    ids = sorted(ids)
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    return [list(part) for part in np.array_split(np.array(shuffled), k)]


def predict_indeterminacy_set(
    cohort: Cohort,
    strategies: list[LabelStrategy],
    fcfg: ForestConfig,
    k: int,
    seed: int,
    propensity_model: PropensityScorer | None = None,
) -> PredictionMatrix:
    """Out-of-fold predictions for every indeterminate instance and strategy.

    The indeterminate set is partitioned into k folds; a strategy's model
    for a fold is trained with that fold's indeterminate-derived examples
    removed (all observed-label examples retained), so no instance is
    predicted by a model that saw its own estimated label.
    """
    w_ids = [i.id for i in cohort.indeterminate_instances]
    if not w_ids:
        raise MultiplicityError("indeterminacy set is empty")
    k = min(k, len(w_ids))
    if propensity_model is None and any(s.uses_ipw for s in strategies):
        propensity_model = fit_propensity(cohort, seed=seed)
    inst_by_id = {i.id: i for i in cohort.instances}

    kinds = tuple(s.kind for s in strategies)
    all_ids: list[str] = []
    rows: list[np.ndarray] = []
    for fold_index, fold_ids in enumerate(_split_ids(w_ids, k, seed)):
        train_cohort = cohort.restrict(set(fold_ids))
        fold_cfg = _forest_config_for_fold(fcfg, seed, 1000 + fold_index)
        X_hold = np.array(
            [inst_by_id[i].covariates for i in fold_ids], dtype=np.float64
        )
        fold_cols = []
        for strategy in strategies:
            examples = strategy_examples(train_cohort, strategy, propensity_model)
            model = fit_forest(examples, fold_cfg)
            fold_cols.append(model.predict(X_hold))
        all_ids.extend(fold_ids)
        rows.append(np.column_stack(fold_cols))

    values = np.vstack(rows)
    order = np.argsort(np.array(all_ids))
    return PredictionMatrix(
        tuple(all_ids[i] for i in order), kinds, values[order], "W"
    )


def matrix_from_fold_results(
    results_by_strategy: dict[str, list[FoldResult]],
) -> PredictionMatrix:
    """Assemble out-of-fold predictions on the observed set into a matrix."""
    kinds = tuple(results_by_strategy)
    merged: dict[str, dict[str, float]] = {}
    for kind, results in results_by_strategy.items():
        merged[kind] = {}
        for fr in results:
            merged[kind].update(fr.predictions)
    ids = tuple(sorted(merged[kinds[0]]))
    values = np.array([[merged[k][i] for k in kinds] for i in ids])
    return PredictionMatrix(ids, kinds, values, "N_holdout")


def retention_fraction(
    matrix: PredictionMatrix, threshold: float
) -> dict[str, float]:
    """Per strategy: fraction of instances predicted at or below the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise MultiplicityError("threshold must be in [0, 1]")
    return {
        kind: float((matrix.values[:, c] <= threshold).mean())
        for c, kind in enumerate(matrix.strategies)
    }


def conflict_matrix(
    matrix: PredictionMatrix, low: float, high: float
) -> ConflictMatrix:
    """counts[r][c] = number of instances with pred_r <= low and pred_c > high."""
    if low >= high:
        raise MultiplicityError(f"low threshold {low} must be below high {high}")
    at_most_low = matrix.values <= low
    above_high = matrix.values > high
    counts = at_most_low.T.astype(np.int64) @ above_high.astype(np.int64)
    np.fill_diagonal(counts, 0)  # diagonal undefined: low < high excludes it
    return ConflictMatrix(matrix.strategies, low, high, counts)


def tercile_instability(matrix: PredictionMatrix) -> tuple[int, list[str]]:
    """Instances ranked in the bottom third by one strategy and the top third
    by another.

    Tercile size is ceil(n / 3); prediction ties are broken by instance id.
    """
    n = len(matrix.instance_ids)
    if n < 3:
        raise MultiplicityError("tercile analysis needs at least 3 instances")
    t = math.ceil(n / 3)
    ids = np.array(matrix.instance_ids)
    in_bottom = np.zeros((n, len(matrix.strategies)), dtype=bool)
    in_top = np.zeros_like(in_bottom)
    for c in range(len(matrix.strategies)):
        order = np.lexsort((ids, matrix.values[:, c]))  # ascending prediction
        in_bottom[order[:t], c] = True
        in_top[order[n - t :], c] = True
    # unstable: bottom under >= 1 strategy and top under a *different* one
    unstable = np.zeros(n, dtype=bool)
    for i in range(n):
        bottom_cols = np.flatnonzero(in_bottom[i])
        top_cols = np.flatnonzero(in_top[i])
        if bottom_cols.size and top_cols.size:
            unstable[i] = not (
                bottom_cols.size == 1
                and top_cols.size == 1
                and bottom_cols[0] == top_cols[0]
            )
    unstable_ids = sorted(ids[unstable].tolist())
    return len(unstable_ids), unstable_ids


def _summary(matrix: PredictionMatrix, pairs) -> DisagreementSummary:
    vals = matrix.values
    max_diff = vals.max(axis=1) - vals.min(axis=1)
    variance = vals.var(axis=1)  # population variance
    flags = {
        (low, high): (vals.min(axis=1) <= low) & (vals.max(axis=1) > high)
        for low, high in pairs
    }
    return DisagreementSummary(
        matrix.subset_tag, matrix.instance_ids, max_diff, variance, flags
    )


def disagreement_summary(
    matrix_w: PredictionMatrix,
    matrix_n: PredictionMatrix,
    threshold_pairs=DEFAULT_THRESHOLD_PAIRS,
) -> tuple[DisagreementSummary, DisagreementSummary]:
    """Per-instance disagreement statistics, aggregated separately for the
    indeterminate set and the observed holdouts."""
    pairs = tuple((float(lo), float(hi)) for lo, hi in threshold_pairs)
    for lo, hi in pairs:
        if lo >= hi:
            raise MultiplicityError(f"threshold pair ({lo}, {hi}) needs low < high")
    return _summary(matrix_w, pairs), _summary(matrix_n, pairs)
