"""The ten label-construction strategies and soft-label conversion.

Every strategy keeps the observed instances unchanged (soft label = known
label, unit weight) and differs only in how it turns the indeterminate
(WLST) instances into training examples, if at all.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import Cohort, CohortInstance, RATING_UPPER_BOUNDS

__all__ = [
    "LabelingError",
    "TrainingExample",
    "LabelStrategy",
    "STRATEGY_KINDS",
    "all_strategies",
    "rating_to_soft",
    "nearest_neighbor_label",
    "build_training_set",
    "export_training_set",
]


class LabelingError(ValueError):
    """Raised when a strategy cannot be applied to a cohort."""


# Canonical ordering used by every report artifact.
STRATEGY_KINDS = (
    "observed_only",
    "observed_only_ipw",
    "wlst_zero",
    "nearest_neighbor",
    "experts_all",
    "experts_mean",
    "experts_max",
    "experts_agree",
    "experts_agree_wlst",
    "experts_agree_wlst_ipw",
)

IPW_KINDS = frozenset({"observed_only_ipw", "experts_agree_wlst_ipw"})


@dataclass(frozen=True)
class TrainingExample:
    """A soft-labeled, weighted training row traceable to its instance."""

    instance_id: str
    covariates: tuple[float, ...]
    soft_label: float
    weight: float
    from_observed: bool

    def __post_init__(self):
        if not (0.0 <= self.soft_label <= 1.0):
            raise LabelingError(
                f"{self.instance_id}: soft label {self.soft_label} outside [0, 1]"
            )
        if self.weight <= 0:
            raise LabelingError(f"{self.instance_id}: nonpositive weight {self.weight}")


@dataclass(frozen=True)
class LabelStrategy:
    kind: str
    agreement_threshold: float = 0.01

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise LabelingError(f"unknown strategy kind {self.kind!r}")
        if not (0.0 <= self.agreement_threshold <= 1.0):
            raise LabelingError("agreement_threshold must be in [0, 1]")

    @property
    def uses_ipw(self) -> bool:
        return self.kind in IPW_KINDS


def all_strategies(agreement_threshold: float = 0.01) -> list[LabelStrategy]:
    return [LabelStrategy(k, agreement_threshold) for k in STRATEGY_KINDS]


def rating_to_soft(rating: int) -> float:
    """Map an ordinal rating 0..6 to the upper bound of its probability bin.

    The top rating has no stated ceiling, so it maps to 1.0, the upper bound
    of probability space.
    """
    if int(rating) != rating or not (0 <= rating <= 6):
        raise LabelingError(f"rating {rating!r} outside 0..6")
    return RATING_UPPER_BOUNDS[int(rating)]


class _NeighborIndex:
    """Observed instances pre-sorted by id with cached covariate norms."""

    def __init__(self, observed: list[CohortInstance]):
        if not observed:
            raise LabelingError("nearest-neighbor imputation needs observed instances")
        ordered = sorted(observed, key=lambda i: i.id)
        self.ids = [i.id for i in ordered]
        self.labels = np.array([i.known_label for i in ordered], dtype=np.int64)
        self.matrix = np.array([i.covariates for i in ordered], dtype=np.float64)
        self.norms = np.linalg.norm(self.matrix, axis=1)
        if np.any(self.norms == 0.0):
            bad = self.ids[int(np.argmin(self.norms))]
            raise LabelingError(
                f"{bad}: zero-norm covariate vector, cosine similarity undefined"
            )

    def label_for(self, query: CohortInstance) -> int:
        q = np.asarray(query.covariates, dtype=np.float64)
        qn = np.linalg.norm(q)
        if qn == 0.0:
            raise LabelingError(
                f"{query.id}: zero-norm covariate vector, cosine similarity undefined"
            )
        sims = (self.matrix @ q) / (self.norms * qn)
        # argmax returns the first maximizer; candidates are id-sorted, so
        # similarity ties resolve to the lexicographically smallest id
        return int(self.labels[int(np.argmax(sims))])


def nearest_neighbor_label(
    query: CohortInstance, observed: list[CohortInstance]
) -> int:
    """Known label of the observed instance with highest cosine similarity.

    Ties are broken by the lexicographically smallest id.
    """
    return _NeighborIndex(observed).label_for(query)


def _expert_soft_values(inst: CohortInstance, kind: str) -> list[float]:
    if not inst.expert_ratings:
        raise LabelingError(
            f"strategy {kind!r} requires expert ratings, but {inst.id} has none"
        )
    return [rating_to_soft(r) for r in inst.expert_ratings]


def build_training_set(
    cohort: Cohort, strategy: LabelStrategy
) -> list[TrainingExample]:
    """Construct the weighted soft-labeled training set for one strategy.

    Observed instances always contribute one example with their known label
    and unit base weight; IPW variants rescale those weights downstream.
    """
    kind = strategy.kind
    t = strategy.agreement_threshold
    examples: list[TrainingExample] = []
    for inst in cohort.observed_instances:
        examples.append(
            TrainingExample(
                inst.id, inst.covariates, float(inst.known_label), 1.0, True
            )
        )

    indeterminate = cohort.indeterminate_instances
    if kind in ("observed_only", "observed_only_ipw") or not indeterminate:
        return examples

    if kind == "wlst_zero":
        for inst in indeterminate:
            examples.append(TrainingExample(inst.id, inst.covariates, 0.0, 1.0, False))
    elif kind == "nearest_neighbor":
        index = _NeighborIndex(list(cohort.observed_instances))
        for inst in indeterminate:
            label = index.label_for(inst)
            examples.append(
                TrainingExample(inst.id, inst.covariates, float(label), 1.0, False)
            )
    elif kind == "experts_all":
        for inst in indeterminate:
            soft = _expert_soft_values(inst, kind)
            k = len(soft)
            for value in soft:
                examples.append(
                    TrainingExample(inst.id, inst.covariates, value, 1.0 / k, False)
                )
    elif kind == "experts_mean":
        for inst in indeterminate:
            soft = _expert_soft_values(inst, kind)
            examples.append(
                TrainingExample(
                    inst.id, inst.covariates, sum(soft) / len(soft), 1.0, False
                )
            )
    elif kind == "experts_max":
        for inst in indeterminate:
            soft = _expert_soft_values(inst, kind)
            examples.append(
                TrainingExample(inst.id, inst.covariates, max(soft), 1.0, False)
            )
    elif kind == "experts_agree":
        for inst in indeterminate:
            soft = _expert_soft_values(inst, kind)
            if max(soft) <= t or min(soft) > t:
                examples.append(
                    TrainingExample(inst.id, inst.covariates, max(soft), 1.0, False)
                )
    elif kind in ("experts_agree_wlst", "experts_agree_wlst_ipw"):
        for inst in indeterminate:
            soft = _expert_soft_values(inst, kind)
            if max(soft) <= t:
                examples.append(
                    TrainingExample(inst.id, inst.covariates, max(soft), 1.0, False)
                )
    else:  # pragma: no cover - guarded by LabelStrategy validation
        raise LabelingError(f"unknown strategy kind {kind!r}")
    return examples


def examples_to_arrays(examples: list[TrainingExample]):
    """Stack examples into (X, y, w) numpy arrays for model fitting."""
    X = np.array([e.covariates for e in examples], dtype=np.float64)
    y = np.array([e.soft_label for e in examples], dtype=np.float64)
    w = np.array([e.weight for e in examples], dtype=np.float64)
    return X, y, w


def export_training_set(examples: list[TrainingExample], path: str | Path) -> None:
    """Dump a training set as CSV: instance_id,soft_label,weight,x0..x{d-1}."""
    d = len(examples[0].covariates) if examples else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["instance_id", "soft_label", "weight"] + [f"x{i}" for i in range(d)]
        )
        for e in examples:
            writer.writerow(
                [e.instance_id, repr(e.soft_label), repr(e.weight)]
                + [repr(v) for v in e.covariates]
            )
