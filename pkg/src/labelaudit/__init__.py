"""labelaudit: audit how label-handling choices change model predictions.

Builds training sets under ten label-construction strategies for cohorts
with selectively observed outcomes, trains one weighted random forest per
strategy, evaluates them on the instances with known labels, and quantifies
their disagreement on the instances whose labels can never be known.
"""

from .audit import AuditConfig, AuditReport, run_audit
from .cohort import (
    Cohort,
    CohortError,
    CohortInstance,
    GeneratorConfig,
    generate_cohort,
    load_cohort,
    save_cohort,
    split_folds,
)
from .evaluation import FoldResult, RocCurve, auc_score, cross_validate, roc_with_bounds
from .forest import ForestConfig, WeightedRandomForestRegressor, fit_forest
from .labeling import (
    STRATEGY_KINDS,
    LabelStrategy,
    TrainingExample,
    all_strategies,
    build_training_set,
    nearest_neighbor_label,
    rating_to_soft,
)
from .multiplicity import (
    ConflictMatrix,
    PredictionMatrix,
    conflict_matrix,
    disagreement_summary,
    predict_indeterminacy_set,
    retention_fraction,
    tercile_instability,
)
from .propensity import PropensityScorer, fit_propensity, propensity_weights

__version__ = "0.1.0"

__all__ = [
    "AuditConfig",
    "AuditReport",
    "run_audit",
    "Cohort",
    "CohortError",
    "CohortInstance",
    "GeneratorConfig",
    "generate_cohort",
    "load_cohort",
    "save_cohort",
    "split_folds",
    "FoldResult",
    "RocCurve",
    "auc_score",
    "cross_validate",
    "roc_with_bounds",
    "ForestConfig",
    "WeightedRandomForestRegressor",
    "fit_forest",
    "STRATEGY_KINDS",
    "LabelStrategy",
    "TrainingExample",
    "all_strategies",
    "build_training_set",
    "nearest_neighbor_label",
    "rating_to_soft",
    "ConflictMatrix",
    "PredictionMatrix",
    "conflict_matrix",
    "disagreement_summary",
    "predict_indeterminacy_set",
    "retention_fraction",
    "tercile_instability",
    "PropensityScorer",
    "fit_propensity",
    "propensity_weights",
]
