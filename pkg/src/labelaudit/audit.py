"""End-to-end audit: build cohort, train all strategies, write the report.

The report is a directory of CSV/JSON artifacts plus one top-level
``index.json`` carrying the provenance block: methods, motivation,
assumptions with their verification status, and every arbitrary choice that
went into the run. Output is written atomically (temp directory, then
rename), so a failed run leaves nothing behind.
"""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import Cohort, GeneratorConfig, generate_cohort, load_cohort
from .evaluation import (
    FoldResult,
    RocCurve,
    cross_validate,
    roc_with_bounds,
)
from .forest import ForestConfig
from .labeling import STRATEGY_KINDS, all_strategies, rating_to_soft
from .multiplicity import (
    DEFAULT_THRESHOLD_PAIRS,
    ConflictMatrix,
    DisagreementSummary,
    PredictionMatrix,
    conflict_matrix,
    disagreement_summary,
    matrix_from_fold_results,
    predict_indeterminacy_set,
    retention_fraction,
    tercile_instability,
)
from .propensity import fit_propensity, holdout_auc

__all__ = ["AuditError", "AuditConfig", "AuditReport", "run_audit"]

SCHEMA_VERSION = 1

# Reference values reported by a prior clinical study of the same audit
# design, emitted for context only; no numeric match is expected.
CONTEXT_REFERENCE_VALUES = {
    "prior_study_propensity_holdout_auc": 0.8199,
    "prior_study_conflict_fraction_low_0.01_high_0.10": 0.196,
}


class AuditError(RuntimeError):
    """Raised when an audit run cannot proceed or complete."""


@dataclass(frozen=True)
class AuditConfig:
    output_dir: str | Path
    cohort_path: str | Path | None = None
    generator: GeneratorConfig | None = None
    k_folds: int = 5
    forest: ForestConfig = field(default_factory=ForestConfig)
    propensity_l2: float = 1.0
    clip_epsilon: float = 0.01
    agreement_threshold: float = 0.01
    retention_threshold: float = 0.01
    conflict_low: float = 0.01
    conflict_highs: tuple[float, ...] = (0.10, 0.25, 0.50)
    seed: int = 0
    fan_top_n: int = 2

    def __post_init__(self):
        if (self.cohort_path is None) == (self.generator is None):
            raise AuditError(
                "config needs exactly one of cohort_path or generator"
            )
        if self.k_folds < 2:
            raise AuditError("k_folds must be >= 2")


@dataclass
class AuditReport:
    output_dir: Path
    strategies: tuple[str, ...]
    auc_summary: dict[str, dict[str, float]]
    roc_curves: dict[str, RocCurve]
    matrix_n: PredictionMatrix
    matrix_w: PredictionMatrix | None
    retention: dict[str, float] | None
    conflicts: list[ConflictMatrix]
    tercile_count: int | None
    tercile_ids: list[str]
    summary_w: DisagreementSummary | None
    summary_n: DisagreementSummary | None
    index: dict


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


STRATEGY_METHODS = {
    "observed_only": "train on observed-label instances only",
    "observed_only_ipw": "observed-label instances, inverse-propensity weighted",
    "wlst_zero": "impute label 0 for every withdrawn instance",
    "nearest_neighbor": "impute the label of the most cosine-similar observed instance",
    "experts_all": "one example per expert rating, each weighted 1/panel size",
    "experts_mean": "one example per instance labeled with the panel mean",
    "experts_max": "one example per instance labeled with the most optimistic rating",
    "experts_agree": "panel max when all ratings fall on the same side of the threshold, else excluded",
    "experts_agree_wlst": "panel max when all ratings are at or below the threshold, else excluded",
    "experts_agree_wlst_ipw": "like experts_agree_wlst, treated as ground truth, plus IPW on observed instances",
}

STRATEGY_MOTIVATIONS = {
    "observed_only": "avoid relying on any estimated label",
    "observed_only_ipw": "correct the sampling bias of training only on observed labels",
    "wlst_zero": "treat historical withdrawal decisions as reliable",
    "nearest_neighbor": "borrow outcomes from clinically similar non-withdrawn instances",
    "experts_all": "keep every expert opinion, including disagreement",
    "experts_mean": "standard label aggregation by averaging",
    "experts_max": "counter pessimism by trusting the most optimistic expert",
    "experts_agree": "learn from the panel only where it is internally consistent",
    "experts_agree_wlst": "use expert consensus only where no outcome can ever be observed",
    "experts_agree_wlst_ipw": "combine consensus-on-withdrawal labels with sampling-bias correction",
}

ASSUMPTIONS = [
    {
        "name": "labels_missing_at_random",
        "statement": "observed labels are representative of the full population",
        "applies_to": ["observed_only"],
        "verifiable": False,
        "verified": False,
    },
    {
        "name": "positivity",
        "statement": "every instance has non-negligible probability of label observation",
        "applies_to": ["observed_only_ipw", "experts_agree_wlst_ipw"],
        "verifiable": True,
        "verified": False,
    },
    {
        "name": "no_unobserved_confounding",
        "statement": "the withdrawal decision depends only on recorded covariates",
        "applies_to": ["observed_only_ipw", "experts_agree_wlst_ipw"],
        "verifiable": False,
        "verified": False,
    },
    {
        "name": "historical_decisions_correct",
        "statement": "withdrawn instances truly had no recovery potential",
        "applies_to": ["wlst_zero"],
        "verifiable": False,
        "verified": False,
    },
    {
        "name": "similarity_metric_relevance",
        "statement": "cosine similarity of covariates captures outcome-relevant similarity",
        "applies_to": ["nearest_neighbor"],
        "verifiable": False,
        "verified": False,
    },
    {
        "name": "expert_consistency_implies_correctness",
        "statement": "agreeing expert panels are right",
        "applies_to": ["experts_agree", "experts_agree_wlst", "experts_agree_wlst_ipw"],
        "verifiable": False,
        "verified": False,
    },
]


def _provenance(cfg: AuditConfig, cohort: Cohort, ipw_active: bool) -> dict:
    rating_map = {str(r): rating_to_soft(r) for r in range(7)}
    return {
        "methods": dict(STRATEGY_METHODS),
        "motivation": dict(STRATEGY_MOTIVATIONS),
        "assumptions": ASSUMPTIONS,
        "arbitrary_choices": {
            "rating_soft_label_map": rating_map,
            "rating_6_maps_to": 1.0,
            "agreement_threshold": cfg.agreement_threshold,
            "propensity_clip_epsilon": cfg.clip_epsilon,
            "propensity_l2": cfg.propensity_l2,
            "propensity_optimizer": "deterministic full-batch damped Newton on standardized features",
            "ipw_active": ipw_active,
            "forest_config": cfg.forest.to_dict(),
            "fold_scheme": {
                "k_folds": cfg.k_folds,
                "seed": cfg.seed,
                "assignment": "seeded shuffle shared across strategies; "
                "indeterminate instances never enter a holdout",
                "indeterminacy_prediction_scheme": "k-fold over the indeterminate "
                "set with all observed examples retained in training",
            },
            "retention_threshold": cfg.retention_threshold,
            "conflict_thresholds": {
                "low": cfg.conflict_low,
                "highs": list(cfg.conflict_highs),
            },
            "variance_type": "population",
            "tercile_rule": "size ceil(n/3), prediction ties broken by instance id",
            "fan_export": f"top {cfg.fan_top_n} instances by max cross-strategy difference",
            "covariate_distribution": cohort.metadata.get(
                "covariate_distribution", "as provided in cohort file"
            ),
        },
    }


def _resolve_cohort(cfg: AuditConfig) -> Cohort:
    if cfg.cohort_path is not None:
        return load_cohort(cfg.cohort_path)
    return generate_cohort(cfg.generator)


def run_audit(cfg: AuditConfig) -> AuditReport:
    """Execute the full audit and write the report directory atomically."""
    out_dir = Path(cfg.output_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        raise AuditError(f"output directory {out_dir} exists and is not empty")

    cohort = _resolve_cohort(cfg)
    strategies = all_strategies(cfg.agreement_threshold)
    has_w = bool(cohort.indeterminate_instances)

    propensity_model = None
    propensity_auc = float("nan")
    if has_w:
        propensity_model = fit_propensity(
            cohort,
            l2=cfg.propensity_l2,
            seed=cfg.seed,
            clip_epsilon=cfg.clip_epsilon,
        )
        propensity_auc = holdout_auc(cohort, l2=cfg.propensity_l2, seed=cfg.seed)

    results_by_strategy: dict[str, list[FoldResult]] = {}
    for strategy in strategies:
        results_by_strategy[strategy.kind] = cross_validate(
            cohort,
            strategy,
            cfg.k_folds,
            cfg.forest,
            cfg.seed,
            propensity_model=propensity_model,
        )

    labels = cohort.observed_labels()
    auc_summary = {}
    roc_curves = {}
    for kind, results in results_by_strategy.items():
        aucs = [fr.auc for fr in results if fr.auc is not None]
        auc_summary[kind] = {
            "mean": float(np.mean(aucs)) if aucs else float("nan"),
            "std": float(np.std(aucs)) if aucs else float("nan"),
            "n_folds": len(results),
        }
        roc_curves[kind] = roc_with_bounds(results, labels)
    matrix_n = matrix_from_fold_results(results_by_strategy)

    matrix_w = None
    retention = None
    conflicts: list[ConflictMatrix] = []
    tercile_count = None
    tercile_ids: list[str] = []
    summary_w = summary_n = None
    if has_w:
        matrix_w = predict_indeterminacy_set(
            cohort, strategies, cfg.forest, cfg.k_folds, cfg.seed, propensity_model
        )
        retention = retention_fraction(matrix_w, cfg.retention_threshold)
        conflicts = [
            conflict_matrix(matrix_w, cfg.conflict_low, high)
            for high in cfg.conflict_highs
        ]
        if len(matrix_w.instance_ids) >= 3:
            tercile_count, tercile_ids = tercile_instability(matrix_w)
        pairs = tuple((cfg.conflict_low, high) for high in cfg.conflict_highs)
        summary_w, summary_n = disagreement_summary(matrix_w, matrix_n, pairs)

    index = _build_index(
        cfg,
        cohort,
        auc_summary,
        retention,
        conflicts,
        tercile_count,
        summary_w,
        summary_n,
        propensity_auc,
        has_w,
    )

    _write_report_dir(
        out_dir,
        cfg,
        index,
        auc_summary,
        roc_curves,
        matrix_n,
        matrix_w,
        retention,
        conflicts,
        tercile_count,
        tercile_ids,
        summary_w,
        summary_n,
        propensity_model,
    )

    return AuditReport(
        output_dir=out_dir,
        strategies=STRATEGY_KINDS,
        auc_summary=auc_summary,
        roc_curves=roc_curves,
        matrix_n=matrix_n,
        matrix_w=matrix_w,
        retention=retention,
        conflicts=conflicts,
        tercile_count=tercile_count,
        tercile_ids=tercile_ids,
        summary_w=summary_w,
        summary_n=summary_n,
        index=index,
    )


def _build_index(
    cfg,
    cohort,
    auc_summary,
    retention,
    conflicts,
    tercile_count,
    summary_w,
    summary_n,
    propensity_auc,
    has_w,
) -> dict:
    gen_cfg = cohort.metadata.get("generator_config")
    pairs = [(cfg.conflict_low, high) for high in cfg.conflict_highs]
    multiplicity_section = {"status": "not_applicable"}
    if has_w:
        multiplicity_section = {
            "status": "ok",
            "files": ["predictions_W.csv", "retention.csv", "tercile_instability.json"]
            + [f"conflict_{lo:g}_{hi:g}.csv" for lo, hi in pairs],
            "retention": retention,
            "tercile_unstable_count": tercile_count,
            "conflict_any_fraction": {
                f"low_{lo:g}_high_{hi:g}": summary_w.conflict_fraction((lo, hi))
                for lo, hi in pairs
            },
        }
    comparison_section = {"status": "not_applicable"}
    if has_w:
        comparison_section = {
            "status": "ok",
            "files": ["disagreement_summary.csv"],
            "mean_max_difference": {
                "W": summary_w.mean_max_difference,
                "N_holdout": summary_n.mean_max_difference,
            },
            "mean_variance": {
                "W": summary_w.mean_variance,
                "N_holdout": summary_n.mean_variance,
            },
            "conflict_fraction": {
                f"low_{lo:g}_high_{hi:g}": {
                    "W": summary_w.conflict_fraction((lo, hi)),
                    "N_holdout": summary_n.conflict_fraction((lo, hi)),
                }
                for lo, hi in pairs
            },
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "strategies": list(STRATEGY_KINDS),
        "cohort": {
            "n_instances": len(cohort.instances),
            "n_observed": len(cohort.observed_instances),
            "n_indeterminate": len(cohort.indeterminate_instances),
            "dimension": cohort.dimension,
            "source": cohort.metadata.get("source", "unknown"),
            "generator_config": gen_cfg,
        },
        "sections": {
            "known_label_metrics": {
                "status": "ok",
                "files": ["auc_summary.csv", "predictions_N_holdout.csv"]
                + [f"roc_{k}.csv" for k in STRATEGY_KINDS],
                "auc": auc_summary,
                "roc_axes": {
                    "positive_class": "recovery",
                    "x": "false positive rate (share of recoveries flagged as non-recovery "
                    "under the non-recovery orientation; 1 - specificity here)",
                    "y": "true positive rate (sensitivity for recovery)",
                },
            },
            "indeterminacy_predictions": multiplicity_section,
            "disagreement_comparison": comparison_section,
        },
        "propensity": {
            "holdout_auc": None if math.isnan(propensity_auc) else propensity_auc,
            "file": "propensity_model.json" if has_w else None,
        },
        "context_reference_values": CONTEXT_REFERENCE_VALUES,
        "provenance": _provenance(cfg, cohort, ipw_active=has_w),
    }


def _write_report_dir(
    out_dir,
    cfg,
    index,
    auc_summary,
    roc_curves,
    matrix_n,
    matrix_w,
    retention,
    conflicts,
    tercile_count,
    tercile_ids,
    summary_w,
    summary_n,
    propensity_model,
) -> None:
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.tmp-", dir=out_dir.parent))
    try:
        _write_csv(
            tmp / "auc_summary.csv",
            ["strategy", "mean_auc", "std_auc", "n_folds"],
            [
                [k, _fmt(v["mean"]), _fmt(v["std"]), v["n_folds"]]
                for k, v in auc_summary.items()
            ],
        )
        for kind, curve in roc_curves.items():
            _write_csv(
                tmp / f"roc_{kind}.csv",
                ["fpr", "mean_tpr", "tpr_std"],
                [
                    [_fmt(f), _fmt(m), _fmt(s)]
                    for f, m, s in zip(curve.fpr_grid, curve.mean_tpr, curve.tpr_std)
                ],
            )
        _write_matrix_csv(tmp / "predictions_N_holdout.csv", matrix_n)

        if matrix_w is not None:
            _write_matrix_csv(tmp / "predictions_W.csv", matrix_w)
            _write_csv(
                tmp / "retention.csv",
                ["strategy", "threshold", "retention_fraction"],
                [
                    [k, _fmt(cfg.retention_threshold), _fmt(v)]
                    for k, v in retention.items()
                ],
            )
            for cm in conflicts:
                _write_csv(
                    tmp / f"conflict_{cm.low_threshold:g}_{cm.high_threshold:g}.csv",
                    ["row_strategy"] + list(cm.strategies),
                    [
                        [kind] + [int(c) for c in cm.counts[r]]
                        for r, kind in enumerate(cm.strategies)
                    ],
                )
            _write_json(
                tmp / "tercile_instability.json",
                {"count": tercile_count, "instance_ids": tercile_ids},
            )
            pair_cols = [
                f"conflict_low_{lo:g}_high_{hi:g}" for lo, hi in summary_w.conflict_flags
            ]
            rows = []
            for summary in (summary_w, summary_n):
                for i, iid in enumerate(summary.instance_ids):
                    rows.append(
                        [summary.subset_tag, iid]
                        + [_fmt(summary.max_difference[i]), _fmt(summary.variance[i])]
                        + [int(summary.conflict_flags[p][i]) for p in summary.conflict_flags]
                    )
            _write_csv(
                tmp / "disagreement_summary.csv",
                ["subset", "instance_id", "max_difference", "variance"] + pair_cols,
                rows,
            )
            fan_order = np.argsort(-summary_w.max_difference, kind="stable")
            for i in fan_order[: cfg.fan_top_n]:
                iid = summary_w.instance_ids[i]
                _write_csv(
                    tmp / f"fan_{iid}.csv",
                    ["strategy", "prediction"],
                    [
                        [kind, _fmt(matrix_w.values[list(matrix_w.instance_ids).index(iid), c])]
                        for c, kind in enumerate(matrix_w.strategies)
                    ],
                )
            propensity_model.save_json(tmp / "propensity_model.json")

        _write_json(tmp / "index.json", index)

        if out_dir.exists():
            out_dir.rmdir()  # known empty from the pre-check
        os.rename(tmp, out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _write_matrix_csv(path: Path, matrix: PredictionMatrix) -> None:
    _write_csv(
        path,
        ["instance_id"] + list(matrix.strategies),
        [
            [iid] + [_fmt(v) for v in matrix.values[r]]
            for r, iid in enumerate(matrix.instance_ids)
        ],
    )
