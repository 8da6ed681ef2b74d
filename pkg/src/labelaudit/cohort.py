"""Cohort data model, file ingestion, and seeded synthetic cohort generation.

A cohort is a set of patient-like instances split into two disjoint groups:
instances whose binary outcome was observed, and instances whose outcome is
unknowable because care was withdrawn (WLST). The latter carry a panel of
ordinal expert ratings instead of a label.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CohortError",
    "CohortInstance",
    "Cohort",
    "GeneratorConfig",
    "load_cohort",
    "save_cohort",
    "generate_cohort",
    "split_folds",
    "probability_to_rating",
    "load_generator_config",
]

RATING_MIN = 0
RATING_MAX = 6

# Upper bounds of the seven ordinal rating bins on the probability scale.
RATING_UPPER_BOUNDS = (0.00, 0.01, 0.05, 0.10, 0.25, 0.50, 1.00)


class CohortError(ValueError):
    """Raised when a cohort file or in-memory cohort violates the schema."""


@dataclass(frozen=True)
class CohortInstance:
    """One instance: covariates plus either a known label or expert ratings."""

    id: str
    covariates: tuple[float, ...]
    observed: bool
    known_label: int | None = None
    expert_ratings: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.observed:
            if self.known_label not in (0, 1):
                raise CohortError(
                    f"instance {self.id!r}: observed instance needs a binary label"
                )
            if self.expert_ratings is not None:
                raise CohortError(
                    f"instance {self.id!r}: observed instance must not carry ratings"
                )
        else:
            if self.known_label is not None:
                raise CohortError(
                    f"instance {self.id!r}: unobserved instance must not carry a label"
                )
            if not self.expert_ratings:
                raise CohortError(
                    f"instance {self.id!r}: unobserved instance needs >= 1 rating"
                )
            for r in self.expert_ratings:
                if not (RATING_MIN <= r <= RATING_MAX) or int(r) != r:
                    raise CohortError(
                        f"instance {self.id!r}: rating {r!r} outside 0..6"
                    )
        for v in self.covariates:
            if not math.isfinite(v):
                raise CohortError(f"instance {self.id!r}: non-finite covariate {v!r}")


@dataclass(frozen=True)
class Cohort:
    """Immutable collection of instances with a shared covariate dimension."""

    instances: tuple[CohortInstance, ...]
    dimension: int
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.instances:
            raise CohortError("empty cohort")
        if self.dimension <= 0:
            raise CohortError("dimension must be positive")
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise CohortError(f"duplicate id {inst.id!r}")
            seen.add(inst.id)
            if len(inst.covariates) != self.dimension:
                raise CohortError(
                    f"instance {inst.id!r}: covariate length "
                    f"{len(inst.covariates)} != dimension {self.dimension}"
                )

    @property
    def observed_instances(self) -> tuple[CohortInstance, ...]:
        return tuple(i for i in self.instances if i.observed)

    @property
    def indeterminate_instances(self) -> tuple[CohortInstance, ...]:
        return tuple(i for i in self.instances if not i.observed)

    def observed_labels(self) -> dict[str, int]:
        return {i.id: int(i.known_label) for i in self.observed_instances}

    def covariate_matrix(self, instances=None) -> np.ndarray:
        insts = self.instances if instances is None else instances
        return np.array([i.covariates for i in insts], dtype=np.float64)

    def restrict(self, drop_ids: set[str]) -> "Cohort":
        """New cohort without the given instances. Metadata is carried over."""
        kept = tuple(i for i in self.instances if i.id not in drop_ids)
        return Cohort(kept, self.dimension, dict(self.metadata))


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic cohort generator."""

    n_instances: int = 2676
    dimension: int = 8
    wlst_fraction_target: float = 0.617
    seed: int = 0
    confounder_strength: float = 1.5
    clinician_noise: float = 1.2
    panel_size: int = 3
    expert_noise: float = 0.3

    def __post_init__(self):
        if self.n_instances <= 0:
            raise CohortError("n_instances must be positive")
        if self.dimension <= 0:
            raise CohortError("dimension must be positive")
        if not (0.0 < self.wlst_fraction_target < 1.0):
            raise CohortError("wlst_fraction_target must be in (0, 1)")
        if self.confounder_strength < 0:
            raise CohortError("confounder_strength must be nonnegative")
        if self.clinician_noise < 0:
            raise CohortError("clinician_noise must be nonnegative")
        if self.panel_size < 1:
            raise CohortError("panel_size must be >= 1")
        if self.expert_noise < 0:
            raise CohortError("expert_noise must be nonnegative")


def probability_to_rating(p: float) -> int:
    """Bin a recovery probability into the 7-point ordinal rating scale.

    Each rating covers a half-open interval whose upper bound is the
    corresponding soft-label value; rating 0 is reserved for exactly zero.
    """
    if p <= 0.0:
        return 0
    for rating in range(1, RATING_MAX + 1):
        if p <= RATING_UPPER_BOUNDS[rating]:
            return rating
    return RATING_MAX


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def generate_cohort(cfg: GeneratorConfig) -> Cohort:
    """Generate a deterministic synthetic cohort with selective labeling.

    Covariates are standard normal. A latent recovery probability
    ``p(x) = sigmoid(w.x + b)`` drives both the observed labels and the
    simulated expert ratings. Withdrawal is decided by thresholding a noisy
    clinician score ``logit(p) + confounder_strength*u + clinician_noise*g``
    at the empirical quantile matching the target WLST fraction, so the
    realized fraction matches the target up to integer rounding. The hidden
    confounder ``u`` enters only the withdrawal score, never ``p(x)``.

    The latent probabilities are stored in ``metadata['latent_p']`` for
    diagnostics; label-construction code must not read them.
    """
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.n_instances, cfg.dimension

    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    w *= 2.5 / max(np.linalg.norm(w), 1e-12)
    b = -0.5
    logit_p = X @ w + b
    p = _sigmoid(logit_p)

    confounder = rng.standard_normal(n)
    clinician_jitter = rng.standard_normal(n)
    score = (
        logit_p
        + cfg.confounder_strength * confounder
        + cfg.clinician_noise * clinician_jitter
    )
    n_wlst = int(round(cfg.wlst_fraction_target * n))
    n_wlst = min(max(n_wlst, 1), n - 1)
    # Withdraw the n_wlst lowest-scoring instances; ranking ties broken by index.
    order = np.argsort(score, kind="stable")
    wlst_mask = np.zeros(n, dtype=bool)
    wlst_mask[order[:n_wlst]] = True

    labels = (rng.random(n) < p).astype(int)
    rating_noise = rng.standard_normal((n, cfg.panel_size))

    width = len(str(n - 1))
    instances = []
    for i in range(n):
        iid = f"p{i:0{width}d}"
        cov = tuple(float(v) for v in X[i])
        if wlst_mask[i]:
            perturbed = np.clip(p[i] + cfg.expert_noise * rating_noise[i], 0.0, 1.0)
            ratings = tuple(probability_to_rating(float(q)) for q in perturbed)
            instances.append(
                CohortInstance(iid, cov, observed=False, expert_ratings=ratings)
            )
        else:
            instances.append(
                CohortInstance(iid, cov, observed=True, known_label=int(labels[i]))
            )

    metadata = {
        "source": "synthetic",
        "generator_config": {
            "n_instances": cfg.n_instances,
            "dimension": cfg.dimension,
            "wlst_fraction_target": cfg.wlst_fraction_target,
            "seed": cfg.seed,
            "confounder_strength": cfg.confounder_strength,
            "clinician_noise": cfg.clinician_noise,
            "panel_size": cfg.panel_size,
            "expert_noise": cfg.expert_noise,
        },
        "covariate_distribution": "iid standard normal (artifact choice)",
        "latent_p": [float(v) for v in p],
        "latent_weights": [float(v) for v in w],
        "latent_intercept": float(b),
    }
    return Cohort(tuple(instances), d, metadata)


# ---------------------------------------------------------------------------
# File I/O

CSV_FIXED_FIELDS = ("id", "observed", "label", "ratings")


def _parse_bool(raw: str, row: int) -> bool:
    val = raw.strip().lower()
    if val in ("true", "1"):
        return True
    if val in ("false", "0"):
        return False
    raise CohortError(f"row {row}: cannot parse observed flag {raw!r}")


def _instance_from_fields(
    iid, observed_raw, label_raw, ratings, covs, row: int
) -> CohortInstance:
    if not iid:
        raise CohortError(f"row {row}: empty id")
    observed = (
        observed_raw if isinstance(observed_raw, bool) else _parse_bool(observed_raw, row)
    )
    label = None
    if label_raw not in (None, ""):
        try:
            label = int(label_raw)
        except (TypeError, ValueError):
            raise CohortError(f"row {row}: bad label {label_raw!r}") from None
        if label not in (0, 1):
            raise CohortError(f"row {row}: label {label} is not binary")
    try:
        covariates = tuple(float(v) for v in covs)
    except (TypeError, ValueError):
        raise CohortError(f"row {row}: non-numeric covariate") from None
    for v in covariates:
        if not math.isfinite(v):
            raise CohortError(f"row {row}: non-finite covariate in instance {iid!r}")
    try:
        return CohortInstance(
            iid,
            covariates,
            observed=observed,
            known_label=label,
            expert_ratings=tuple(int(r) for r in ratings) if ratings else None,
        )
    except CohortError as exc:
        raise CohortError(f"row {row}: {exc}") from None


def load_cohort(path: str | Path, format: str | None = None) -> Cohort:
    """Load and validate a cohort from a CSV or JSON file.

    The format is inferred from the file suffix when not given explicitly.
    """
    path = Path(path)
    if not path.exists():
        raise CohortError(f"cohort file not found: {path}")
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "json":
        return _load_json(path)
    raise CohortError(f"unknown cohort format {fmt!r}")


def _load_csv(path: Path) -> Cohort:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError("empty cohort") from None
        if tuple(header[:4]) != CSV_FIXED_FIELDS:
            raise CohortError(
                f"bad header: expected columns {','.join(CSV_FIXED_FIELDS)},x0,... "
                f"got {','.join(header[:4])}"
            )
        d = len(header) - 4
        if d <= 0:
            raise CohortError("bad header: no covariate columns")
        expected = CSV_FIXED_FIELDS + tuple(f"x{i}" for i in range(d))
        if tuple(header) != expected:
            raise CohortError("bad header: covariate columns must be x0..x{d-1}")
        instances = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CohortError(
                    f"row {row_num}: expected {len(header)} fields, got {len(row)}"
                )
            ratings_raw = row[3].strip()
            ratings = []
            if ratings_raw:
                for part in ratings_raw.split("|"):
                    try:
                        ratings.append(int(part))
                    except ValueError:
                        raise CohortError(
                            f"row {row_num}: bad rating {part!r}"
                        ) from None
            instances.append(
                _instance_from_fields(
                    row[0].strip(), row[1], row[2].strip(), ratings, row[4:], row_num
                )
            )
    if not instances:
        raise CohortError("empty cohort")
    return Cohort(tuple(instances), d, {"source": str(path)})


def _load_json(path: Path) -> Cohort:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CohortError(f"invalid JSON cohort file: {exc}") from None
    if not isinstance(data, list) or not data:
        raise CohortError("empty cohort")
    instances = []
    d = None
    for row_num, obj in enumerate(data, start=1):
        if not isinstance(obj, dict):
            raise CohortError(f"row {row_num}: expected an object")
        missing = {"id", "observed"} - obj.keys()
        if missing:
            raise CohortError(f"row {row_num}: missing fields {sorted(missing)}")
        covs = [obj.get(f"x{i}") for i in range(len(obj)) if f"x{i}" in obj]
        if d is None:
            d = len(covs)
        instances.append(
            _instance_from_fields(
                str(obj["id"]),
                bool(obj["observed"]),
                obj.get("label"),
                obj.get("ratings") or [],
                covs,
                row_num,
            )
        )
    return Cohort(tuple(instances), d, {"source": str(path)})


def save_cohort(cohort: Cohort, path: str | Path, format: str | None = None) -> None:
    """Write a cohort to disk in the CSV or JSON schema used by load_cohort."""
    path = Path(path)
    fmt = format or ("json" if path.suffix.lower() == ".json" else "csv")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                list(CSV_FIXED_FIELDS) + [f"x{i}" for i in range(cohort.dimension)]
            )
            for inst in cohort.instances:
                writer.writerow(
                    [
                        inst.id,
                        "true" if inst.observed else "false",
                        "" if inst.known_label is None else inst.known_label,
                        ""
                        if inst.expert_ratings is None
                        else "|".join(str(r) for r in inst.expert_ratings),
                    ]
                    + [repr(v) for v in inst.covariates]
                )
    elif fmt == "json":
        rows = []
        for inst in cohort.instances:
            row = {"id": inst.id, "observed": inst.observed}
            if inst.observed:
                row["label"] = inst.known_label
            else:
                row["ratings"] = list(inst.expert_ratings)
            for i, v in enumerate(inst.covariates):
                row[f"x{i}"] = v
            rows.append(row)
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1)
            fh.write("\n")
    else:
        raise CohortError(f"unknown cohort format {fmt!r}")


def load_generator_config(path: str | Path) -> GeneratorConfig:
    """Parse a flat ``key = value`` text file into a GeneratorConfig."""
    path = Path(path)
    if not path.exists():
        raise CohortError(f"generator config not found: {path}")
    values: dict[str, str] = {}
    for line_num, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CohortError(f"config line {line_num}: expected key = value")
        key, _, raw = line.partition("=")
        values[key.strip()] = raw.strip()
    kwargs = {}
    int_fields = {"n_instances", "dimension", "seed", "panel_size"}
    float_fields = {
        "wlst_fraction_target",
        "confounder_strength",
        "clinician_noise",
        "expert_noise",
    }
    for key, raw in values.items():
        if key in int_fields:
            kwargs[key] = int(raw)
        elif key in float_fields:
            kwargs[key] = float(raw)
        else:
            raise CohortError(f"unknown generator config key {key!r}")
    return GeneratorConfig(**kwargs)


def split_folds(cohort: Cohort, k: int, seed: int) -> list[list[str]]:
    """Split the observed-instance ids into k disjoint folds.

    Fold sizes differ by at most one, assignment is deterministic in the
    seed, and unobserved instances never appear in any fold.
    """
    if k < 2:
        raise CohortError("k must be >= 2")
    observed_ids = sorted(i.id for i in cohort.observed_instances)
    if len(observed_ids) < k:
        raise CohortError(
            f"cannot split {len(observed_ids)} observed instances into {k} folds"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(observed_ids))
    shuffled = [observed_ids[i] for i in perm]
    return [list(part) for part in np.array_split(np.array(shuffled), k)]
