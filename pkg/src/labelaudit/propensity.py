"""Observation-propensity estimation and inverse-propensity weighting.

A regularized logistic regression predicts the probability that an
instance's label was observed; observed-sourced training examples are then
reweighted by the inverse of the clipped propensity.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cohort import Cohort
from .labeling import TrainingExample

__all__ = [
    "PropensityError",
    "PropensityScorer",
    "penalized_log_likelihood",
    "penalized_log_likelihood_grad",
    "fit_propensity",
    "propensity_weights",
    "constant_propensity",
]

GRADIENT_TOLERANCE = 1e-8


class PropensityError(ValueError):
    """Raised for degenerate propensity-fitting input."""


class PropensityWarning(UserWarning):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def penalized_log_likelihood(params, X, y, l2):
    """L2-penalized Bernoulli log-likelihood; params = (coef..., intercept).

    The intercept is not penalized. Computed via the overflow-safe
    log(1 + exp) form.
    """
    coef, intercept = params[:-1], params[-1]
    z = X @ coef + intercept
    # log(1 + exp(z)) in the overflow-safe max(z, 0) + log1p(exp(-|z|)) form
    log1pexp = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    ll = np.sum(y * z - log1pexp)
    return ll - 0.5 * l2 * float(coef @ coef)


def penalized_log_likelihood_grad(params, X, y, l2):
    """Analytic gradient of :func:`penalized_log_likelihood`."""
    coef, intercept = params[:-1], params[-1]
    z = X @ coef + intercept
    resid = y - _sigmoid(z)
    grad = np.empty_like(params)
    grad[:-1] = X.T @ resid - l2 * coef
    grad[-1] = resid.sum()
    return grad


class PropensityScorer(BaseEstimator):
    """Logistic model of P(label observed | covariates).

    Features are standardized with stored means and scales; the optimizer is
    a deterministic full-batch damped Newton iteration on the penalized
    log-likelihood, run to a gradient norm below 1e-8 or a fixed iteration
    cap.
    """

    def __init__(
        self,
        l2: float = 1.0,
        clip_epsilon: float = 0.01,
        max_iter: int = 500,
        seed: int = 0,
    ):
        self.l2 = l2
        self.clip_epsilon = clip_epsilon
        self.max_iter = max_iter
        self.seed = seed

    def _validate_params(self):
        if self.l2 < 0:
            raise PropensityError("l2 must be nonnegative")
        if not (0.0 < self.clip_epsilon < 0.5):
            raise PropensityError("clip_epsilon must be in (0, 0.5)")
        if self.max_iter < 0:
            raise PropensityError("max_iter must be nonnegative")

    def fit(self, X, y):
        self._validate_params()
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if set(np.unique(y)) == {0.0} or set(np.unique(y)) == {1.0}:
            raise PropensityError(
                "degenerate cohort: observation status is constant"
            )
        self.feature_means_ = X.mean(axis=0)
        scales = X.std(axis=0)
        scales[scales == 0.0] = 1.0
        self.feature_scales_ = scales
        Xs = (X - self.feature_means_) / self.feature_scales_

        params = np.zeros(X.shape[1] + 1)
        self.converged_ = self.max_iter == 0
        # Damped Newton on the (strictly concave) penalized log-likelihood:
        # full-batch, fixed step policy, deterministic.
        Xa = np.hstack([Xs, np.ones((Xs.shape[0], 1))])
        reg = np.zeros(Xa.shape[1])
        reg[:-1] = self.l2
        for _ in range(self.max_iter):
            grad = penalized_log_likelihood_grad(params, Xs, y, self.l2)
            if float(np.max(np.abs(grad))) <= GRADIENT_TOLERANCE:
                self.converged_ = True
                break
            p = _sigmoid(Xa @ params)
            hess = (Xa * (p * (1.0 - p))[:, None]).T @ Xa + np.diag(reg)
            step = np.linalg.solve(hess + 1e-10 * np.eye(len(params)), grad)
            ll = penalized_log_likelihood(params, Xs, y, self.l2)
            scale = 1.0
            while scale > 1e-8:
                cand = params + scale * step
                if penalized_log_likelihood(cand, Xs, y, self.l2) >= ll:
                    break
                scale *= 0.5
            params = params + scale * step
        if not self.converged_:
            gnorm = float(
                np.max(np.abs(penalized_log_likelihood_grad(params, Xs, y, self.l2)))
            )
            if gnorm <= GRADIENT_TOLERANCE:
                self.converged_ = True
            else:
                warnings.warn(
                    f"propensity fit stopped with gradient norm {gnorm:.3e} "
                    f"above {GRADIENT_TOLERANCE:.0e} after {self.max_iter} "
                    "iterations",
                    PropensityWarning,
                )
        self.coef_ = params[:-1]
        self.intercept_ = float(params[-1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        """Unclipped observation probabilities for raw (unstandardized) X."""
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        Xs = (X - self.feature_means_) / self.feature_scales_
        return _sigmoid(Xs @ self.coef_ + self.intercept_)

    def clipped_proba(self, X) -> np.ndarray:
        eps = self.clip_epsilon
        return np.clip(self.predict_proba(X), eps, 1.0 - eps)

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "coefficients": self.coef_.tolist(),
            "intercept": self.intercept_,
            "feature_means": self.feature_means_.tolist(),
            "feature_scales": self.feature_scales_.tolist(),
            "clip_epsilon": self.clip_epsilon,
            "l2": self.l2,
            "converged": self.converged_,
        }

    def save_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def constant_propensity(
    value: float, dimension: int, clip_epsilon: float = 0.01
) -> PropensityScorer:
    """A degenerate scorer predicting the same probability everywhere.

    Used to verify that a constant propensity leaves the downstream forest
    unchanged up to a uniform weight rescaling.
    """
    if not (0.0 < value < 1.0):
        raise PropensityError("constant propensity must be in (0, 1)")
    model = PropensityScorer(clip_epsilon=clip_epsilon)
    model.coef_ = np.zeros(dimension)
    model.intercept_ = float(np.log(value / (1.0 - value)))
    model.feature_means_ = np.zeros(dimension)
    model.feature_scales_ = np.ones(dimension)
    model.converged_ = True
    model.n_features_in_ = dimension
    return model


def fit_propensity(
    cohort: Cohort,
    l2: float = 1.0,
    seed: int = 0,
    clip_epsilon: float = 0.01,
    max_iter: int = 500,
) -> PropensityScorer:
    """Fit the observation-propensity model on a full cohort."""
    if not cohort.observed_instances or not cohort.indeterminate_instances:
        raise PropensityError(
            "degenerate cohort: need both observed and unobserved instances"
        )
    X = cohort.covariate_matrix()
    y = np.array([1.0 if i.observed else 0.0 for i in cohort.instances])
    return PropensityScorer(
        l2=l2, clip_epsilon=clip_epsilon, max_iter=max_iter, seed=seed
    ).fit(X, y)


def holdout_auc(cohort: Cohort, l2: float = 1.0, seed: int = 0) -> float:
    """Held-out AUC of the propensity model, reported for context only."""
    from .evaluation import auc_score

    rng = np.random.default_rng(seed)
    n = len(cohort.instances)
    perm = rng.permutation(n)
    cut = max(int(0.8 * n), 1)
    train_idx, test_idx = perm[:cut], perm[cut:]
    X = cohort.covariate_matrix()
    y = np.array([1.0 if i.observed else 0.0 for i in cohort.instances])
    if len(set(y[train_idx])) < 2 or len(set(y[test_idx])) < 2:
        return float("nan")
    model = PropensityScorer(l2=l2, seed=seed).fit(X[train_idx], y[train_idx])
    return auc_score(model.predict_proba(X[test_idx]), y[test_idx].astype(int))


def propensity_weights(
    model: PropensityScorer, examples: list[TrainingExample]
) -> list[TrainingExample]:
    """Divide observed-sourced example weights by their clipped propensity.

    Examples derived from indeterminate instances are treated as ground
    truth and keep their weight unchanged.
    """
    check_is_fitted(model, "coef_")
    reweighted = []
    observed = [e for e in examples if e.from_observed]
    if observed:
        X = np.array([e.covariates for e in observed], dtype=np.float64)
        probs = model.clipped_proba(X)
    probs_iter = iter(probs if observed else ())
    for e in examples:
        if e.from_observed:
            reweighted.append(replace(e, weight=e.weight / float(next(probs_iter))))
        else:
            reweighted.append(e)
    return reweighted
