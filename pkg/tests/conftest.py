"""Shared fixtures and helpers for the labelaudit test suite."""

import numpy as np
import pytest

from labelaudit.cohort import Cohort, CohortInstance


def observed_instance(iid, covs, label):
    return CohortInstance(iid, tuple(float(v) for v in covs), observed=True,
                          known_label=int(label))


def wlst_instance(iid, covs, ratings):
    return CohortInstance(iid, tuple(float(v) for v in covs), observed=False,
                          expert_ratings=tuple(int(r) for r in ratings))


def random_cohort(rng, n_obs, n_wlst, d, panel_size=3):
    """Random cohort with continuous covariates and both label classes."""
    instances = []
    width = len(str(n_obs + n_wlst))
    for i in range(n_obs):
        # guarantee both classes so CV training never degenerates
        label = i % 2 if i < 2 else int(rng.random() < 0.5)
        instances.append(
            observed_instance(f"n{i:0{width}d}", rng.standard_normal(d), label)
        )
    for i in range(n_wlst):
        ratings = rng.integers(0, 7, size=panel_size)
        instances.append(
            wlst_instance(f"w{i:0{width}d}", rng.standard_normal(d), ratings)
        )
    return Cohort(tuple(instances), d)


def forests_equal(a, b, value_atol=0.0):
    """Node-for-node structural equality of two fitted forests."""
    if len(a.trees_) != len(b.trees_):
        return False
    for ta, tb in zip(a.trees_, b.trees_):
        feat_a, thr_a, left_a, right_a, val_a, w_a = ta
        feat_b, thr_b, left_b, right_b, val_b, w_b = tb
        if feat_a.shape != feat_b.shape:
            return False
        if not (
            np.array_equal(feat_a, feat_b)
            and np.array_equal(left_a, left_b)
            and np.array_equal(right_a, right_b)
        ):
            return False
        if value_atol == 0.0:
            if not (np.array_equal(thr_a, thr_b) and np.array_equal(val_a, val_b)):
                return False
        else:
            if not (
                np.allclose(thr_a, thr_b, rtol=0.0, atol=value_atol)
                and np.allclose(val_a, val_b, rtol=0.0, atol=value_atol)
            ):
                return False
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
