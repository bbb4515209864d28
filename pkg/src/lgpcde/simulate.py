"""Synthetic data sets with known partition structure."""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .tessellation import Dataset, standardize

SCENARIOS = ("one_partition", "piecewise", "bivariate", "changing_form", "changepoint_series")


def piecewise_mean(x1):
    x1 = np.asarray(x1, float)
    return np.where(x1 < 2.5, 2.5**2, x1**2)


def bivariate_mean(x1, x2):
    return x2 / (1.0 + np.exp(-np.asarray(x1, float)))


def changing_form_mean(x1):
    x1 = np.asarray(x1, float)
    return np.where(x1 < 5, 3.0, -((x1 - 0.5) ** 2))


def changepoint_sds(n):
    """Per-observation standard deviation (1, 2.5, 1) over thirds of the index."""
    t = np.arange(n)
    return np.where((t >= n // 3) & (t < 2 * n // 3), 2.5, 1.0)


def simulate_raw(scenario: str, n: int, seed=None):
    """Draw ``(x, y)`` on the original scale."""
    if n < 100:
        raise ArgumentError("n must be >= 100")
    rng = np.random.default_rng(seed)
    if scenario == "one_partition":
        y = rng.normal(5.0, 0.5, n)
        x = np.column_stack([rng.normal(0.0, 1.0, n), rng.normal(0.0, 5.0, n)])
    elif scenario == "piecewise":
        x1 = rng.uniform(0.0, 5.0, n)
        x2 = rng.normal(3.0, 2.0, n)
        y = rng.normal(piecewise_mean(x1), 0.25)
        x = np.column_stack([x1, x2])
    elif scenario == "bivariate":
        x1 = rng.uniform(0.0, 5.0, n)
        x2 = rng.uniform(0.0, 5.0, n)
        y = rng.normal(bivariate_mean(x1, x2), 0.25)
        x = np.column_stack([x1, x2])
    elif scenario == "changing_form":
        x1 = rng.uniform(0.0, 10.0, n)
        x2 = rng.uniform(0.0, 5.0, n)
        x3 = rng.normal(0.0, 5.0, n)
        # Gamma(shape 2, scale x2), shifted to mean zero
        z = rng.gamma(2.0, x2) - 2.0 * x2
        y = np.where(x1 < 5, rng.normal(3.0, 0.5, n), changing_form_mean(x1) + z)
        x = np.column_stack([x1, x2, x3])
    elif scenario == "changepoint_series":
        x = np.arange(n, dtype=float)[:, None]
        y = rng.normal(0.0, changepoint_sds(n))
    else:
        raise ArgumentError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    return x, y


def simulate(scenario: str, n: int, seed=None) -> Dataset:
    x, y = simulate_raw(scenario, n, seed)
    return standardize(x, y)
