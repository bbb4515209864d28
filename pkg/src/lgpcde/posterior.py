"""Posterior summaries: density bands, partitions, changepoints, weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .lgp import Grid, RegionFit, density_draws
from .mcmc import Chain
from .tessellation import Dataset, Tessellation, assign_regions

__all__ = [
    "DensityEstimate",
    "PartitionSummary",
    "summarize_density",
    "extract_changepoints",
    "axis_changepoints",
    "summarize_partition",
    "weight_report",
]


@dataclass(frozen=True)
class DensityEstimate:
    grid: Grid
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    region_id: int
    n_draws: int
    level: float

    @property
    def y(self) -> np.ndarray:
        return self.grid.centers

    def integral(self) -> float:
        return float(self.grid.width * self.mean.sum())

    def quantile(self, q: float) -> float:
        """Quantile of the posterior-mean density (piecewise constant on bins)."""
        mass = self.mean * self.grid.width
        cdf = np.concatenate([[0.0], np.cumsum(mass / mass.sum())])
        return float(np.interp(q, cdf, self.grid.edges))

    def central_interval(self, mass: float = 0.9) -> tuple[float, float]:
        a = 0.5 * (1.0 - mass)
        return self.quantile(a), self.quantile(1.0 - a)


@dataclass(frozen=True)
class PartitionSummary:
    tess: Tessellation
    centers: np.ndarray
    region_sizes: np.ndarray
    labels: np.ndarray
    fits: list
    w: np.ndarray
    changepoints: np.ndarray | None


def summarize_density(
    fit: RegionFit,
    level: float = 0.9,
    n_draws: int = 4000,
    seed=None,
    y_mean: float = 0.0,
    y_sd: float = 1.0,
    region_id: int = 0,
) -> DensityEstimate:
    """Pointwise posterior mean and equal-tailed band, on the original y scale."""
    if not 0.0 < level < 1.0:
        raise ArgumentError("level must lie in (0, 1)")
    draws = density_draws(fit, n_draws, seed)
    lo_q, hi_q = 0.5 * (1.0 - level), 0.5 * (1.0 + level)
    mean = draws.mean(axis=0)
    lower, upper = np.quantile(draws, [lo_q, hi_q], axis=0)
    # an equal-tailed band can miss the mean only by rounding
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    g = fit.grid
    grid = Grid(g.lo * y_sd + y_mean, g.hi * y_sd + y_mean, g.r)
    return DensityEstimate(grid, mean / y_sd, lower / y_sd, upper / y_sd, region_id, n_draws, level)


def extract_changepoints(tess: Tessellation, data: Dataset, standardized: bool = False) -> np.ndarray:
    """Region boundaries of a one-covariate tessellation.

    Midpoints between consecutive sorted center coordinates, returned on
    the original covariate scale unless ``standardized``.
    """
    if data.p != 1:
        raise ArgumentError("changepoints are defined only for a single covariate")
    c = np.sort(data.x[list(tess.center_idx), 0])
    mids = 0.5 * (c[1:] + c[:-1])
    if standardized:
        return mids
    return mids * data.col_sds[0] + data.col_means[0]


def axis_changepoints(
    tess: Tessellation,
    data: Dataset,
    axis: int = 0,
    at=None,
    standardized: bool = False,
) -> np.ndarray:
    """Region boundaries met along one covariate, others held at ``at``.

    ``at`` is a standardized point (default: the covariate means).  Along
    the line every weighted squared distance is ``w_a t**2`` plus a term
    linear in ``t``, so the nearest center is the lower envelope of lines
    and the boundaries are found exactly.  Only boundaries inside the
    observed range of the covariate are reported.
    """
    if not 0 <= axis < data.p:
        raise ArgumentError("axis out of range")
    base = np.zeros(data.p) if at is None else np.asarray(at, float).copy()
    C = data.x[list(tess.center_idx)]
    w = tess.w
    wa = w[axis]
    lo, hi = data.x[:, axis].min(), data.x[:, axis].max()
    if wa <= 0 or tess.M == 1:
        return np.empty(0)
    other = np.arange(data.p) != axis
    rest = ((base[other] - C[:, other]) ** 2) @ w[other]
    slope = -2.0 * wa * C[:, axis]
    icpt = wa * C[:, axis] ** 2 + rest

    def label(t):
        return int(np.argmin(slope * t + icpt))

    cand = []
    M = tess.M
    for i in range(M):
        for j in range(i + 1, M):
            ds = slope[i] - slope[j]
            if ds != 0:
                t = (icpt[j] - icpt[i]) / ds
                if lo < t < hi:
                    cand.append(t)
    pts = np.unique(np.concatenate([[lo, hi], cand]))
    mids = 0.5 * (pts[1:] + pts[:-1])
    labels = [label(t) for t in mids]
    cps = [pts[k + 1] for k in range(len(mids) - 1) if labels[k] != labels[k + 1]]
    out = np.asarray(cps, float)
    if standardized:
        return out
    return out * data.col_sds[axis] + data.col_means[axis]


def summarize_partition(tess: Tessellation, data: Dataset, fits) -> PartitionSummary:
    asg = assign_regions(data, tess)
    centers = data.original_x()[list(tess.center_idx)]
    cps = extract_changepoints(tess, data) if data.p == 1 else None
    return PartitionSummary(tess, centers, asg.region_sizes, asg.labels, list(fits), tess.w.copy(), cps)


def weight_report(chain: Chain, criterion: str = "marginal") -> dict:
    """Per-iteration weight traces plus the weights of the selected tessellation."""
    if not chain.samples:
        raise ArgumentError("empty chain")
    traces = np.array([s.tess.w for s in chain.samples])
    if criterion == "marginal":
        sel = chain.samples[chain.best_by_marginal].tess
    elif criterion == "posterior":
        sel = chain.mode_tessellation
    else:
        raise ArgumentError(f"unknown criterion {criterion!r}")
    return {
        "selected": sel.w.copy(),
        "traces": traces,
        "iters": np.array([s.iter for s in chain.samples]),
    }
