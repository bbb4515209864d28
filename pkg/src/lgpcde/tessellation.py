"""Weighted Voronoi tessellations over observed covariate points.

A tessellation is a set of center *indices* into the data (centers are
always observed covariate vectors) plus a weight vector on the simplex
that defines the squared distance ``sum_k w_k v_k**2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .errors import ArgumentError, InvalidStateError

__all__ = [
    "Dataset",
    "Tessellation",
    "RegionAssignment",
    "standardize",
    "weighted_sq_norm",
    "assign_regions",
    "tessellation_log_prior",
    "log_dirichlet_pdf",
    "partition_symmdiff_estimate",
]

WEIGHT_FLOOR = 1e-15


@dataclass(frozen=True)
class Dataset:
    """Standardized covariates and response with restore metadata."""

    x: np.ndarray
    y: np.ndarray
    col_means: np.ndarray
    col_sds: np.ndarray
    y_mean: float
    y_sd: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ArgumentError("x must be (n, p) with n matching len(y)")
        if x.shape[0] < 2 or x.shape[1] < 1:
            raise ArgumentError("need n >= 2 and p >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ArgumentError("non-finite entries in data")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "col_means", np.asarray(self.col_means, float))
        object.__setattr__(self, "col_sds", np.asarray(self.col_sds, float))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def original_x(self) -> np.ndarray:
        return self.x * self.col_sds + self.col_means

    def original_y(self) -> np.ndarray:
        return self.y * self.y_sd + self.y_mean


def _center_scale(a):
    mean = a.mean(axis=0)
    sd = a.std(axis=0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return (a - mean) / sd, mean, sd


def standardize(x, y) -> Dataset:
    """Center and scale every covariate column and the response.

    Columns with zero variance are centered only.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] < 2:
        raise ArgumentError("need at least two observations")
    xs, means, sds = _center_scale(x)
    ys, ym, ysd = _center_scale(y)
    return Dataset(xs, ys, means, sds, float(ym), float(ysd))


@dataclass(frozen=True)
class Tessellation:
    center_idx: tuple
    w: np.ndarray = field(compare=False)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.center_idx)
        if len(idx) < 1:
            raise InvalidStateError("a tessellation needs at least one center")
        if len(set(idx)) != len(idx):
            raise InvalidStateError("center indices must be distinct")
        w = np.array(self.w, dtype=float).ravel()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidStateError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidStateError(f"weights sum to {w.sum()!r}, not 1")
        w.flags.writeable = False
        object.__setattr__(self, "center_idx", idx)
        object.__setattr__(self, "w", w)

    @property
    def M(self) -> int:
        return len(self.center_idx)

    def __eq__(self, other):
        if not isinstance(other, Tessellation):
            return NotImplemented
        return self.center_idx == other.center_idx and np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash((self.center_idx, self.w.tobytes()))

    def validate(self, n: int, M_max: int | None = None) -> None:
        if any(i < 0 or i >= n for i in self.center_idx):
            raise InvalidStateError("center index out of range")
        if M_max is not None and self.M > M_max:
            raise InvalidStateError(f"M={self.M} exceeds M_max={M_max}")

    def key(self, decimals: int = 6) -> tuple:
        """Identity used to count repeated tessellations in a chain."""
        return (tuple(sorted(self.center_idx)), tuple(np.round(self.w, decimals)))

    @classmethod
    def uniform(cls, center_idx: Sequence[int], p: int) -> "Tessellation":
        return cls(tuple(center_idx), np.full(p, 1.0 / p))


@dataclass(frozen=True)
class RegionAssignment:
    labels: np.ndarray
    region_sizes: np.ndarray

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)


def weighted_sq_norm(v, w) -> float:
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.shape[-1] != w.shape[-1]:
        raise ArgumentError(f"dimension mismatch: {v.shape[-1]} vs {w.shape[-1]}")
    return float(np.sum(w * v * v))


def _weighted_distances(x, centers, w):
    # (n, M) matrix of weighted squared distances
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("nmk,k->nm", diff * diff, w)


def assign_regions(data: Dataset, tess: Tessellation) -> RegionAssignment:
    """Label each observation with its nearest center under the weighted norm.

    Ties go to the center listed first in ``tess.center_idx``.
    """
    tess.validate(data.n)
    if tess.w.shape[0] != data.p:
        raise ArgumentError("weight vector length does not match covariate dimension")
    centers = data.x[list(tess.center_idx)]
    labels = np.argmin(_weighted_distances(data.x, centers, tess.w), axis=1)
    return RegionAssignment(labels, np.bincount(labels, minlength=tess.M))


def log_dirichlet_pdf(x, alpha) -> float:
    x = np.maximum(np.asarray(x, dtype=float), WEIGHT_FLOOR)
    alpha = np.asarray(alpha, dtype=float)
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + np.sum((alpha - 1.0) * np.log(x)))


def tessellation_log_prior(tess: Tessellation, n: int, M_max: int) -> float:
    """Log prior: uniform M, uniform center subset, flat Dirichlet weights."""
    M = tess.M
    if M > M_max:
        raise InvalidStateError(f"M={M} exceeds M_max={M_max}")
    if M > n:
        raise InvalidStateError("more centers than observations")
    log_choose = gammaln(n + 1) - gammaln(M + 1) - gammaln(n - M + 1)
    p = tess.w.shape[0]
    return float(-np.log(M_max) - log_choose + log_dirichlet_pdf(tess.w, np.ones(p)))


def partition_symmdiff_estimate(
    region_set_a: Callable[[np.ndarray], np.ndarray],
    region_set_b: Callable[[np.ndarray], np.ndarray],
    domain_box,
    samples: int = 100_000,
    seed=None,
) -> tuple[float, float]:
    """Monte-Carlo measure of the symmetric difference of two sets.

    Parameters
    ----------
    region_set_a, region_set_b : callable
        Vectorized membership predicates mapping an ``(m, p)`` array of
        points to a boolean array of length ``m``.
    domain_box : array_like, shape (2, p)
        Lower and upper corners of the sampling box.
    samples : int
        Number of uniform points, at least 1000.

    Returns
    -------
    estimate, stderr : float
        Estimated Lebesgue measure of ``A ^ B`` inside the box and its
        Monte-Carlo standard error.
    """
    if samples < 1000:
        raise ArgumentError("samples must be >= 1000")
    box = np.asarray(domain_box, dtype=float)
    if box.ndim != 2 or box.shape[0] != 2:
        raise ArgumentError("domain_box must have shape (2, p)")
    lo, hi = box
    widths = hi - lo
    volume = float(np.prod(widths))
    if not volume > 0:
        raise ArgumentError("domain box has zero volume")
    rng = np.random.default_rng(seed)
    pts = lo + widths * rng.random((samples, lo.shape[0]))
    diff = np.asarray(region_set_a(pts), bool) ^ np.asarray(region_set_b(pts), bool)
    frac = diff.mean()
    se = np.sqrt(frac * (1.0 - frac) / samples)
    return volume * float(frac), volume * float(se)
