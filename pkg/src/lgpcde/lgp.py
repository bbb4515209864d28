"""Univariate logistic Gaussian process density estimation.

The response in one region is binned onto a regular grid.  A Gaussian
process prior with a quadratic mean basis (coefficients integrated out)
sits on the latent log-density values, the multinomial likelihood of the
bin counts is softmax in the latent values, and the latent posterior is
approximated by a Gaussian at its mode (Laplace).  Kernel hyperparameters
are set to their MAP values under half-Cauchy priors.

The Newton iterations use the parametrization ``f = m + C a`` so that the
(often very ill-conditioned) prior covariance is never inverted.  With
``W = n (diag(u) - u u^T) = V^T V`` the only factorization needed is of
the well-conditioned ``I + V C V^T``.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np
import scipy.linalg as sla
import scipy.optimize as spop

from .errors import ArgumentError, ConvergenceError, NumericalError, OutOfSupportError

__all__ = [
    "Grid",
    "BinnedCounts",
    "KernelParams",
    "BasisPrior",
    "RegionFit",
    "HyperCache",
    "build_grid",
    "bin_counts",
    "kernel_matrix",
    "basis_matrix",
    "prior_covariance",
    "log_likelihood",
    "newton_mode",
    "log_marginal",
    "log_hyperprior",
    "map_hyperparams",
    "fit_region",
    "density_draws",
]

NEWTON_TOL = 1e-6
NEWTON_MAXIT = 100
MAX_HALVINGS = 20
JITTER_START = 1e-10
JITTER_MAX = 1e-4
FD_STEP = 1e-4

# squared scales of the half-t(1) hyperpriors on sigma and on l
SIGMA_SCALE2 = 10.0
LENGTH_SCALE2 = 1.0

LOG_SIGMA2_BOUNDS = (np.log(1e-4), np.log(1e4))

# (sigma2, length-scale as a fraction of the grid span) screened when no
# starting point is given; the local search starts from the best of these
SCREEN_STARTS = [(s2, frac) for s2 in (0.1, 1.0) for frac in (0.02, 0.06, 0.2, 0.6)]


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    r: int

    def __post_init__(self):
        if self.r < 3:
            raise ArgumentError("grid needs r >= 3 bins")
        if not self.lo < self.hi:
            raise ArgumentError("grid needs lo < hi")

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.r

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.width * (np.arange(self.r) + 0.5)

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.r + 1)


@dataclass(frozen=True)
class BinnedCounts:
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class KernelParams:
    sigma2: float
    length_scale: float

    def __post_init__(self):
        for v in (self.sigma2, self.length_scale):
            if not (np.isfinite(v) and v > 0):
                raise ArgumentError("kernel parameters must be finite and positive")

    def to_log(self) -> np.ndarray:
        return np.log([self.sigma2, self.length_scale])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        return cls(float(np.exp(theta[0])), float(np.exp(theta[1])))


@dataclass(frozen=True)
class BasisPrior:
    """Gaussian prior N(b, B) on the quadratic mean coefficients."""

    b: np.ndarray = field(default_factory=lambda: np.zeros(2))
    B: np.ndarray = field(default_factory=lambda: np.diag([100.0, 100.0]))

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).reshape(2)
        B = np.asarray(self.B, dtype=float).reshape(2, 2)
        if not np.allclose(B, B.T):
            raise ArgumentError("B must be symmetric")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class RegionFit:
    grid: Grid
    counts: BinnedCounts
    params: KernelParams
    f_hat: np.ndarray
    sigma_post: np.ndarray
    log_marginal: float
    hyper_converged: bool = True

    @property
    def u(self) -> np.ndarray:
        """Posterior-mode bin probabilities."""
        return _softmax(self.f_hat)

    @property
    def log_marginal_density(self) -> float:
        """Laplace marginal of the raw responses under the binned density.

        Bin probabilities become densities after dividing by the bin
        width, so marginals of regions with different grids are
        comparable on this scale.
        """
        return self.log_marginal - self.counts.n * np.log(self.grid.width)


class LaplaceState(NamedTuple):
    f: np.ndarray
    a: np.ndarray
    sigma: np.ndarray | None
    logdet_b: float
    loglik: float
    n_iter: int
    grad_norm: float


def _logsumexp(f):
    c = f.max()
    return c + np.log(np.sum(np.exp(f - c)))


def _softmax(f):
    e = np.exp(f - f.max())
    return e / e.sum()


def build_grid(y_region, r: int = 100, pad_frac: float = 0.1) -> Grid:
    """Regular grid covering the data range padded by ``pad_frac`` of the range.

    A zero range is replaced by 1 before padding.
    """
    y = np.asarray(y_region, dtype=float).ravel()
    if y.size == 0 or not np.all(np.isfinite(y)):
        raise ArgumentError("y_region must be nonempty and finite")
    if r < 3:
        raise ArgumentError("r must be >= 3")
    if not 0.0 <= pad_frac <= 1.0:
        raise ArgumentError("pad_frac must lie in [0, 1]")
    ymin, ymax = float(y.min()), float(y.max())
    rng = ymax - ymin
    if rng == 0.0:
        rng = 1.0
    return Grid(ymin - pad_frac * rng, ymax + pad_frac * rng, int(r))


def bin_counts(y_region, grid: Grid) -> BinnedCounts:
    """Count observations per bin; a value on a bin edge goes to the lower bin."""
    y = np.asarray(y_region, dtype=float).ravel()
    tol = 1e-12 * max(1.0, abs(grid.lo), abs(grid.hi))
    if np.any(y < grid.lo - tol) or np.any(y > grid.hi + tol):
        raise OutOfSupportError("observation outside the grid support")
    j = np.ceil((y - grid.lo) / grid.width).astype(np.int64) - 1
    j = np.clip(j, 0, grid.r - 1)
    return BinnedCounts(np.bincount(j, minlength=grid.r).astype(float))


def kernel_matrix(grid: Grid, params: KernelParams) -> np.ndarray:
    z = grid.centers
    d = z[:, None] - z[None, :]
    return params.sigma2 * np.exp(-0.5 * (d * d) / params.length_scale**2)


def basis_matrix(grid: Grid) -> np.ndarray:
    z = grid.centers
    return np.column_stack([z, z * z])


def prior_covariance(
    grid: Grid, params: KernelParams, basis_prior: BasisPrior | None = None, check: bool = True
):
    """Prior mean ``H b`` and covariance ``K + H B H^T`` of the latent values.

    A diagonal jitter starting at ``1e-10 * sigma2`` (escalated tenfold up
    to ``1e-4 * sigma2``) is added until the covariance factorizes.
    ``check=False`` adds the starting jitter without factorizing; the
    Laplace iterations never factor ``C`` itself.

    Returns
    -------
    mean : ndarray, shape (r,)
    cov : ndarray, shape (r, r)
    """
    if basis_prior is None:
        basis_prior = BasisPrior()
    return _PriorBuilder(grid, basis_prior).build(params, check)


class _PriorBuilder:
    """Grid-only pieces of the prior, reused across hyperparameter values."""

    def __init__(self, grid: Grid, basis_prior: BasisPrior):
        self.grid = grid
        z = grid.centers
        self.sqdist = (z[:, None] - z[None, :]) ** 2
        H = basis_matrix(grid)
        HBH = H @ basis_prior.B @ H.T
        self.HBH = 0.5 * (HBH + HBH.T)
        self.mean = H @ basis_prior.b

    def build(self, params: KernelParams, check: bool = True):
        C = params.sigma2 * np.exp(self.sqdist * (-0.5 / params.length_scale**2)) + self.HBH
        diag = np.diag_indices(self.grid.r)
        if not check:
            C[diag] += JITTER_START * params.sigma2
            return self.mean, C
        jitter = JITTER_START
        while True:
            Cj = C.copy()
            Cj[diag] += jitter * params.sigma2
            try:
                sla.cholesky(Cj, lower=True, check_finite=False)
                return self.mean, Cj
            except np.linalg.LinAlgError:
                jitter *= 10.0
                if jitter > JITTER_MAX * (1 + 1e-9):
                    raise NumericalError("prior covariance not positive definite after maximum jitter")


def log_likelihood(f, counts) -> float:
    f = np.asarray(f, dtype=float)
    y = counts.counts if isinstance(counts, BinnedCounts) else np.asarray(counts, float)
    if f.shape != y.shape:
        raise ArgumentError("latent vector and counts differ in length")
    return float(y @ f - y.sum() * _logsumexp(f))


@numba.njit(cache=True)
def _nb_softmax(f):
    e = np.exp(f - f.max())
    return e / e.sum()


@numba.njit(cache=True)
def _nb_psi(y, n, m, f, a):
    c = f.max()
    return y @ f - n * (c + np.log(np.sum(np.exp(f - c)))) - 0.5 * (a @ (f - m))


@numba.njit(cache=True)
def _nb_factor(C, u, n):
    # Cholesky factor of I + V C V^T with V = sqrt(n) (diag(s) - s u^T), s = sqrt(u)
    r = u.shape[0]
    s = np.sqrt(u)
    Cu = C @ u
    T = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            T[i, j] = (C[i, j] - Cu[i]) * s[j]
    uT = u @ T
    Bm = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            Bm[i, j] = n * s[i] * (T[i, j] - uT[j])
    for i in range(r):
        for j in range(i):
            v = 0.5 * (Bm[i, j] + Bm[j, i])
            Bm[i, j] = v
            Bm[j, i] = v
        Bm[i, i] += 1.0
    return np.linalg.cholesky(Bm)


@numba.njit(cache=True)
def _nb_cho_solve(L, b):
    r = b.shape[0]
    z = np.empty(r)
    for i in range(r):
        acc = b[i]
        for k in range(i):
            acc -= L[i, k] * z[k]
        z[i] = acc / L[i, i]
    x = np.empty(r)
    for i in range(r - 1, -1, -1):
        acc = z[i]
        for k in range(i + 1, r):
            acc -= L[k, i] * x[k]
        x[i] = acc / L[i, i]
    return x


@numba.njit(cache=True)
def _nb_newton(y, m, C, a, tol, maxit, max_halvings):
    n = y.sum()
    sqn = np.sqrt(n)
    f = m + C @ a
    psi = _nb_psi(y, n, m, f, a)
    it = 0
    status = 0
    grad_norm = np.inf
    while True:
        u = _nb_softmax(f)
        g = y - n * u
        grad_norm = np.max(np.abs(g - a))
        if grad_norm <= tol:
            break
        if it >= maxit:
            status = 1
            break
        it += 1
        L = _nb_factor(C, u, n)
        s = np.sqrt(u)
        fm = f - m
        b = n * (u * fm - u * (u @ fm)) + g
        Cb = C @ b
        z = _nb_cho_solve(L, sqn * (s * Cb - s * (u @ Cb)))
        step = b - sqn * (s * z - u * (s @ z)) - a
        t = 1.0
        ok = False
        a_try = a
        f_try = f
        psi_try = psi
        for _ in range(max_halvings + 1):
            a_try = a + t * step
            f_try = m + C @ a_try
            psi_try = _nb_psi(y, n, m, f_try, a_try)
            if psi_try >= psi - 1e-13 * abs(psi):
                ok = True
                break
            t *= 0.5
        if not ok:
            # no ascent along the Newton direction; accept a numerical optimum if close
            if grad_norm > 1e3 * tol:
                status = 2
            break
        a = a_try
        f = f_try
        psi = psi_try
    L = _nb_factor(C, _nb_softmax(f), n)
    return f, a, L, it, grad_norm, status


def _laplace(y, m, C, a0=None, tol=NEWTON_TOL, maxit=NEWTON_MAXIT, want_sigma=True):
    y = np.ascontiguousarray(y, dtype=float)
    m = np.ascontiguousarray(m, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    a = np.zeros(y.shape[0]) if a0 is None else np.array(a0, dtype=float)
    f, a, L, it, grad_norm, status = _nb_newton(y, m, C, a, tol, maxit, MAX_HALVINGS)
    if status == 1:
        raise ConvergenceError(
            f"Newton failed to converge in {maxit} iterations (grad {grad_norm:.3g})", grad_norm
        )
    if status == 2:
        raise ConvergenceError("Newton step halving failed", grad_norm)
    n = float(y.sum())
    logdet_b = 2.0 * float(np.sum(np.log(np.diag(L))))
    sigma = None
    if want_sigma:
        u = _softmax(f)
        s = np.sqrt(u)
        VC = np.sqrt(n) * (s[:, None] * C - np.outer(s, u @ C))
        Z = sla.solve_triangular(L, VC, lower=True, check_finite=False)
        sigma = C - Z.T @ Z
        sigma = 0.5 * (sigma + sigma.T)
    loglik = float(y @ f - n * _logsumexp(f))
    return LaplaceState(f, a, sigma, logdet_b, loglik, int(it), float(grad_norm))


def newton_mode(counts, prior_mean, prior_cov, tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAXIT):
    """Posterior mode of the latent values and the Laplace covariance.

    Maximizes ``log p(counts | f) + log N(f | prior_mean, prior_cov)`` by
    damped Newton iterations (step halving whenever the objective falls).

    Returns
    -------
    f_hat : ndarray, shape (r,)
    sigma_post : ndarray, shape (r, r)
        ``(C^-1 + n (diag(u) - u u^T))^-1`` with ``u = softmax(f_hat)``.

    Raises
    ------
    ConvergenceError
        If the gradient max-norm is still above ``tol`` after ``max_iter``
        iterations.
    """
    y = counts.counts if isinstance(counts, BinnedCounts) else np.asarray(counts, float)
    st = _laplace(y, np.asarray(prior_mean, float), np.asarray(prior_cov, float), tol=tol, maxit=max_iter)
    return st.f, st.sigma


def _laplace_log_marginal(st: LaplaceState, m) -> float:
    return st.loglik - 0.5 * float(st.a @ (st.f - m)) - 0.5 * st.logdet_b


def log_marginal(counts, grid: Grid, params: KernelParams, basis_prior: BasisPrior | None = None) -> float:
    """Laplace approximation of the log marginal likelihood of the bin counts.

    Equal to ``log p(y | f_hat) + log N(f_hat | Hb, C) + r/2 log(2 pi)
    + 1/2 log det(sigma_post)``, evaluated without forming ``C^-1``.
    """
    m, C = prior_covariance(grid, params, basis_prior)
    y = counts.counts if isinstance(counts, BinnedCounts) else np.asarray(counts, float)
    st = _laplace(y, m, C, want_sigma=False)
    return _laplace_log_marginal(st, m)


def _log_half_cauchy(x, scale2):
    s = np.sqrt(scale2)
    return np.log(2.0 / (np.pi * s)) - np.log1p(x * x / scale2)


def log_hyperprior(params: KernelParams) -> float:
    """Half-t(1) log densities on the magnitude sigma and the length-scale."""
    return float(
        _log_half_cauchy(np.sqrt(params.sigma2), SIGMA_SCALE2)
        + _log_half_cauchy(params.length_scale, LENGTH_SCALE2)
    )


class HyperResult(NamedTuple):
    params: KernelParams
    objective: float
    converged: bool
    n_evals: int
    message: str


def _length_bounds(grid: Grid):
    return (np.log(grid.width), np.log(20.0 * (grid.hi - grid.lo)))


def map_hyperparams(
    counts: BinnedCounts,
    grid: Grid,
    basis_prior: BasisPrior | None = None,
    init: KernelParams | None = None,
    full_output: bool = False,
):
    """MAP kernel hyperparameters by quasi-Newton search in log space.

    The objective is the Laplace log marginal plus the log hyperprior.
    Gradients are central finite differences with step ``1e-4`` in
    ``(log sigma2, log l)``.  The search is box-bounded (L-BFGS-B).  The
    objective is often multimodal in the length-scale, so without ``init``
    a fixed set of starting points is screened first.  If
    the optimizer reports failure the best evaluated point is returned and
    ``converged`` is False in the full output.
    """
    if basis_prior is None:
        basis_prior = BasisPrior()
    y = counts.counts
    bounds = [LOG_SIGMA2_BOUNDS, _length_bounds(grid)]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    prior = _PriorBuilder(grid, basis_prior)
    warm = {"a": None}
    best = {"theta": None, "obj": -np.inf}
    n_evals = 0

    def objective(theta):
        nonlocal n_evals
        n_evals += 1
        params = KernelParams.from_log(theta)
        try:
            m, C = prior.build(params, check=False)
            try:
                st = _laplace(y, m, C, a0=warm["a"], want_sigma=False)
            except ConvergenceError:
                if warm["a"] is None:
                    raise
                st = _laplace(y, m, C, want_sigma=False)
        except NumericalError:
            return -np.inf
        warm["a"] = st.a
        val = _laplace_log_marginal(st, m) + log_hyperprior(params)
        if val > best["obj"]:
            best["obj"] = val
            best["theta"] = np.array(theta, dtype=float)
        return val

    def neg_and_grad(theta):
        val = objective(theta)
        if not np.isfinite(val):
            return 1e300, np.zeros(2)
        grad = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = FD_STEP
            fp = objective(theta + e)
            fm = objective(theta - e)
            if np.isfinite(fp) and np.isfinite(fm):
                grad[k] = (fp - fm) / (2 * FD_STEP)
            elif np.isfinite(fp):
                grad[k] = (fp - val) / FD_STEP
            elif np.isfinite(fm):
                grad[k] = (val - fm) / FD_STEP
            else:
                grad[k] = 0.0
        return -val, -grad

    if init is not None:
        theta0 = np.clip(init.to_log(), lo, hi)
    else:
        starts = [np.clip(np.log([s2, frac * (grid.hi - grid.lo)]), lo, hi) for s2, frac in SCREEN_STARTS]
        vals = [objective(t) for t in starts]
        theta0 = starts[int(np.argmax(vals))]
        warm["a"] = None

    res = spop.minimize(
        neg_and_grad,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": 100, "ftol": 1e-10, "gtol": 1e-5},
    )
    obj_res = objective(res.x)
    converged = bool(res.success) and np.isfinite(obj_res)
    if converged and obj_res >= best["obj"] - 1e-9:
        theta, obj = np.asarray(res.x, float), obj_res
    else:
        theta, obj = best["theta"], best["obj"]
    if theta is None or not np.isfinite(obj):
        raise NumericalError("hyperparameter search found no finite objective value")
    out = HyperResult(KernelParams.from_log(theta), float(obj), converged, n_evals, str(res.message))
    return out if full_output else out.params


def hyper_objective(counts: BinnedCounts, grid: Grid, params: KernelParams, basis_prior=None) -> float:
    """Log marginal plus log hyperprior at fixed hyperparameters."""
    return log_marginal(counts, grid, params, basis_prior) + log_hyperprior(params)


class HyperCache:
    """Lock-protected memo of MAP hyperparameters keyed by region content."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key_for(indices) -> bytes:
        idx = np.sort(np.asarray(indices, dtype=np.int64))
        return hashlib.blake2b(idx.tobytes(), digest_size=16).digest()

    def get(self, key):
        with self._lock:
            val = self._data.get(key)
            if val is None:
                self.misses += 1
            else:
                self.hits += 1
            return val

    def put(self, key, value):
        with self._lock:
            self._data.setdefault(key, value)

    def __len__(self):
        return len(self._data)


def fit_region(
    y_region,
    r: int = 100,
    pad_frac: float = 0.1,
    basis_prior: BasisPrior | None = None,
    hyper_init: KernelParams | None = None,
    params: KernelParams | None = None,
) -> RegionFit:
    """Grid, bin, pick hyperparameters, and run the Laplace approximation.

    Pass ``params`` to skip the hyperparameter search (e.g. when the MAP
    values are already known for this region content).
    """
    if basis_prior is None:
        basis_prior = BasisPrior()
    grid = build_grid(y_region, r, pad_frac)
    counts = bin_counts(y_region, grid)
    converged = True
    if params is None:
        res = map_hyperparams(counts, grid, basis_prior, hyper_init, full_output=True)
        params, converged = res.params, res.converged
    m, C = prior_covariance(grid, params, basis_prior)
    st = _laplace(counts.counts, m, C)
    return RegionFit(
        grid=grid,
        counts=counts,
        params=params,
        f_hat=st.f,
        sigma_post=st.sigma,
        log_marginal=_laplace_log_marginal(st, m),
        hyper_converged=converged,
    )


def _sqrt_psd(S):
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    if vals.min() < -1e-8 * scale:
        raise NumericalError("posterior covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def density_draws(fit: RegionFit, n_draws: int = 4000, seed=None) -> np.ndarray:
    """Posterior density curves on the grid.

    Each row is ``exp(g) / (dz * sum(exp(g)))`` for ``g ~ N(f_hat, sigma_post)``.
    """
    if n_draws < 1:
        raise ArgumentError("n_draws must be >= 1")
    rng = np.random.default_rng(seed)
    A = _sqrt_psd(fit.sigma_post)
    g = fit.f_hat + rng.standard_normal((n_draws, fit.f_hat.shape[0])) @ A.T
    g -= g.max(axis=1, keepdims=True)
    e = np.exp(g)
    return e / (fit.grid.width * e.sum(axis=1, keepdims=True))
