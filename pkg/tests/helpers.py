"""Independent oracles shared by the test modules.

Nothing here calls into the library's numerical code; each helper is a
second, deliberately plain route to a quantity the library computes.
"""

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree
from scipy.special import logsumexp


def unit_square(pts):
    pts = np.asarray(pts)
    return np.all((pts >= 0.0) & (pts <= 1.0), axis=1)


def grid_voronoi_union(xi, offset=0.3, box=((-0.5, -0.5), (1.5, 1.5))):
    """Membership predicate of the union of Voronoi cells whose centers lie in the unit square.

    Centers sit on a square lattice of spacing ``xi`` shifted by
    ``offset * xi`` so that cell edges do not line up with the square's
    sides.  Equal weights, so the weighted norm is Euclidean up to scale.
    """
    lo, hi = np.asarray(box, float)
    ax = [np.arange(lo[k] + offset * xi, hi[k] + xi, xi) for k in range(2)]
    cx, cy = np.meshgrid(*ax, indexing="ij")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    inside = unit_square(centers)
    tree = cKDTree(centers)

    def member(pts):
        _, idx = tree.query(np.asarray(pts))
        return inside[idx]

    return member


def loglik_naive(f, y):
    """Multinomial log-likelihood without any overflow guard."""
    p = np.exp(f) / np.sum(np.exp(f))
    return float(np.sum(y * np.log(p)))


def log_posterior_parts(y, m, C):
    """Exact unnormalized log posterior of the latent values and its gradient."""
    Cinv = np.linalg.inv(C)
    n = y.sum()

    def value(f):
        d = f - m
        return float(y @ f - n * logsumexp(f) - 0.5 * d @ Cinv @ d)

    def grad(f):
        u = np.exp(f - logsumexp(f))
        return y - n * u - Cinv @ (f - m)

    return value, grad


def fd_hessian(grad, f, h=1e-5):
    """Central differences of an analytic gradient, symmetrized."""
    r = f.shape[0]
    H = np.empty((r, r))
    for k in range(r):
        e = np.zeros(r)
        e[k] = h
        H[:, k] = (grad(f + e) - grad(f - e)) / (2 * h)
    return 0.5 * (H + H.T)


def generic_mode_and_covariance(y, m, C):
    """Mode and inverse negative Hessian of the exact latent log posterior.

    Works in whitened coordinates ``f = m + L z`` (``C = L L^T``) where the
    log posterior is ``y.f - n logsumexp(f) - |z|^2 / 2``; its Hessian is
    bounded below by the identity, so a generic quasi-Newton search and a
    finite-difference Hessian stay accurate even when ``C`` is nearly
    singular.  Returns ``(f_mode, sigma)`` mapped back to latent space.
    """
    from scipy.optimize import minimize

    L = np.linalg.cholesky(C)
    n = y.sum()

    def negval(z):
        f = m + L @ z
        return -(y @ f - n * logsumexp(f) - 0.5 * z @ z)

    def neggrad(z):
        f = m + L @ z
        u = np.exp(f - logsumexp(f))
        return -(L.T @ (y - n * u) - z)

    res = minimize(negval, np.zeros_like(m), jac=neggrad, method="BFGS", options={"gtol": 1e-12, "maxiter": 10_000})
    z = res.x
    Hz = fd_hessian(lambda v: -neggrad(v), z)
    sigma = L @ np.linalg.inv(-Hz) @ L.T
    return m + L @ z, 0.5 * (sigma + sigma.T)


def exact_log_marginal_r3(y, m, C, half_width=9.0, rtol=1e-8):
    """``log integral p(y | f) N(f | m, C) df`` over the 3-dim latent space.

    The substitution ``f = m + L z`` with ``C = L L^T`` turns the prior into
    a standard normal, so a box of half-width 9 in ``z`` holds all but
    ~1e-18 of the prior mass.  Adaptive (Genz-Malik) cubature over that
    box; the largest integrand value on a coarse mesh is factored out for
    numerical range.
    """
    L = np.linalg.cholesky(C)
    n = y.sum()

    def logf(z):
        # z has shape (npts, 3)
        f = m + z @ L.T
        return f @ y - n * logsumexp(f, axis=1) - 0.5 * np.sum(z * z, axis=1) - 1.5 * np.log(2 * np.pi)

    mesh = np.linspace(-half_width, half_width, 25)
    pts = np.stack(np.meshgrid(mesh, mesh, mesh, indexing="ij"), axis=-1).reshape(-1, 3)
    shift = float(logf(pts).max())
    lim = np.full(3, half_width)
    res = integrate.cubature(
        lambda z: np.exp(logf(z) - shift), -lim, lim, rtol=rtol, atol=0.0, max_subdivisions=100_000
    )
    if res.status != "converged":
        raise RuntimeError("cubature did not converge")
    return float(np.log(res.estimate) + shift)


def m_transition_matrix(M_max):
    """Transition matrix of the number of centers under a constant likelihood.

    Built from the proposal menu alone: at 1 < M < M_max each move type
    has probability 1/4; at M = 1 the menu is birth/move/weight and at
    M = M_max it is death/move/weight, each 1/3.  Birth/death are accepted
    with probability ``min(1, reverse menu prob / forward menu prob)``.
    Assumes every birth and death lands on a valid state (no region-size
    rejections and more free observations than M_max).
    """

    def menu(M):
        if M == 1:
            return {"birth": 1 / 3, "death": 0.0}
        if M == M_max:
            return {"birth": 0.0, "death": 1 / 3}
        return {"birth": 0.25, "death": 0.25}

    P = np.zeros((M_max, M_max))
    for M in range(1, M_max + 1):
        i = M - 1
        if M < M_max:
            fwd = menu(M)["birth"]
            rev = menu(M + 1)["death"]
            P[i, i + 1] = fwd * min(1.0, rev / fwd)
        if M > 1:
            fwd = menu(M)["death"]
            rev = menu(M - 1)["birth"]
            P[i, i - 1] = fwd * min(1.0, rev / fwd)
        P[i, i] = 1.0 - P[i].sum()
    return P


def stationary_distribution(P):
    vals, vecs = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, k])
    return pi / pi.sum()


def mixing_lag(P, tv=0.01):
    """Smallest k with every row of ``P^k`` within ``tv`` total variation of stationarity."""
    pi = stationary_distribution(P)
    Pk = np.eye(P.shape[0])
    for k in range(1, 100_000):
        Pk = Pk @ P
        if 0.5 * np.abs(Pk - pi).sum(axis=1).max() <= tv:
            return k
    raise RuntimeError("chain does not mix")
