"""Reversible-jump sampler over weighted Voronoi tessellations.

Region densities are integrated out with the Laplace approximation, so
the chain moves only over ``T = (M, centers, w)``.  Four proposals:
birth, death, move (relocate one center), and a Dirichlet random walk on
the weights.  The tessellation prior cancels against the proposal except
for the move-menu probabilities at the ends of ``1..M_max``, which enter
as ``log_proposal_correction``.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, FitError, InvalidStateError, NumericalError
from .lgp import BasisPrior, HyperCache, KernelParams, RegionFit, fit_region
from .tessellation import (
    Dataset,
    Tessellation,
    assign_regions,
    log_dirichlet_pdf,
    tessellation_log_prior,
)

__all__ = [
    "MOVES",
    "McmcConfig",
    "ChainSample",
    "Chain",
    "move_menu",
    "propose",
    "log_accept_ratio",
    "RegionScorer",
    "run_chain",
    "select_best",
]

log = logging.getLogger(__name__)

MOVES = ("birth", "death", "move", "weight")
DIRICHLET_FLOOR = 1e-8


@dataclass(frozen=True)
class McmcConfig:
    n_iters: int = 10_000
    burn_in: int = 1_000
    M_max: int = 10
    d: float = 100.0
    min_region_size: int = 10
    r: int = 100
    pad_frac: float = 0.1
    seed: int = 0
    initial_center: int | str = "random"
    initial_w: str | Sequence[float] = "uniform"
    use_cache: bool = True
    # test hook: every region scores 0, so the chain targets the prior
    prior_only: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iters:
            raise ArgumentError("need 0 <= burn_in < n_iters")
        if self.M_max < 2:
            raise ArgumentError("M_max must be >= 2")
        if not self.d > 0:
            raise ArgumentError("d must be positive")
        if self.min_region_size < 0 or self.r < 3:
            raise ArgumentError("invalid min_region_size or r")

    def to_dict(self) -> dict:
        out = asdict(self)
        if not isinstance(self.initial_w, str):
            out["initial_w"] = [float(v) for v in self.initial_w]
        return out


@dataclass(frozen=True)
class ChainSample:
    iter: int
    tess: Tessellation
    log_marginal_total: float
    log_post_unnorm: float
    move_type: str
    accepted: bool

    def to_record(self) -> dict:
        return {
            "iter": self.iter,
            "move": self.move_type,
            "accepted": self.accepted,
            "M": self.tess.M,
            "centers": list(self.tess.center_idx),
            "w": [float(v) for v in self.tess.w],
            "logml": float(self.log_marginal_total),
        }


@dataclass
class Chain:
    samples: list
    acceptance_rates: dict
    proposal_counts: dict
    size_rejections: int
    config: McmcConfig
    seed: int
    cache_stats: dict = field(default_factory=dict)

    @property
    def best_by_marginal(self) -> int:
        if not self.samples:
            raise InvalidStateError("empty chain")
        return int(np.argmax([s.log_marginal_total for s in self.samples]))

    @property
    def mode_tessellation(self) -> Tessellation:
        if not self.samples:
            raise InvalidStateError("empty chain")
        counts = Counter(s.tess.key() for s in self.samples)
        top = max(counts.values())
        for s in self.samples:
            if counts[s.tess.key()] == top:
                return s.tess

    def M_trace(self) -> np.ndarray:
        return np.array([s.tess.M for s in self.samples])

    def M_distribution(self) -> dict:
        Ms = self.M_trace()
        return {int(m): float(np.mean(Ms == m)) for m in np.unique(Ms)}

    def records(self):
        for s in self.samples:
            yield s.to_record()


def move_menu(M: int, M_max: int) -> dict:
    """Move-type probabilities available at ``M`` centers."""
    if M == 1:
        return {"birth": 1 / 3, "move": 1 / 3, "weight": 1 / 3}
    if M == M_max:
        return {"death": 1 / 3, "move": 1 / 3, "weight": 1 / 3}
    return {m: 0.25 for m in MOVES}


def _dirichlet_params(w, d):
    return np.maximum(d * np.asarray(w, float), DIRICHLET_FLOOR)


def propose(current: Tessellation, data: Dataset, cfg: McmcConfig, rng):
    """Draw one proposal.

    Returns
    -------
    proposal : Tessellation or None
        None when a birth or move has no free observation to use.
    move_type : str
    log_proposal_correction : float
        Log ratio of reverse to forward menu probabilities for birth and
        death, and ``log q(w | w') - log q(w' | w)`` for weight moves.
    """
    M = current.M
    menu = move_menu(M, cfg.M_max)
    names = list(menu)
    move = names[rng.choice(len(names), p=list(menu.values()))]
    centers = list(current.center_idx)

    if move in ("birth", "move"):
        free = np.setdiff1d(np.arange(data.n), centers, assume_unique=False)
        if free.size == 0:
            return None, move, 0.0
        new = int(free[rng.integers(free.size)])
        if move == "birth":
            prop = Tessellation(tuple(centers + [new]), current.w)
            corr = np.log(move_menu(M + 1, cfg.M_max)["death"] / menu["birth"])
            return prop, move, float(corr)
        k = int(rng.integers(M))
        centers[k] = new
        return Tessellation(tuple(centers), current.w), move, 0.0

    if move == "death":
        k = int(rng.integers(M))
        del centers[k]
        corr = np.log(move_menu(M - 1, cfg.M_max)["birth"] / menu["death"])
        return Tessellation(tuple(centers), current.w), move, float(corr)

    alpha = _dirichlet_params(current.w, cfg.d)
    g = rng.standard_gamma(alpha)
    w_new = g / g.sum()
    corr = log_dirichlet_pdf(current.w, _dirichlet_params(w_new, cfg.d)) - log_dirichlet_pdf(w_new, alpha)
    return Tessellation(current.center_idx, w_new), "weight", float(corr)


def log_accept_ratio(current_fit, proposal_fit, log_proposal_correction: float = 0.0) -> float:
    """``min(0, sum(proposal) - sum(current) + correction)`` over region log marginals."""
    diff = float(np.sum(proposal_fit)) - float(np.sum(current_fit)) + log_proposal_correction
    return min(0.0, diff)


class RegionScorer:
    """Log marginal of a region's responses, memoized by region content."""

    def __init__(self, data: Dataset, cfg: McmcConfig, basis_prior=None, hyper_init=None):
        self.data = data
        self.cfg = cfg
        self.basis_prior = basis_prior if basis_prior is not None else BasisPrior()
        self.hyper_init = hyper_init
        self.cache = HyperCache() if cfg.use_cache else None
        self.n_fits = 0

    def fit(self, members, params: KernelParams | None = None) -> RegionFit:
        self.n_fits += 1
        return fit_region(
            self.data.y[members],
            self.cfg.r,
            self.cfg.pad_frac,
            self.basis_prior,
            self.hyper_init,
            params=params,
        )

    def score(self, members) -> float:
        if self.cfg.prior_only:
            return 0.0
        if self.cache is None:
            return self.fit(members).log_marginal_density
        key = HyperCache.key_for(members)
        hit = self.cache.get(key)
        if hit is not None:
            return hit[1]
        fit = self.fit(members)
        self.cache.put(key, (fit.params, fit.log_marginal_density))
        return fit.log_marginal_density

    def cached_params(self, members) -> KernelParams | None:
        if self.cache is None:
            return None
        hit = self.cache.get(HyperCache.key_for(members))
        return None if hit is None else hit[0]


def _region_members(assign, M):
    order = np.argsort(assign.labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(assign.region_sizes)])
    return [order[bounds[i] : bounds[i + 1]] for i in range(M)]


def _initial_tessellation(data: Dataset, cfg: McmcConfig, rng) -> Tessellation:
    if cfg.initial_center == "random":
        c = int(rng.integers(data.n))
    else:
        c = int(cfg.initial_center)
    if isinstance(cfg.initial_w, str):
        if cfg.initial_w != "uniform":
            raise ArgumentError(f"unknown initial_w {cfg.initial_w!r}")
        w = np.full(data.p, 1.0 / data.p)
    else:
        w = np.asarray(cfg.initial_w, float)
        w = w / w.sum()
    tess = Tessellation((c,), w)
    tess.validate(data.n, cfg.M_max)
    return tess


def run_chain(data: Dataset, cfg: McmcConfig, basis_prior=None, hyper_init=None, progress=False) -> Chain:
    """Run the sampler; deterministic given ``cfg.seed``.

    Proposals that leave any region with fewer than ``min_region_size``
    observations are rejected without fitting.  Samples from iterations
    ``burn_in .. n_iters - 1`` are kept.
    """
    rng = np.random.default_rng(cfg.seed)
    scorer = RegionScorer(data, cfg, basis_prior, hyper_init)
    tess = _initial_tessellation(data, cfg, rng)

    def evaluate(t, it):
        asg = assign_regions(data, t)
        if asg.region_sizes.min() < cfg.min_region_size:
            return None
        try:
            return [scorer.score(mem) for mem in _region_members(asg, t.M)]
        except NumericalError as exc:
            raise FitError(f"region fit failed at iteration {it}: {exc}", it, t) from exc

    scores = evaluate(tess, -1)
    if scores is None:
        raise InvalidStateError("initial tessellation violates min_region_size")
    total = float(np.sum(scores))

    proposed = dict.fromkeys(MOVES, 0)
    accepted = dict.fromkeys(MOVES, 0)
    size_rejections = 0
    samples = []
    for it in range(cfg.n_iters):
        prop, move, corr = propose(tess, data, cfg, rng)
        proposed[move] += 1
        ok = False
        if prop is not None:
            new_scores = evaluate(prop, it)
            if new_scores is None:
                size_rejections += 1
            else:
                la = log_accept_ratio(scores, new_scores, corr)
                if la >= 0.0 or np.log(rng.random()) < la:
                    ok = True
                    tess, scores = prop, new_scores
                    total = float(np.sum(scores))
                    accepted[move] += 1
        if it >= cfg.burn_in:
            lp = total + tessellation_log_prior(tess, data.n, cfg.M_max)
            samples.append(ChainSample(it, tess, total, lp, move, ok))
        if progress and (it + 1) % 1000 == 0:
            log.info("iter %d  M=%d  logml=%.3f  fits=%d", it + 1, tess.M, total, scorer.n_fits)

    rates = {m: (accepted[m] / proposed[m] if proposed[m] else float("nan")) for m in MOVES}
    stats = {"fits": scorer.n_fits}
    if scorer.cache is not None:
        stats.update(hits=scorer.cache.hits, misses=scorer.cache.misses)
    return Chain(samples, rates, proposed, size_rejections, cfg, cfg.seed, stats)


def select_best(
    chain: Chain,
    data: Dataset,
    criterion: str = "marginal",
    basis_prior=None,
    hyper_init=None,
):
    """Selected tessellation and its refitted regions.

    ``criterion="marginal"`` takes the sample with the largest total log
    marginal; ``"posterior"`` takes the most frequent tessellation.
    """
    if not chain.samples:
        raise InvalidStateError("cannot select from an empty chain")
    if criterion == "marginal":
        tess = chain.samples[chain.best_by_marginal].tess
    elif criterion == "posterior":
        tess = chain.mode_tessellation
    else:
        raise ArgumentError(f"unknown criterion {criterion!r}")
    cfg = chain.config
    scorer = RegionScorer(data, cfg, basis_prior, hyper_init)
    asg = assign_regions(data, tess)
    fits = [scorer.fit(mem) for mem in _region_members(asg, tess.M)]
    return tess, fits
