import numpy as np
import pytest
from scipy.stats import dirichlet

from lgpcde import mcmc
from lgpcde.errors import ArgumentError, FitError, InvalidStateError, NumericalError
from lgpcde.mcmc import (
    Chain,
    ChainSample,
    McmcConfig,
    log_accept_ratio,
    move_menu,
    propose,
    run_chain,
    select_best,
)
from lgpcde.simulate import simulate
from lgpcde.tessellation import Dataset, Tessellation


@pytest.fixture(scope="module")
def data():
    return simulate("piecewise", 200, seed=1)


def _counts(tess, data, cfg, n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    out = dict.fromkeys(mcmc.MOVES, 0)
    for _ in range(n):
        _, move, _ = propose(tess, data, cfg, rng)
        out[move] += 1
    return out


def _within_binomial(count, n, p):
    return abs(count - n * p) <= 3 * np.sqrt(n * p * (1 - p)) + 1e-9


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(burn_in=10, n_iters=10), dict(M_max=1), dict(d=0.0), dict(min_region_size=-1)]
    )
    def test_invalid(self, kw):
        with pytest.raises(ArgumentError):
            McmcConfig(**kw)

    def test_defaults(self):
        cfg = McmcConfig()
        assert (cfg.n_iters, cfg.burn_in, cfg.M_max, cfg.d, cfg.min_region_size) == (10_000, 1_000, 10, 100.0, 10)


class TestPropose:
    def test_frequencies_at_one_center(self, data):
        cfg = McmcConfig()
        c = _counts(Tessellation.uniform([0], data.p), data, cfg)
        assert c["death"] == 0
        for m in ("birth", "move", "weight"):
            assert _within_binomial(c[m], 10_000, 1 / 3)

    def test_frequencies_interior(self, data):
        cfg = McmcConfig()
        c = _counts(Tessellation.uniform([0, 1, 2, 3, 4], data.p), data, cfg, seed=1)
        for m in mcmc.MOVES:
            assert _within_binomial(c[m], 10_000, 0.25)

    def test_frequencies_at_max(self, data):
        cfg = McmcConfig(M_max=3)
        c = _counts(Tessellation.uniform([0, 1, 2], data.p), data, cfg, seed=2)
        assert c["birth"] == 0
        for m in ("death", "move", "weight"):
            assert _within_binomial(c[m], 10_000, 1 / 3)

    def test_concentrated_weight_move(self, data):
        cfg = McmcConfig(d=1e9)
        rng = np.random.default_rng(3)
        cur = Tessellation((0, 5), [0.3, 0.7])
        for _ in range(50):
            prop, move, _ = propose(cur, data, cfg, rng)
            if move == "weight":
                assert np.abs(prop.w - cur.w).max() < 1e-3
                assert abs(prop.w.sum() - 1.0) <= 1e-12

    def test_weight_correction_matches_dirichlet_oracle(self, data):
        cfg = McmcConfig(d=7.0)
        rng = np.random.default_rng(4)
        cur = Tessellation((0, 5, 9), [0.2, 0.8])
        seen = 0
        while seen < 20:
            prop, move, corr = propose(cur, data, cfg, rng)
            if move != "weight":
                continue
            seen += 1
            fwd = dirichlet.logpdf(prop.w, cfg.d * cur.w)
            rev = dirichlet.logpdf(cur.w, cfg.d * prop.w)
            assert corr == pytest.approx(rev - fwd, rel=1e-9, abs=1e-9)
            assert prop.center_idx == cur.center_idx

    @pytest.mark.parametrize(
        "M, move, expected",
        [
            (1, "birth", np.log(3 / 4)),
            (2, "death", np.log(4 / 3)),
            (9, "birth", np.log(4 / 3)),
            (10, "death", np.log(3 / 4)),
            (5, "birth", 0.0),
            (5, "death", 0.0),
            (5, "move", 0.0),
            (1, "move", 0.0),
        ],
    )
    def test_boundary_corrections(self, data, M, move, expected):
        cfg = McmcConfig()
        tess = Tessellation.uniform(list(range(M)), data.p)
        rng = np.random.default_rng(5)
        for _ in range(200):
            prop, mv, corr = propose(tess, data, cfg, rng)
            if mv == move:
                assert corr == pytest.approx(expected, abs=1e-15)
                assert prop.M == M + {"birth": 1, "death": -1, "move": 0}[move]
                return
        pytest.fail("move never proposed")

    def test_birth_death_targets(self, data):
        cfg = McmcConfig()
        tess = Tessellation.uniform([3, 7, 11], data.p)
        rng = np.random.default_rng(6)
        for _ in range(200):
            prop, mv, _ = propose(tess, data, cfg, rng)
            if mv == "birth":
                assert prop.center_idx[:3] == (3, 7, 11)
                assert prop.center_idx[3] not in (3, 7, 11)
            elif mv == "death":
                assert set(prop.center_idx) < {3, 7, 11}
            elif mv == "move":
                assert len(set(prop.center_idx) ^ {3, 7, 11}) == 2

    def test_no_free_location(self):
        x = np.arange(3.0)[:, None]
        d = Dataset(x, np.zeros(3), [0.0], [1.0], 0.0, 1.0)
        cfg = McmcConfig(M_max=4)
        rng = np.random.default_rng(0)
        tess = Tessellation((0, 1, 2), [1.0])
        seen = set()
        for _ in range(100):
            prop, mv, _ = propose(tess, d, cfg, rng)
            if mv in ("birth", "move"):
                assert prop is None
                seen.add(mv)
        assert seen == {"birth", "move"}

    def test_reversibility_bookkeeping(self, data):
        cfg = McmcConfig()
        rng = np.random.default_rng(7)
        for M in range(1, cfg.M_max):
            A = Tessellation.uniform(list(range(M)), data.p)
            while True:
                B, mv, fwd = propose(A, data, cfg, rng)
                if mv == "birth":
                    break
            menu_b = move_menu(B.M, cfg.M_max)
            rev = np.log(move_menu(A.M, cfg.M_max)["birth"] / menu_b["death"])
            assert fwd + rev == pytest.approx(0.0, abs=1e-12)
            la, lb = rng.normal(size=3), rng.normal(size=2)
            forward = np.sum(lb) - np.sum(la) + fwd
            backward = np.sum(la) - np.sum(lb) + rev
            assert forward == pytest.approx(-backward, abs=1e-12)


class TestAcceptRatio:
    def test_identical(self):
        assert log_accept_ratio([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_lower_by_two(self):
        assert log_accept_ratio([-1.0], [-3.0]) == pytest.approx(-2.0)

    def test_birth_correction(self):
        assert log_accept_ratio([-4.0], [-1.5, -2.5], np.log(0.75)) == pytest.approx(np.log(0.75))

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.normal(size=4), rng.normal(size=4)
            c = rng.normal() * 100
            corr = rng.normal()
            assert log_accept_ratio(a + c, b + c, corr) == pytest.approx(log_accept_ratio(a, b, corr), abs=1e-10)


def _chain_from(logmls, tesses):
    samples = [ChainSample(i, t, v, v, "move", True) for i, (v, t) in enumerate(zip(logmls, tesses))]
    return Chain(samples, {}, {}, 0, McmcConfig(n_iters=len(samples) + 1, burn_in=0), 0)


class TestSelection:
    def test_argmax(self):
        t = [Tessellation((k,), [0.5, 0.5]) for k in range(3)]
        ch = _chain_from([-5.0, -1.0, -3.0], t)
        assert ch.best_by_marginal == 1

    def test_single_sample(self, data):
        t = Tessellation.uniform([4], data.p)
        ch = _chain_from([-2.0], [t])
        tess, fits = select_best(ch, data)
        assert tess == t and len(fits) == 1
        assert fits[0].counts.n == data.n

    def test_posterior_mode(self, data):
        a = Tessellation((0, 100), [0.5, 0.5])
        b = Tessellation((3, 150), [0.5, 0.5])
        ch = _chain_from([-9.0, -1.0, -8.0, -7.0], [a, b, a, a])
        tess, fits = select_best(ch, data, criterion="posterior")
        assert tess == a
        assert len(fits) == 2
        assert sum(f.counts.n for f in fits) == data.n
        assert select_best(ch, data)[0] == b

    def test_mode_rounds_weights(self):
        a = Tessellation((0, 1), [0.5, 0.5])
        a2 = Tessellation((1, 0), [0.5 + 1e-9, 0.5 - 1e-9])
        b = Tessellation((0, 2), [0.5, 0.5])
        ch = _chain_from([0.0, 0.0, 0.0], [b, a, a2])
        assert ch.mode_tessellation == a

    def test_empty(self, data):
        ch = Chain([], {}, {}, 0, McmcConfig(), 0)
        with pytest.raises(InvalidStateError):
            select_best(ch, data)
        with pytest.raises(ArgumentError):
            select_best(_chain_from([0.0], [Tessellation.uniform([0], 2)]), data, criterion="best")


@pytest.fixture(scope="module")
def short_runs(data):
    cfg = McmcConfig(n_iters=120, burn_in=20, seed=11)
    a = run_chain(data, cfg)
    b = run_chain(data, cfg)
    c = run_chain(data, McmcConfig(n_iters=120, burn_in=20, seed=11, use_cache=False))
    return cfg, a, b, c


class TestRunChain:
    def test_deterministic(self, short_runs):
        _, a, b, _ = short_runs
        assert list(a.records()) == list(b.records())
        assert a.acceptance_rates == b.acceptance_rates

    def test_cache_transparent(self, short_runs):
        _, a, _, c = short_runs
        assert list(a.records()) == list(c.records())
        assert a.cache_stats["hits"] > 0

    def test_bookkeeping(self, short_runs, data):
        cfg, a, _, _ = short_runs
        assert len(a.samples) == cfg.n_iters - cfg.burn_in
        assert [s.iter for s in a.samples] == list(range(cfg.burn_in, cfg.n_iters))
        assert sum(a.proposal_counts.values()) == cfg.n_iters
        for s in a.samples:
            assert np.isfinite(s.log_marginal_total)
            assert abs(s.tess.w.sum() - 1.0) <= 1e-12 and np.all(s.tess.w >= 0)
            s.tess.validate(data.n, cfg.M_max)
        assert a.samples[a.best_by_marginal].log_marginal_total == max(s.log_marginal_total for s in a.samples)

    def test_logml_matches_refit(self, short_runs, data):
        _, a, _, _ = short_runs
        s = a.samples[-1]
        _, fits = select_best(_chain_from([s.log_marginal_total], [s.tess]), data)
        assert sum(f.log_marginal_density for f in fits) == pytest.approx(s.log_marginal_total, abs=1e-9)

    def test_size_rejections_count(self, data):
        cfg = McmcConfig(n_iters=60, burn_in=0, seed=2, min_region_size=90, prior_only=True)
        ch = run_chain(data, cfg)
        assert ch.size_rejections > 0
        assert all(s.tess.M <= 2 for s in ch.samples)

    def test_prior_only_stays_valid(self, data):
        cfg = McmcConfig(n_iters=2000, burn_in=0, seed=3, prior_only=True, min_region_size=0)
        ch = run_chain(data, cfg)
        Ms = ch.M_trace()
        assert Ms.min() >= 1 and Ms.max() <= cfg.M_max
        assert len(np.unique(Ms)) == cfg.M_max

    def test_fit_failure_is_reported(self, data, monkeypatch):
        calls = {"n": 0}
        real = mcmc.RegionScorer.score

        def flaky(self, members):
            calls["n"] += 1
            if calls["n"] > 3:
                raise NumericalError("boom")
            return real(self, members)

        monkeypatch.setattr(mcmc.RegionScorer, "score", flaky)
        with pytest.raises(FitError) as exc:
            run_chain(data, McmcConfig(n_iters=50, burn_in=0, seed=0))
        assert exc.value.iteration is not None and exc.value.iteration >= 0
        assert isinstance(exc.value.tessellation, Tessellation)

    def test_initial_state(self, data):
        rng = np.random.default_rng(0)
        cfg = McmcConfig(initial_center=17, initial_w=[1.0, 3.0])
        t = mcmc._initial_tessellation(data, cfg, rng)
        assert t.center_idx == (17,)
        np.testing.assert_allclose(t.w, [0.25, 0.75])
        t = mcmc._initial_tessellation(data, McmcConfig(), rng)
        assert t.M == 1 and 0 <= t.center_idx[0] < data.n
        np.testing.assert_allclose(t.w, [0.5, 0.5])


class TestOnePartitionDesk:
    def test_no_split(self):
        data = simulate("one_partition", 500, seed=5)
        ch = run_chain(data, McmcConfig(n_iters=1500, burn_in=300, seed=5))
        assert ch.M_distribution().get(1, 0.0) >= 0.90
