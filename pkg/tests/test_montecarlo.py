import math

import numpy as np
import pytest

from mmlab.errors import BatchError, InputDomainError
from mmlab.integrands import constant_spec, goe_like_spec, path_feedback_spec
from mmlab.linalg import spectral_norm
from mmlab.montecarlo import (
    CheckRequest,
    EstimateCI,
    ExperimentConfig,
    bootstrap_ci,
    bootstrap_seed,
    derive_path_seed,
    derive_path_seeds,
    exact_estimate,
    plan_for_config,
    run_batch,
    wilson_interval,
    STREAM_OFFSET,
)
from mmlab.simulate import CollectorPlan, TimeGrid, simulate_path, summarize


def small_config(**kw):
    defaults = dict(
        spec=goe_like_spec(2, 2, seed=1),
        grid=TimeGrid(1.0, 64),
        paths=400,
        master_seed=2024,
        checks=(CheckRequest(kind="freedman", u=1.0, sigma2=4.0),),
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestSeeds:
    def test_deterministic(self):
        assert derive_path_seed(42, 7) == derive_path_seed(42, 7)

    def test_no_collisions_million_pairs(self):
        a = derive_path_seeds(10**9, 0, 500_000)
        b = derive_path_seeds(10**9 + 1, 0, 500_000)
        combined = np.concatenate([a, b])
        assert len(np.unique(combined)) == 1_000_000

    def test_vectorized_matches_scalar(self):
        got = derive_path_seeds(987654321, 5, 25)
        for j, idx in enumerate(range(5, 25)):
            assert int(got[j]) == derive_path_seed(987654321, idx)

    def test_negative_index_rejected(self):
        with pytest.raises(InputDomainError):
            derive_path_seed(1, -1)

    def test_bootstrap_stream_disjoint_from_paths(self):
        config = small_config()
        assert bootstrap_seed(config, 0) == derive_path_seed(
            config.master_seed, STREAM_OFFSET
        )


class TestWilson:
    def test_zero_successes(self):
        ci = wilson_interval(0, 100, confidence=0.95)
        assert ci.lo == 0.0 and ci.point == 0.0
        assert ci.hi == pytest.approx(0.0370, abs=3e-4)

    def test_half_sample(self):
        ci = wilson_interval(50, 100, confidence=0.95)
        assert ci.lo == pytest.approx(0.404, abs=2e-3)
        assert ci.hi == pytest.approx(0.596, abs=2e-3)

    def test_all_successes(self):
        assert wilson_interval(100, 100, confidence=0.99).hi == 1.0

    def test_contains_proportion(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(1, 500))
            k = int(rng.integers(0, n + 1))
            ci = wilson_interval(k, n, confidence=0.99)
            assert 0.0 <= ci.lo <= k / n <= ci.hi <= 1.0

    def test_invalid_counts(self):
        with pytest.raises(InputDomainError):
            wilson_interval(5, 4)
        with pytest.raises(InputDomainError):
            wilson_interval(-1, 4)
        with pytest.raises(InputDomainError):
            wilson_interval(1, 0)

    def test_invalid_confidence(self):
        with pytest.raises(InputDomainError):
            wilson_interval(1, 10, confidence=1.0)


class TestBootstrap:
    def test_constant_sample_degenerates(self):
        ci = bootstrap_ci(np.full(500, 3.25), np.mean, seed=1)
        assert ci.lo == ci.hi == ci.point == 3.25

    def test_contains_point(self):
        rng = np.random.default_rng(9)
        sample = rng.lognormal(size=2000)
        for stat in (np.mean, np.median, lambda a: float(np.mean(a**2)) ** 0.5):
            ci = bootstrap_ci(sample, stat, resamples=200, seed=3)
            assert ci.lo <= ci.point <= ci.hi

    def test_coverage_of_normal_mean(self):
        # 99% intervals over 100 seeded meta-trials trap 0 at least 98 times
        rng = np.random.default_rng(7)
        contain = 0
        for trial in range(100):
            sample = rng.standard_normal(10**4)
            ci = bootstrap_ci(sample, np.mean, resamples=1000, confidence=0.99, seed=trial)
            contain += ci.lo <= 0.0 <= ci.hi
        assert contain >= 98

    def test_width_clt_scaling(self):
        rng = np.random.default_rng(11)
        big = rng.standard_normal(4000)
        w_small = bootstrap_ci(big[:1000], np.mean, resamples=600, seed=5).half_width
        w_big = bootstrap_ci(big, np.mean, resamples=600, seed=6).half_width
        assert 1.5 <= w_small / w_big <= 2.5

    def test_deterministic_in_seed(self):
        sample = np.random.default_rng(2).standard_normal(300)
        a = bootstrap_ci(sample, np.mean, seed=42)
        b = bootstrap_ci(sample, np.mean, seed=42)
        assert (a.lo, a.hi) == (b.lo, b.hi)

    def test_too_few_samples(self):
        with pytest.raises(InputDomainError, match=">= 100 samples"):
            bootstrap_ci(np.ones(50), np.mean)

    def test_too_few_resamples(self):
        with pytest.raises(InputDomainError, match=">= 100 resamples"):
            bootstrap_ci(np.ones(200), np.mean, resamples=10)


class TestEstimateCI:
    def test_ordering_enforced(self):
        with pytest.raises(InputDomainError):
            EstimateCI(point=2.0, lo=0.0, hi=1.0, method="exact")

    def test_exact_helper(self):
        ci = exact_estimate(1.5)
        assert ci.lo == ci.hi == ci.point == 1.5 and ci.half_width == 0.0


class TestCheckRequest:
    def test_unknown_kind(self):
        with pytest.raises(InputDomainError, match="unknown check kind"):
            CheckRequest(kind="markov")

    def test_freedman_requires_parameters(self):
        with pytest.raises(InputDomainError, match="requires u and sigma2"):
            CheckRequest(kind="freedman", u=1.0)
        with pytest.raises(InputDomainError, match="sigma2 > 0"):
            CheckRequest(kind="freedman", u=1.0, sigma2=0.0)
        with pytest.raises(InputDomainError, match="u > 0"):
            CheckRequest(kind="freedman", u=0.0, sigma2=1.0)

    def test_bdg_requires_integer_p(self):
        with pytest.raises(InputDomainError, match="integer p"):
            CheckRequest(kind="bdg", p=0)
        assert CheckRequest(kind="bdg", p=2).p == 2

    def test_supermartingale_requires_beta(self):
        with pytest.raises(InputDomainError, match="beta"):
            CheckRequest(kind="supermartingale")


class TestExperimentConfig:
    def test_minimum_paths_for_probabilistic(self):
        with pytest.raises(InputDomainError, match="paths must be >= 100"):
            small_config(paths=50)

    def test_khintchine_only_allows_any_paths(self):
        cfg = small_config(paths=10, checks=(CheckRequest(kind="khintchine"),))
        assert cfg.paths == 10

    def test_check_time_must_match_horizon(self):
        with pytest.raises(InputDomainError, match="grid horizon"):
            small_config(checks=(CheckRequest(kind="bdg", p=1, t=2.0),))

    def test_plan_construction(self):
        cfg = small_config(
            checks=(
                CheckRequest(kind="freedman", u=1.0, sigma2=2.0),
                CheckRequest(kind="good_lambda", u=0.5, sigma2=1.0),
                CheckRequest(kind="schatten", p=2),
                CheckRequest(kind="biane_speicher"),
                CheckRequest(kind="supermartingale", beta=1.0),
            )
        )
        plan = plan_for_config(cfg)
        assert plan.sigma2_levels == (1.0, 2.0)
        assert plan.schatten_orders == (4.0,)
        assert plan.quad_schatten_orders == (2.0,)
        assert plan.sum_norm_quad
        assert plan.supermartingale_betas == (1.0,)
        assert plan.checkpoints[0] == 0 and plan.checkpoints[-1] == 64


class TestRunBatch:
    def test_single_path_matches_reference(self):
        cfg = small_config(paths=1, checks=())
        batch = run_batch(cfg, plan=CollectorPlan(sigma2_levels=(1.0,)))
        s = summarize(simulate_path(cfg.spec, cfg.grid, derive_path_seed(cfg.master_seed, 0)))
        assert batch.path_count == 1 and batch.excluded_count == 0
        assert batch.data["sup_spectral"][0] == pytest.approx(s.sup_spectral, rel=1e-12)
        assert batch.data["terminal_spectral"][0] == pytest.approx(
            spectral_norm(s.terminal_x), rel=1e-12
        )

    def test_worker_count_invariance(self):
        cfg = small_config(paths=600, block_size=150)
        plan = plan_for_config(cfg)
        one = run_batch(cfg, plan, workers=1)
        two = run_batch(cfg, plan, workers=2)
        assert one.data.keys() == two.data.keys()
        for key in one.data:
            assert np.array_equal(one.data[key], two.data[key]), key

    def test_block_size_invariance(self):
        a = run_batch(small_config(paths=300, block_size=4096))
        b = run_batch(small_config(paths=300, block_size=37))
        for key in a.data:
            assert np.array_equal(a.data[key], b.data[key]), key

    def test_exclusion_raises_batch_error(self):
        cfg = ExperimentConfig(
            spec=path_feedback_spec(np.ones((1, 1, 1)), gamma=1e200),
            grid=TimeGrid(1.0, 8),
            paths=200,
            master_seed=5,
            checks=(),
        )
        with pytest.raises(BatchError, match="exclusion rate"):
            run_batch(cfg)

    def test_clt_width_scaling(self):
        # doubling paths should roughly halve the squared Wilson width
        spec = constant_spec(np.eye(1))
        grid = TimeGrid(1.0, 64)
        widths = {}
        for paths in (2000, 4000):
            cfg = ExperimentConfig(
                spec=spec, grid=grid, paths=paths, master_seed=77,
                checks=(CheckRequest(kind="freedman", u=1.0, sigma2=1.0),),
            )
            batch = run_batch(cfg)
            hits = int((batch.data["prefix_max_lambda"][:, 0] >= 1.0).sum())
            widths[paths] = wilson_interval(hits, batch.kept_count, 0.99).half_width
        ratio_sq = (widths[2000] / widths[4000]) ** 2
        assert 1.5 <= ratio_sq <= 2.5

    def test_rejects_bad_workers(self):
        with pytest.raises(InputDomainError):
            run_batch(small_config(), workers=0)
