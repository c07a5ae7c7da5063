import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anp.gp import (
    FIXED,
    EpisodeSpec,
    GPHyperparams,
    dump_episodes,
    gp_posterior,
    gp_posterior_joint,
    jittered_cholesky,
    load_episodes,
    make_rng,
    sample_batch,
    sample_curve,
    sample_episode,
    se_kernel,
)


def dense_posterior(hyp, xc, yc, xq):
    """Textbook formulas with an explicit inverse."""
    k_inv = np.linalg.inv(se_kernel(xc, xc, hyp) + hyp.noise_std**2 * np.eye(len(xc)))
    k_qc = se_kernel(xq, xc, hyp)
    mean = k_qc @ k_inv @ yc
    cov = se_kernel(xq, xq, hyp) - k_qc @ k_inv @ k_qc.T
    return mean, cov


class TestKernel:
    def test_hand_values(self):
        hyp = GPHyperparams(0.5, 2.0, 0.1)
        k = se_kernel([0.0, 1.0], [0.0, 1.0], hyp)
        off = 4.0 * math.exp(-1.0 / (2 * 0.25))
        np.testing.assert_allclose(k, [[4.0, off], [off, 4.0]], rtol=0, atol=1e-15)

    def test_rejects_nonpositive_hyperparams(self):
        for bad in ({"length_scale": 0.0}, {"kernel_scale": -1.0}, {"noise_std": 0.0}):
            with pytest.raises(ValueError, match="strictly positive"):
                GPHyperparams(**bad)

    def test_jitter_only_when_needed(self):
        a = np.array([[2.0, 1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(jittered_cholesky(a), np.linalg.cholesky(a))
        # duplicated points without noise: singular, fixed by the smallest jitter that works
        xs = np.array([0.0, 0.0, 1.0])
        k = se_kernel(xs, xs, FIXED)
        chol = jittered_cholesky(k)
        assert np.allclose(chol @ chol.T, k, atol=1e-6)

    def test_jitter_failure_reports_condition(self):
        with pytest.raises(np.linalg.LinAlgError, match="condition estimate"):
            jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestSampling:
    def test_monte_carlo_covariance(self):
        hyp = GPHyperparams(0.4, 1.3, 0.05)
        xs = np.array([-1.0, -0.8, 0.0, 1.5])
        draws = sample_curve(hyp, xs, make_rng(3), size=100_000)[..., 0]
        n = len(draws)
        cov = se_kernel(xs, xs, hyp) + hyp.noise_std**2 * np.eye(4)
        emp = np.cov(draws, rowvar=False)
        for i in range(4):
            assert abs(draws[:, i].mean()) < 3 * math.sqrt(cov[i, i] / n)
            for j in range(4):
                se = math.sqrt((cov[i, i] * cov[j, j] + cov[i, j] ** 2) / (n - 1))
                assert abs(emp[i, j] - cov[i, j]) < 3 * se, (i, j)

    def test_same_seed_same_stream(self):
        a = sample_episode(EpisodeSpec(), make_rng(11))
        b = sample_episode(EpisodeSpec(), make_rng(11))
        assert a.x_target.tobytes() == b.x_target.tobytes()
        assert a.y_target.tobytes() == b.y_target.tobytes()

    def test_streams_differ(self):
        a = make_rng(5, 0).standard_normal(4)
        b = make_rng(5, 1).standard_normal(4)
        assert not np.array_equal(a, b)


class TestEpisodes:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["fixed", "random"]))
    def test_episode_invariants(self, seed, mode):
        spec = EpisodeSpec(mode=mode)
        e = sample_episode(spec, make_rng(seed))
        assert 3 <= e.n <= e.m <= 100
        assert e.context_is_subset()
        assert np.all((e.x_target >= -2.0) & (e.x_target <= 2.0))
        hyp = e.hyperparams
        if mode == "fixed":
            assert hyp == {"length_scale": 0.6, "kernel_scale": 1.0, "noise_std": 0.02}
        else:
            assert 0.1 <= hyp["length_scale"] <= 0.6
            assert 0.1 <= hyp["kernel_scale"] <= 1.0

    def test_sizes_cover_range(self):
        rng = make_rng(0)
        sizes = [EpisodeSpec().draw_sizes(rng) for _ in range(5000)]
        ns = np.array([s[0] for s in sizes])
        ms = np.array([s[1] for s in sizes])
        assert ns.min() == 3 and ns.max() == 100
        assert np.all(ms >= ns) and ms.max() == 100
        # n is uniform on 98 values
        assert abs(ns.mean() - 51.5) < 3 * math.sqrt((98**2 - 1) / 12 / 5000)

    def test_batch_shares_sizes(self):
        b = sample_batch(EpisodeSpec(mode="random"), make_rng(2), 16)
        assert b.x_context.shape[0] == 16 and b.x_target.shape[0] == 16
        assert b.context_is_subset()

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            EpisodeSpec(min_context=2)
        with pytest.raises(ValueError, match="mode"):
            EpisodeSpec(mode="periodic")

    def test_dump_and_load_round_trip(self, tmp_path):
        rng = make_rng(9)
        episodes = [sample_episode(EpisodeSpec(mode="random"), rng) for _ in range(3)]
        dump_episodes(episodes, tmp_path / "eps.json")
        loaded = load_episodes(tmp_path / "eps.json")
        for a, b in zip(episodes, loaded):
            assert a.x_target.tobytes() == b.x_target.tobytes()
            assert a.y_context.tobytes() == b.y_context.tobytes()
            assert a.hyperparams == b.hyperparams

    def test_load_rejects_other_json(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(ValueError, match="not an episode dump"):
            load_episodes(tmp_path / "x.json")


class TestPosterior:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_dense_inverse(self, seed):
        rng = make_rng(seed)
        hyp = EpisodeSpec(mode="random").draw_hyperparams(rng)
        hyp = GPHyperparams(hyp.length_scale, hyp.kernel_scale, 0.1)
        xc = rng.uniform(-2, 2, size=(int(rng.integers(1, 20)), 1))
        yc = sample_curve(hyp, xc, rng)
        xq = rng.uniform(-2, 2, size=(7, 1))
        mean, cov = gp_posterior_joint(hyp, xc, yc, xq)
        d_mean, d_cov = dense_posterior(hyp, xc, yc, xq)
        np.testing.assert_allclose(mean, d_mean, rtol=0, atol=1e-8)
        np.testing.assert_allclose(cov, d_cov, rtol=0, atol=1e-8)

    def test_single_point_closed_form(self):
        hyp = GPHyperparams(1.0, 1.0, 0.5)
        mean, var = gp_posterior(hyp, [[0.0]], [[2.0]], [[0.0]])
        # prior var 1, noise var 0.25
        assert mean[0, 0] == pytest.approx(2.0 / 1.25, abs=1e-14)
        assert var[0, 0] == pytest.approx(1.0 - 1.0 / 1.25, abs=1e-14)
        _, var_y = gp_posterior(hyp, [[0.0]], [[2.0]], [[0.0]], include_noise=True)
        assert var_y[0, 0] == pytest.approx(1.0 - 1.0 / 1.25 + 0.25, abs=1e-14)

    def test_empty_context_is_prior(self):
        mean, var = gp_posterior(FIXED, np.zeros((0, 1)), np.zeros((0, 1)), [[0.3], [1.0]])
        np.testing.assert_array_equal(mean, 0.0)
        np.testing.assert_allclose(var, 1.0, rtol=0, atol=1e-15)

    def test_variance_shrinks_near_context(self):
        _, var = gp_posterior(FIXED, [[0.0]], [[1.0]], [[0.0], [1.9]])
        assert var[0, 0] < 1e-3 < var[1, 0]
