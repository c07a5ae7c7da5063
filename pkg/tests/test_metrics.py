import csv
import math

import numpy as np
import pytest

from anp import autodiff as ad
from anp import metrics
from anp.gp import FIXED, EpisodeSpec, GPHyperparams, gp_posterior, make_rng, sample_episode
from anp.metrics import (
    BOTrace,
    context_reconstruction_nll,
    episode_metrics,
    evaluate,
    gp_thompson_bo,
    mean_stderr,
    oracle_nll,
    sample_objective,
    target_nll,
    thompson_bo,
    write_bo_csv,
)
from anp.model import Episode, ModelConfig, PredictiveDistribution, init_model


@pytest.fixture
def model():
    return init_model(ModelConfig(d=8, attention="multihead", heads=2), make_rng(0))


@pytest.fixture
def episode():
    return sample_episode(EpisodeSpec(max_points=40), make_rng(4))


class TestNLL:
    def test_perfect_mean_unit_sigma(self, model, episode, monkeypatch):
        def fake(params, config, x_c, y_c, x_q, noise):
            assert x_q is episode.x_context
            mu = ad.Tensor(episode.y_context.copy())
            return [PredictiveDistribution(mu, ad.Tensor(np.ones_like(mu.data)))]

        monkeypatch.setattr(metrics, "predict_with_noise", fake)
        value = context_reconstruction_nll(model, episode, make_rng(0))
        assert value == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-15)
        assert value == pytest.approx(0.91894, abs=1e-5)

    def test_oracle_predictions_reproduce_oracle_nll(self, model, episode, monkeypatch):
        def as_gp(params, config, x_c, y_c, x_q, noise):
            mean, var = gp_posterior(FIXED, x_c, y_c, x_q, include_noise=True)
            return [PredictiveDistribution(ad.Tensor(mean), ad.Tensor(np.sqrt(var)))]

        monkeypatch.setattr(metrics, "predict_with_noise", as_gp)
        ctx, tgt = oracle_nll(episode)
        assert abs(context_reconstruction_nll(model, episode, make_rng(0)) - ctx) <= 1e-12
        assert abs(target_nll(model, episode, make_rng(0)) - tgt) <= 1e-12

    def test_targets_equal_to_contexts(self, model, episode):
        same = Episode(episode.x_context, episode.y_context, episode.x_context, episode.y_context,
                       np.arange(episode.n))
        a = context_reconstruction_nll(model, same, make_rng(8))
        b = target_nll(model, same, make_rng(8))
        assert a == b
        ctx, tgt = episode_metrics(model, same, make_rng(8))
        assert ctx == tgt == pytest.approx(a, abs=1e-12)

    def test_context_permutation_invariance(self, model, episode):
        perm = make_rng(1).permutation(episode.n)
        shuffled = Episode(episode.x_context[perm], episode.y_context[perm], episode.x_target, episode.y_target,
                           episode.context_indices[perm])
        for fn in (context_reconstruction_nll, target_nll):
            assert abs(fn(model, episode, make_rng(2)) - fn(model, shuffled, make_rng(2))) <= 1e-9

    def test_episode_metrics_matches_separate_calls(self, model, episode):
        ctx, tgt = episode_metrics(model, episode, make_rng(3))
        assert ctx == pytest.approx(context_reconstruction_nll(model, episode, make_rng(3)), abs=1e-12)
        assert tgt == pytest.approx(target_nll(model, episode, make_rng(3)), abs=1e-12)

    def test_deterministic_and_finite(self, model):
        episodes = [sample_episode(EpisodeSpec(mode="random"), make_rng(s)) for s in range(10)]
        a = evaluate(model, episodes, make_rng(5))
        b = evaluate(model, episodes, make_rng(5))
        for key in ("ctx_recon_nll", "tgt_nll"):
            assert a[key].tobytes() == b[key].tobytes()
            assert np.all(np.isfinite(a[key]))

    def test_empty_context(self, model):
        e = Episode(np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(0, int))
        with pytest.raises(ValueError, match="nonempty"):
            context_reconstruction_nll(model, e, make_rng(0))
        assert math.isfinite(target_nll(model, e, make_rng(0)))

    def test_mean_stderr(self):
        mean, se = mean_stderr([1.0, 2.0, 3.0, 4.0])
        assert mean == 2.5
        assert se == pytest.approx(math.sqrt(5 / 3) / 2, abs=1e-15)


class TestBO:
    def test_constant_objective_has_zero_regret(self, model):
        grid = np.linspace(-2, 2, 256).reshape(-1, 1)
        trace = thompson_bo(model, grid, np.full(256, 0.7), 10, make_rng(0))
        trace.check()
        np.testing.assert_array_equal(trace.simple_regret, 0.0)
        np.testing.assert_array_equal(trace.cumulative_regret, 0.0)

    def test_trace_invariants(self, model):
        rng = make_rng(1)
        for _ in range(5):
            grid, values = sample_objective(FIXED, rng)
            for trace in (thompson_bo(model, grid, values, 12, rng), gp_thompson_bo(FIXED, grid, values, 12, rng)):
                trace.check()
                assert len(trace.x) == 12
                assert np.all(trace.simple_regret >= 0)
                assert np.all(np.diff(trace.simple_regret) <= 0)
                np.testing.assert_array_equal(trace.cumulative_regret, np.cumsum(trace.simple_regret))
                assert set(trace.x) <= set(grid[:, 0])

    def test_regret_hand_values(self):
        trace = BOTrace([0.0, 1.0, 2.0], [3.0, 1.0, 2.0], true_min=0.5)
        np.testing.assert_array_equal(trace.simple_regret, [2.5, 0.5, 0.5])
        np.testing.assert_array_equal(trace.cumulative_regret, [2.5, 3.0, 3.5])

    def test_check_rejects_regret_below_minimum(self):
        with pytest.raises(AssertionError, match="negative"):
            BOTrace([0.0], [-1.0], true_min=0.0).check()

    def test_gp_oracle_finds_minimum(self):
        rng = make_rng(2)
        hits = 0
        for _ in range(10):
            grid, values = sample_objective(GPHyperparams(0.6, 1.0, 0.02), rng)
            trace = gp_thompson_bo(FIXED, grid, values, 30, rng)
            hits += trace.simple_regret[-1] < 0.05
        assert hits >= 8

    def test_csv(self, tmp_path):
        traces = [BOTrace([0.0, 1.0], [2.0, 1.0], 0.0), BOTrace([0.5], [0.25], 0.25)]
        write_bo_csv(traces, tmp_path / "bo.csv")
        with open(tmp_path / "bo.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["function_id", "iteration", "x_query", "y_query", "simple_regret", "cumulative_regret"]
        assert rows[1:] == [
            ["0", "1", "0.0", "2.0", "2.0", "2.0"],
            ["0", "2", "1.0", "1.0", "1.0", "3.0"],
            ["1", "1", "0.5", "0.25", "0.0", "0.0"],
        ]
