"""Context reconstruction / target NLL and Thompson-sampling Bayesian optimisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .gp import GPHyperparams, gp_posterior, gp_posterior_joint, jittered_cholesky, sample_curve
from .model import Episode, Model, decode, encode_latent, gaussian_nll, predict_with_noise, sample_latent, _representation


def _nll_given_noise(model: Model, x_c, y_c, x_q, y_q, noise) -> float:
    (pred,) = predict_with_noise(model.params, model.config, x_c, y_c, x_q, noise[None])
    return float(gaussian_nll(y_q, pred.mu, pred.sigma).data)


def _noise(model: Model, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(model.config.d)


def context_reconstruction_nll(model: Model, episode: Episode, rng: np.random.Generator) -> float:
    """Mean negative log-likelihood of the contexts under one ``z ~ q(z | s_C)``."""
    if episode.n == 0:
        raise ValueError("context reconstruction needs a nonempty context")
    noise = _noise(model, rng)
    return _nll_given_noise(model, episode.x_context, episode.y_context, episode.x_context, episode.y_context, noise)


def target_nll(model: Model, episode: Episode, rng: np.random.Generator) -> float:
    """Mean negative log-likelihood of the targets under one ``z ~ q(z | s_C)``."""
    noise = _noise(model, rng)
    return _nll_given_noise(model, episode.x_context, episode.y_context, episode.x_target, episode.y_target, noise)


def episode_metrics(model: Model, episode: Episode, rng: np.random.Generator) -> tuple[float, float]:
    """``(context NLL, target NLL)`` sharing a single latent draw."""
    params, config = model.params, model.config
    noise = _noise(model, rng)
    with ad.no_grad():
        z = sample_latent(encode_latent(params, config, episode.x_context, episode.y_context), noise)
        out = []
        for x, y in ((episode.x_context, episode.y_context), (episode.x_target, episode.y_target)):
            r = _representation(params, config, episode.x_context, episode.y_context, x)
            pred = decode(params, config, x, r, z)
            out.append(float(gaussian_nll(y, pred.mu, pred.sigma).data))
    return out[0], out[1]


def evaluate(model: Model, episodes, rng: np.random.Generator) -> dict[str, np.ndarray]:
    ctx, tgt = zip(*(episode_metrics(model, e, rng) for e in episodes))
    return {"ctx_recon_nll": np.array(ctx), "tgt_nll": np.array(tgt)}


def oracle_nll(episode: Episode) -> tuple[float, float]:
    """Context and target NLL of the exact GP posterior (observation noise included)."""
    hyp = GPHyperparams(**episode.hyperparams)
    out = []
    for x, y in ((episode.x_context, episode.y_context), (episode.x_target, episode.y_target)):
        mean, var = gp_posterior(hyp, episode.x_context, episode.y_context, x, include_noise=True)
        out.append(float(gaussian_nll(y, mean, np.sqrt(var)).data))
    return out[0], out[1]


def mean_stderr(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


# Bayesian optimisation ----------------------------------------------------------

@dataclass
class BOTrace:
    x: np.ndarray
    y: np.ndarray
    true_min: float
    simple_regret: np.ndarray = field(init=False)
    cumulative_regret: np.ndarray = field(init=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.simple_regret = np.minimum.accumulate(self.y) - self.true_min
        self.cumulative_regret = np.cumsum(self.simple_regret)

    def check(self) -> None:
        if np.any(self.simple_regret < 0):
            raise AssertionError("negative simple regret")
        if np.any(np.diff(self.simple_regret) > 0):
            raise AssertionError("simple regret increased")
        if not np.allclose(self.cumulative_regret, np.cumsum(self.simple_regret), rtol=0, atol=0):
            raise AssertionError("cumulative regret is not the prefix sum of simple regret")


BO_GRID_SIZE = 256


def bo_grid(size: int = BO_GRID_SIZE, low: float = -2.0, high: float = 2.0) -> np.ndarray:
    return np.linspace(low, high, size).reshape(-1, 1)


def sample_objective(hyp: GPHyperparams, rng: np.random.Generator, size: int = BO_GRID_SIZE) -> tuple[np.ndarray, np.ndarray]:
    grid = bo_grid(size)
    return grid, sample_curve(hyp, grid, rng)


def _run_bo(grid, values, iterations, rng, choose) -> BOTrace:
    values = np.asarray(values, dtype=float).reshape(-1)
    picked = [int(rng.integers(len(grid)))]
    while len(picked) < iterations:
        idx = np.asarray(picked)
        picked.append(int(choose(grid[idx], values[idx].reshape(-1, 1))))
    idx = np.asarray(picked)
    return BOTrace(grid[idx, 0], values[idx], float(values.min()))


def thompson_bo(model: Model, grid, values, iterations: int, rng: np.random.Generator) -> BOTrace:
    """Minimise a tabulated objective by acting on the predictive mean under one latent draw per step.

    The first query is a uniformly random grid point; every evaluation so far is the context.
    """
    grid = np.asarray(grid, dtype=float).reshape(-1, model.config.d_x)

    def choose(x_c, y_c):
        noise = rng.standard_normal((1, model.config.d))
        (pred,) = predict_with_noise(model.params, model.config, x_c, y_c, grid, noise)
        return np.argmin(pred.mu.data[:, 0])

    return _run_bo(grid, values, iterations, rng, choose)


def gp_thompson_bo(hyp: GPHyperparams, grid, values, iterations: int, rng: np.random.Generator) -> BOTrace:
    """Oracle baseline: Thompson sampling with the exact GP posterior over the grid."""
    grid = np.asarray(grid, dtype=float).reshape(-1, 1)

    def choose(x_c, y_c):
        mean, cov = gp_posterior_joint(hyp, x_c, y_c, grid)
        chol = jittered_cholesky(cov + 1e-10 * np.eye(len(grid)))
        sample = mean[:, 0] + chol @ rng.standard_normal(len(grid))
        return np.argmin(sample)

    return _run_bo(grid, values, iterations, rng, choose)


def write_bo_csv(traces: list[BOTrace], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["function_id", "iteration", "x_query", "y_query", "simple_regret", "cumulative_regret"])
        for fid, t in enumerate(traces):
            for i in range(len(t.x)):
                w.writerow([fid, i + 1, repr(float(t.x[i])), repr(float(t.y[i])),
                            repr(float(t.simple_regret[i])), repr(float(t.cumulative_regret[i]))])
