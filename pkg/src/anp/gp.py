"""Squared-exponential GP curves: sampling, episodes and the exact posterior.

Random streams are numpy ``Generator`` objects over PCG64 (see
:func:`make_rng`), so an episode stream is fully determined by its seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .model import Episode, stack_episodes

JITTER_START = 1e-10
JITTER_MAX = 1e-4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for stream ``stream`` of base seed ``seed`` (seeded with ``seed + stream``)."""
    return np.random.Generator(np.random.PCG64(seed + stream))


@dataclass(frozen=True)
class GPHyperparams:
    length_scale: float = 0.6
    kernel_scale: float = 1.0
    noise_std: float = 0.02

    def __post_init__(self):
        for name in ("length_scale", "kernel_scale", "noise_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")


FIXED = GPHyperparams(0.6, 1.0, 0.02)


@dataclass(frozen=True)
class EpisodeSpec:
    """Episode sizes and x-range; ``mode`` is ``"fixed"`` or ``"random"`` kernel hyperparameters."""

    min_context: int = 3
    max_points: int = 100
    x_low: float = -2.0
    x_high: float = 2.0
    mode: str = "fixed"
    fixed: GPHyperparams = FIXED
    length_scale_range: tuple[float, float] = (0.1, 0.6)
    kernel_scale_range: tuple[float, float] = (0.1, 1.0)

    def __post_init__(self):
        if self.min_context < 3 or self.max_points < self.min_context:
            raise ValueError("need 3 <= min_context <= max_points")
        if self.mode not in ("fixed", "random"):
            raise ValueError(f"mode must be 'fixed' or 'random', got {self.mode!r}")

    def draw_hyperparams(self, rng: np.random.Generator) -> GPHyperparams:
        if self.mode == "fixed":
            return self.fixed
        length = rng.uniform(*self.length_scale_range)
        scale = rng.uniform(*self.kernel_scale_range)
        return GPHyperparams(length, scale, self.fixed.noise_std)

    def draw_sizes(self, rng: np.random.Generator) -> tuple[int, int]:
        n = int(rng.integers(self.min_context, self.max_points + 1))
        m = n + int(rng.integers(0, self.max_points - n + 1))
        return n, m


def se_kernel(xs1, xs2, hyp: GPHyperparams) -> np.ndarray:
    """``sigma_f^2 exp(-(x - x')^2 / (2 l^2))``; no noise term."""
    a = np.asarray(xs1, dtype=float).reshape(-1, 1)
    b = np.asarray(xs2, dtype=float).reshape(1, -1)
    return hyp.kernel_scale**2 * np.exp(-((a - b) ** 2) / (2.0 * hyp.length_scale**2))


def jittered_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Cholesky factor, adding diagonal jitter 1e-10, 1e-9, ... 1e-4 only if needed."""
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(len(matrix))
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(matrix + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise np.linalg.LinAlgError(
        f"Cholesky failed with jitter up to {JITTER_MAX:g}; condition estimate {np.linalg.cond(matrix):.3e}"
    )


def sample_curve(hyp: GPHyperparams, xs, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``y ~ N(0, K + sigma_n^2 I)`` at ``xs``: shape ``[k, 1]``, or ``[size, k, 1]``."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 1)
    cov = se_kernel(xs, xs, hyp) + hyp.noise_std**2 * np.eye(len(xs))
    chol = jittered_cholesky(cov)
    if size is None:
        return chol @ rng.standard_normal((len(xs), 1))
    return chol @ rng.standard_normal((size, len(xs), 1))


def _episode_from_curve(xs: np.ndarray, ys: np.ndarray, n: int, hyp: GPHyperparams) -> Episode:
    # x-values are iid uniform, so the first n targets are a uniformly random subset
    idx = np.arange(n)
    return Episode(xs[:n].copy(), ys[:n].copy(), xs, ys, idx, hyperparams=hyp_dict(hyp))


def sample_episode(spec: EpisodeSpec, rng: np.random.Generator, sizes: tuple[int, int] | None = None) -> Episode:
    """One episode: ``n ~ U[3, 100]``, ``m ~ n + U[0, 100 - n]``, x uniform on the range."""
    hyp = spec.draw_hyperparams(rng)
    n, m = sizes if sizes is not None else spec.draw_sizes(rng)
    xs = rng.uniform(spec.x_low, spec.x_high, size=(m, 1))
    ys = sample_curve(hyp, xs, rng)
    return _episode_from_curve(xs, ys, n, hyp)


def sample_batch(spec: EpisodeSpec, rng: np.random.Generator, batch_size: int) -> Episode:
    """``batch_size`` episodes sharing one draw of ``(n, m)``, stacked along a leading axis."""
    n, m = spec.draw_sizes(rng)
    episodes = [sample_episode(spec, rng, sizes=(n, m)) for _ in range(batch_size)]
    return stack_episodes(episodes)


def gp_posterior(hyp: GPHyperparams, x_context, y_context, x_query, include_noise: bool = False):
    """Exact posterior mean and marginal variance of the latent function at ``x_query``.

    With ``include_noise`` the observation noise ``sigma_n^2`` is added to the variance.
    """
    mean, cov = gp_posterior_joint(hyp, x_context, y_context, x_query)
    var = np.diag(cov).copy().reshape(-1, 1)
    np.maximum(var, 0.0, out=var)
    if include_noise:
        var = var + hyp.noise_std**2
    return mean, var


def gp_posterior_joint(hyp: GPHyperparams, x_context, y_context, x_query):
    """Posterior mean ``[q, 1]`` and full covariance ``[q, q]`` of the latent function."""
    xq = np.asarray(x_query, dtype=float).reshape(-1, 1)
    xc = np.asarray(x_context, dtype=float).reshape(-1, 1)
    yc = np.asarray(y_context, dtype=float).reshape(-1, 1)
    prior_cov = se_kernel(xq, xq, hyp)
    if len(xc) == 0:
        return np.zeros((len(xq), 1)), prior_cov
    k_cc = se_kernel(xc, xc, hyp) + hyp.noise_std**2 * np.eye(len(xc))
    k_qc = se_kernel(xq, xc, hyp)
    chol = jittered_cholesky(k_cc)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, yc))
    v = np.linalg.solve(chol, k_qc.T)
    return k_qc @ alpha, prior_cov - v.T @ v


def hyp_dict(hyp: GPHyperparams) -> dict:
    return {"length_scale": hyp.length_scale, "kernel_scale": hyp.kernel_scale, "noise_std": hyp.noise_std}


# fixture dump -----------------------------------------------------------------

def dump_episodes(episodes: Iterable[Episode], path) -> None:
    """Write episodes as a JSON document (arrays as nested lists, exact float repr)."""
    records = []
    for e in episodes:
        records.append({
            "x_C": e.x_context.tolist(),
            "y_C": e.y_context.tolist(),
            "x_T": e.x_target.tolist(),
            "y_T": e.y_target.tolist(),
            "context_indices": np.asarray(e.context_indices).tolist(),
            "hyperparams": e.hyperparams,
        })
    with open(path, "w") as f:
        json.dump({"format": "anp-episodes", "version": 1, "episodes": records}, f)


def load_episodes(path) -> list[Episode]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "anp-episodes":
        raise ValueError(f"{path}: not an episode dump")
    out = []
    for r in doc["episodes"]:
        def arr(key):
            a = np.asarray(r[key], dtype=float)
            return a.reshape(-1, 1) if a.ndim == 1 else a
        out.append(Episode(arr("x_C"), arr("y_C"), arr("x_T"), arr("y_T"),
                           np.asarray(r["context_indices"], dtype=int), r.get("hyperparams")))
    return out
