"""(Attentive) neural process: encoders, decoder, ELBO and prediction.

All functions accept arrays with optional leading batch axes, e.g. a single
episode ``x_C: [n, d_x]`` or a stacked batch ``x_C: [B, n, d_x]`` whose
episodes share ``n`` and ``m``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from . import autodiff as ad
from .attention import AttentionKind, cross_attention, init_multihead, init_self_attention, self_attention_stack
from .autodiff import Tensor

ParamStore = dict[str, Tensor]

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
SIGMA_Z_FLOOR = 0.1
SIGMA_Y_FLOOR = 0.1


@dataclass
class Episode:
    """Context set plus target set; the context rows are ``x_T[context_indices]``."""

    x_context: np.ndarray
    y_context: np.ndarray
    x_target: np.ndarray
    y_target: np.ndarray
    context_indices: np.ndarray
    hyperparams: dict | None = None

    def __post_init__(self):
        if self.x_target.shape[-2] < 1:
            raise ValueError("an episode needs at least one target")
        if len(self.context_indices) != self.x_context.shape[-2]:
            raise ValueError("context_indices length does not match the context size")

    @property
    def n(self) -> int:
        return self.x_context.shape[-2]

    @property
    def m(self) -> int:
        return self.x_target.shape[-2]

    def context_is_subset(self) -> bool:
        idx = np.asarray(self.context_indices, dtype=int)
        return bool(
            np.array_equal(self.x_target[..., idx, :], self.x_context)
            and np.array_equal(self.y_target[..., idx, :], self.y_context)
        )


def stack_episodes(episodes: list[Episode]) -> Episode:
    """Stack episodes of equal ``(n, m)`` along a new leading axis."""
    first = episodes[0]
    return Episode(
        np.stack([e.x_context for e in episodes]),
        np.stack([e.y_context for e in episodes]),
        np.stack([e.x_target for e in episodes]),
        np.stack([e.y_target for e in episodes]),
        first.context_indices,
    )


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of an (A)NP.  ``attention="uniform"`` with no self-attention is the plain NP.

    ``d`` is the width of every hidden layer and the size of ``r`` and ``z``.
    """

    d: int = 128
    attention: str = "multihead"
    heads: int = 8
    self_attention_layers: int = 0
    d_x: int = 1
    d_y: int = 1
    det_layers: int = 4
    latent_layers: int = 3
    latent_head_layers: int = 2
    key_layers: int = 2
    decoder_hidden_layers: int = 3

    def __post_init__(self):
        if self.d <= 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.self_attention_layers < 0:
            raise ValueError("self_attention_layers must be >= 0")
        for name in ("det_layers", "latent_layers", "latent_head_layers", "key_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.kind.validate(self.d)
        if self.self_attention_layers and self.d % self.heads:
            raise ValueError(f"{self.heads} heads do not divide d={self.d}")

    @property
    def kind(self) -> AttentionKind:
        return AttentionKind(self.attention, self.heads if self.attention == "multihead" else 1)

    @property
    def uses_key_mlp(self) -> bool:
        return self.attention in ("dot_product", "multihead")

    def det_widths(self) -> list[int]:
        return [self.d_x + self.d_y] + [self.d] * self.det_layers

    def latent_widths(self) -> list[int]:
        return [self.d_x + self.d_y] + [self.d] * self.latent_layers

    def latent_head_widths(self) -> list[int]:
        return [self.d] * self.latent_head_layers + [2 * self.d]

    def key_widths(self) -> list[int]:
        return [self.d_x] + [self.d] * self.key_layers

    def decoder_widths(self) -> list[int]:
        return [self.d_x + 2 * self.d] + [self.d] * self.decoder_hidden_layers + [2 * self.d_y]

    def to_dict(self) -> dict:
        return asdict(self)


class LatentDistribution(NamedTuple):
    mu: Tensor
    sigma: Tensor


class PredictiveDistribution(NamedTuple):
    mu: Tensor
    sigma: Tensor


@dataclass
class Model:
    config: ModelConfig
    params: ParamStore = field(repr=False)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    d = config.d
    params: ParamStore = {}
    params.update(ad.init_mlp(rng, "det/pair", config.det_widths()))
    if config.self_attention_layers:
        params.update(init_self_attention(rng, "det/self", d, config.heads, config.self_attention_layers))
    if config.uses_key_mlp:
        params.update(ad.init_mlp(rng, "det/key", config.key_widths()))
    if config.attention == "multihead":
        params.update(init_multihead(rng, "det/cross", d, d, d, config.heads))
    params.update(ad.init_mlp(rng, "latent/pair", config.latent_widths()))
    if config.self_attention_layers:
        params.update(init_self_attention(rng, "latent/self", d, config.heads, config.self_attention_layers))
    params.update(ad.init_mlp(rng, "latent/head", config.latent_head_widths()))
    params.update(ad.init_mlp(rng, "decoder", config.decoder_widths()))
    params["r_empty"] = ad.parameter(np.zeros(d))
    return params


def init_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    return Model(config, init_params(config, rng))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {k: v.shape for k, v in init_params(config, np.random.default_rng(0)).items()}


def validate_params(params: Mapping[str, Tensor], config: ModelConfig) -> None:
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(params))
    if missing:
        raise KeyError(f"parameter store is missing {missing}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise KeyError(f"parameter store has unexpected entries {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {params[name].shape}, expected {shape}")


# encoders -----------------------------------------------------------------

def _pairs(x, y) -> Tensor:
    return ad.concat([ad.as_tensor(x), ad.as_tensor(y)], axis=-1)


def encode_deterministic(params: Mapping[str, Tensor], config: ModelConfig, x_context, y_context, x_target) -> Tensor:
    """Query-specific representations ``r_*: [..., m, d]``."""
    x_context, x_target = ad.as_tensor(x_context), ad.as_tensor(x_target)
    if x_context.shape[-2] == 0:
        raise ValueError("encode_deterministic needs a nonempty context; use r_empty for n = 0")
    values = ad.forward_mlp(params, "det/pair", _pairs(x_context, y_context), config.det_widths())
    if config.self_attention_layers:
        values = self_attention_stack(params, "det/self", values, config.self_attention_layers, config.heads)
    if config.uses_key_mlp:
        keys = ad.forward_mlp(params, "det/key", x_context, config.key_widths())
        queries = ad.forward_mlp(params, "det/key", x_target, config.key_widths())
    else:
        keys, queries = x_context, x_target
    return cross_attention(config.kind, params, "det/cross", queries, keys, values)


def prior(config: ModelConfig, lead: tuple[int, ...] = ()) -> LatentDistribution:
    return LatentDistribution(ad.Tensor(np.zeros(lead + (config.d,))), ad.Tensor(np.ones(lead + (config.d,))))


def encode_latent(params: Mapping[str, Tensor], config: ModelConfig, x, y) -> LatentDistribution:
    x = ad.as_tensor(x)
    if x.shape[-2] == 0:
        return prior(config, x.shape[:-2])
    h = ad.forward_mlp(params, "latent/pair", _pairs(x, y), config.latent_widths())
    if config.self_attention_layers:
        h = self_attention_stack(params, "latent/self", h, config.self_attention_layers, config.heads)
    s = ad.mean(h, axis=-2)
    out = ad.forward_mlp(params, "latent/head", s, config.latent_head_widths())
    d = config.d
    mu = ad.slice_last(out, 0, d)
    omega = ad.slice_last(out, d, 2 * d)
    sigma = ad.add(SIGMA_Z_FLOOR, ad.mul(1.0 - SIGMA_Z_FLOOR, ad.sigmoid(omega)))
    return LatentDistribution(mu, sigma)


def sample_latent(dist: LatentDistribution, noise) -> Tensor:
    """Reparametrised draw ``mu + sigma * noise``."""
    return ad.add(dist.mu, ad.mul(dist.sigma, ad.as_tensor(noise)))


def decode(params: Mapping[str, Tensor], config: ModelConfig, x_target, r: Tensor, z: Tensor) -> PredictiveDistribution:
    x_target = ad.as_tensor(x_target)
    m = x_target.shape[-2]
    lead = x_target.shape[:-2]
    z_rows = ad.broadcast_to(ad.reshape(z, z.shape[:-1] + (1, z.shape[-1])), lead + (m, z.shape[-1]))
    if r.shape[:-2] != lead:
        r = ad.broadcast_to(r, lead + r.shape[-2:])
    out = ad.forward_mlp(params, "decoder", ad.concat([x_target, r, z_rows], axis=-1), config.decoder_widths())
    mu = ad.slice_last(out, 0, config.d_y)
    omega = ad.slice_last(out, config.d_y, 2 * config.d_y)
    sigma = ad.add(SIGMA_Y_FLOOR, ad.mul(1.0 - SIGMA_Y_FLOOR, ad.softplus(omega)))
    return PredictiveDistribution(mu, sigma)


# objective ----------------------------------------------------------------

def gaussian_nll(y, mu, sigma) -> Tensor:
    """Mean of ``-log N(y | mu, sigma^2)`` over the last two axes (targets, outputs)."""
    y, mu, sigma = ad.as_tensor(y), ad.as_tensor(mu), ad.as_tensor(sigma)
    if y.shape != mu.shape or mu.shape != sigma.shape:
        raise ad.ShapeError(f"gaussian_nll: shapes {y.shape}, {mu.shape}, {sigma.shape} differ")
    if np.any(sigma.data <= 0):
        raise ValueError("gaussian_nll: sigma must be positive")
    z = ad.div(ad.sub(y, mu), sigma)
    per_point = ad.add(ad.add(HALF_LOG_2PI, ad.log(sigma)), ad.mul(0.5, ad.square(z)))
    return ad.mean(ad.mean(per_point, axis=-1), axis=-1)


def kl_diag_gaussians(q1: LatentDistribution, q2: LatentDistribution) -> Tensor:
    """``KL(q1 || q2)`` summed over the last axis."""
    if q1.mu.shape[-1] != q2.mu.shape[-1]:
        raise ad.ShapeError(f"kl_diag_gaussians: dimensions {q1.mu.shape} vs {q2.mu.shape}")
    var1, var2 = ad.square(q1.sigma), ad.square(q2.sigma)
    log_ratio = ad.sub(ad.log(q2.sigma), ad.log(q1.sigma))
    quad = ad.div(ad.add(var1, ad.square(ad.sub(q1.mu, q2.mu))), ad.mul(2.0, var2))
    return ad.sum(ad.sub(ad.add(log_ratio, quad), 0.5), axis=-1)


class LossTerms(NamedTuple):
    loss: Tensor
    recon_nll: float
    kl: float


def elbo_loss(params: Mapping[str, Tensor], config: ModelConfig, x_context, y_context, x_target, y_target, noise) -> LossTerms:
    """One-sample negative ELBO, averaged over any batch axes.

    ``loss = NLL(y_T | z ~ q(z|s_T)) + KL(q(z|s_T) || q(z|s_C)) / m``; the
    reported ``kl`` diagnostic is the unnormalised KL.
    """
    if np.shape(x_context)[-2] == 0:
        raise ValueError("elbo_loss needs at least one context point")
    m = np.shape(x_target)[-2]
    q_context = encode_latent(params, config, x_context, y_context)
    q_target = encode_latent(params, config, x_target, y_target)
    z = sample_latent(q_target, noise)
    r = encode_deterministic(params, config, x_context, y_context, x_target)
    pred = decode(params, config, x_target, r, z)
    nll = gaussian_nll(y_target, pred.mu, pred.sigma)
    kl = kl_diag_gaussians(q_target, q_context)
    loss = ad.mean(ad.add(nll, ad.mul(1.0 / m, kl)))
    return LossTerms(loss, float(np.mean(nll.data)), float(np.mean(kl.data)))


# prediction ---------------------------------------------------------------

def _representation(params, config, x_context, y_context, x_target) -> Tensor:
    x_target = ad.as_tensor(x_target)
    if np.shape(x_context)[-2] == 0:
        lead = x_target.shape[:-2]
        r = params["r_empty"]
        return ad.broadcast_to(ad.reshape(r, (1,) * (len(lead) + 1) + r.shape), lead + (x_target.shape[-2], config.d))
    return encode_deterministic(params, config, x_context, y_context, x_target)


def predict_with_noise(params: Mapping[str, Tensor], config: ModelConfig, x_context, y_context, x_target, noise) -> list[PredictiveDistribution]:
    """Predictive distributions for each row of ``noise`` (shape ``[S, ..., d]``)."""
    noise = np.asarray(noise, dtype=float)
    with ad.no_grad():
        r = _representation(params, config, x_context, y_context, x_target)
        q = encode_latent(params, config, x_context, y_context)
        return [decode(params, config, x_target, r, sample_latent(q, eps)) for eps in noise]


def predict(params: Mapping[str, Tensor], config: ModelConfig, x_context, y_context, x_target, z_samples: int, rng: np.random.Generator) -> list[PredictiveDistribution]:
    """One predictive distribution per latent draw ``z ~ q(z | s_C)``; ``n = 0`` uses ``r_empty`` and the prior."""
    lead = np.shape(x_target)[:-2]
    noise = rng.standard_normal((z_samples,) + tuple(lead) + (config.d,))
    return predict_with_noise(params, config, x_context, y_context, x_target, noise)
