"""Neural processes and attentive neural processes on numpy."""

from .attention import AttentionKind
from .config import TrainConfig
from .gp import EpisodeSpec, GPHyperparams, gp_posterior, make_rng, sample_curve, sample_episode, se_kernel
from .model import (
    Episode,
    LatentDistribution,
    Model,
    ModelConfig,
    PredictiveDistribution,
    decode,
    elbo_loss,
    encode_deterministic,
    encode_latent,
    gaussian_nll,
    init_model,
    init_params,
    kl_diag_gaussians,
    predict,
    sample_latent,
)

from .metrics import evaluate, thompson_bo
from .training import load_checkpoint, load_model, train

__version__ = "0.1.0"

__all__ = [
    "AttentionKind",
    "TrainConfig",
    "EpisodeSpec",
    "GPHyperparams",
    "gp_posterior",
    "make_rng",
    "sample_curve",
    "sample_episode",
    "se_kernel",
    "Episode",
    "LatentDistribution",
    "Model",
    "ModelConfig",
    "PredictiveDistribution",
    "decode",
    "elbo_loss",
    "encode_deterministic",
    "encode_latent",
    "gaussian_nll",
    "init_model",
    "init_params",
    "kl_diag_gaussians",
    "predict",
    "sample_latent",
    "evaluate",
    "thompson_bo",
    "load_checkpoint",
    "load_model",
    "train",
]
