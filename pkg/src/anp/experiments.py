"""Named desk-scale training runs backing the acceptance suite.

Each run is trained once into ``<cache>/<name>/`` and reused while its
``config.cfg`` is unchanged.  Populate the cache ahead of ``pytest`` with::

    python -m anp.experiments [--cache DIR] [names...]
"""

from __future__ import annotations

import argparse
import logging
import os
from pathlib import Path

from . import config as cfgmod
from .config import TrainConfig
from .model import ModelConfig
from .training import load_checkpoint, train

DEFAULT_CACHE = Path(os.environ.get("ANP_ACCEPTANCE_CACHE", Path(__file__).resolve().parents[2] / ".acceptance_cache"))

GP_ITERATIONS = 30_000
IMAGE_ITERATIONS = 20_000
SEED = 1


def _gp(attention: str, dataset: str) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig(d=128, attention=attention, heads=8),
        dataset=dataset,
        iterations=GP_ITERATIONS,
        learning_rate=5e-5,
        seed=SEED,
        eval_interval=500,
        checkpoint_interval=10_000,
    )


def _image(attention: str, layers: int) -> TrainConfig:
    return TrainConfig(
        model=ModelConfig(d=128, attention=attention, heads=8, self_attention_layers=layers, d_x=2),
        dataset="synthetic",
        iterations=IMAGE_ITERATIONS,
        learning_rate=5e-5,
        seed=SEED,
        eval_interval=500,
        checkpoint_interval=10_000,
        synthetic_count=1000,
        synthetic_size=8,
        synthetic_seed=7,
    )


RUNS: dict[str, TrainConfig] = {
    "gp_fixed_np": _gp("uniform", "gp_fixed"),
    "gp_fixed_multihead": _gp("multihead", "gp_fixed"),
    "gp_fixed_dot_product": _gp("dot_product", "gp_fixed"),
    "gp_fixed_laplace": _gp("laplace", "gp_fixed"),
    "gp_random_np": _gp("uniform", "gp_random"),
    "gp_random_multihead": _gp("multihead", "gp_random"),
    "image_np": _image("uniform", 0),
    "image_stacked_multihead": _image("multihead", 2),
    # identical config to gp_fixed_np, trained again from scratch for the determinism check
    "gp_fixed_np_repeat": _gp("uniform", "gp_fixed"),
}


def run_dir(name: str, cache: Path = DEFAULT_CACHE) -> Path:
    return Path(cache) / name


def is_complete(name: str, cache: Path = DEFAULT_CACHE) -> bool:
    d = run_dir(name, cache)
    cfg_file = d / "config.cfg"
    return (d / "final.ckpt").exists() and cfg_file.exists() and cfg_file.read_text() == cfgmod.dumps(RUNS[name])


def ensure(name: str, cache: Path = DEFAULT_CACHE) -> Path:
    """Train ``name`` unless a finished run with the same config is cached; returns its directory."""
    d = run_dir(name, cache)
    if not is_complete(name, cache):
        train(RUNS[name], d)
    return d


def load_run(name: str, cache: Path = DEFAULT_CACHE):
    return load_checkpoint(ensure(name, cache) / "final.ckpt")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", default=list(RUNS))
    parser.add_argument("--cache", type=Path, default=DEFAULT_CACHE)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    for name in args.names:
        if name not in RUNS:
            parser.error(f"unknown run {name!r}; choose from {sorted(RUNS)}")
    for name in args.names:
        logging.info("run %s", name)
        ensure(name, args.cache)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
