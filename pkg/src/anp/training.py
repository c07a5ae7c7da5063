"""Adam, the episode training loop, metrics logging and checkpoints.

Checkpoint layout (all integers little-endian)::

    b"ANPC" | u32 version | u64 len + config text (key = value lines)
    u64 tensor count | per tensor: u64 len + UTF-8 name, u64 rank, u64 dims..., f64 values...
    u64 adam step | u64 tensor count | moment tensors named "m/<param>" and "v/<param>"
    u64 len + JSON text (iteration, rng states, running log accumulators)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from .config import TrainConfig
from .gp import EpisodeSpec, make_rng, sample_batch, sample_episode
from .images import ImageDataset, PixelEpisodeSpec, load_idx, sample_pixel_batch, sample_pixel_episode, synthetic_shapes
from .metrics import evaluate
from .model import Model, ParamStore, elbo_loss, init_params, validate_params

log = logging.getLogger(__name__)

MAGIC = b"ANPC"
VERSION = 1
METRICS_COLUMNS = ["iteration", "wall_clock_s", "train_loss", "ctx_recon_nll", "tgt_nll", "kl"]

TRAIN_STREAM = 0
EVAL_STREAM = 1
INIT_STREAM = 2


class NonFiniteLoss(FloatingPointError):
    def __init__(self, iteration: int, diagnostics: dict):
        super().__init__(f"non-finite loss at iteration {iteration}: {diagnostics}")
        self.iteration = iteration
        self.diagnostics = diagnostics


class CheckpointError(ValueError):
    pass


# Adam -------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, ad.Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: Mapping[str, ad.Tensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape or state.m[name].shape != p.data.shape:
            raise ad.ShapeError(f"adam_step: {name} has parameter {p.data.shape}, gradient {g.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# tasks ------------------------------------------------------------------------

class GPTask:
    def __init__(self, spec: EpisodeSpec):
        self.spec = spec

    def batch(self, rng, size):
        return sample_batch(self.spec, rng, size)

    def episode(self, rng):
        return sample_episode(self.spec, rng)


class ImageTask:
    def __init__(self, train: ImageDataset, test: ImageDataset, spec: PixelEpisodeSpec):
        self.train, self.test, self.spec = train, test, spec

    def batch(self, rng, size):
        return sample_pixel_batch(self.train, self.spec, rng, size)

    def episode(self, rng):
        return sample_pixel_episode(self.test, self.spec, rng)


def image_datasets(config: TrainConfig) -> tuple[ImageDataset, ImageDataset]:
    if config.dataset == "synthetic":
        size, count = config.synthetic_size, config.synthetic_count
        train = synthetic_shapes(count, size, config.synthetic_seed, "train")
        test = synthetic_shapes(max(count // 5, 1), size, config.synthetic_seed + 1, "test")
        return train, test
    path = Path(config.mnist_path)
    train = load_idx(path / "train-images-idx3-ubyte.gz" if path.is_dir() else path, "train")
    test_path = path / "t10k-images-idx3-ubyte.gz" if path.is_dir() else path
    return train, load_idx(test_path, "test")


def build_task(config: TrainConfig):
    if config.dataset in ("gp_fixed", "gp_random"):
        mode = "fixed" if config.dataset == "gp_fixed" else "random"
        return GPTask(EpisodeSpec(max_points=config.max_points or 100, mode=mode))
    train, test = image_datasets(config)
    pixels = train.height * train.width
    return ImageTask(train, test, PixelEpisodeSpec(max_points=min(config.max_points or 200, pixels)))


# training -----------------------------------------------------------------------

@dataclass
class TrainState:
    config: TrainConfig
    params: ParamStore
    adam: AdamState
    train_rng: np.random.Generator
    eval_rng: np.random.Generator
    iteration: int = 0
    loss_sum: float = 0.0
    kl_sum: float = 0.0
    count: int = 0

    @property
    def model(self) -> Model:
        return Model(self.config.model, self.params)


def init_state(config: TrainConfig) -> TrainState:
    params = init_params(config.model, make_rng(config.seed, INIT_STREAM))
    return TrainState(config, params, AdamState.zeros_like(params),
                      make_rng(config.seed, TRAIN_STREAM), make_rng(config.seed, EVAL_STREAM))


@dataclass
class TrainResult:
    state: TrainState
    rows: list[dict] = field(default_factory=list)


def _fmt(value: float) -> str:
    return format(value, ".17g")


def format_row(row: dict) -> list[str]:
    wall = row.get("wall_clock_s")
    return [str(row["iteration"]), "" if wall is None else _fmt(wall)] + [
        _fmt(row[k]) for k in METRICS_COLUMNS[2:]
    ]


def train_step(state: TrainState, task) -> tuple[float, float]:
    config = state.config
    batch = task.batch(state.train_rng, config.batch_size)
    noise = state.train_rng.standard_normal((config.batch_size, config.model.d))
    terms = elbo_loss(state.params, config.model, batch.x_context, batch.y_context,
                      batch.x_target, batch.y_target, noise)
    loss = float(terms.loss.data)
    if not np.isfinite(loss):
        raise NonFiniteLoss(state.iteration + 1, {"loss": loss, "recon_nll": terms.recon_nll, "kl": terms.kl,
                                                  "n": batch.n, "m": batch.m})
    grads = ad.grad(terms.loss, state.params)
    adam_step(state.params, grads, state.adam, config.learning_rate)
    state.iteration += 1
    return loss, terms.kl


def train(config: TrainConfig, out_dir=None, state: TrainState | None = None, task=None) -> TrainResult:
    """Run (or resume) training to ``config.iterations``.

    With ``out_dir`` the metrics CSV is written (appended to when resuming) together with
    periodic ``ckpt_<iteration>.ckpt`` files and ``final.ckpt``.
    """
    state = state or init_state(config)
    task = task or build_task(config)
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(cfgmod.dumps(config))
        metrics_path = out / "metrics.csv"
        fresh = state.iteration == 0 or not metrics_path.exists()
        if not fresh:
            _truncate_metrics(metrics_path, state.iteration)
        handle = open(metrics_path, "w" if fresh else "a", newline="")
        writer = csv.writer(handle, lineterminator="\n")
        if fresh:
            writer.writerow(METRICS_COLUMNS)
    result = TrainResult(state)
    start = time.perf_counter()
    try:
        while state.iteration < config.iterations:
            loss, kl = train_step(state, task)
            state.loss_sum += loss
            state.kl_sum += kl
            state.count += 1
            it = state.iteration
            if it % config.eval_interval == 0 or it == config.iterations:
                episodes = [task.episode(state.eval_rng) for _ in range(config.eval_episodes)]
                scores = evaluate(state.model, episodes, state.eval_rng)
                row = {
                    "iteration": it,
                    "wall_clock_s": time.perf_counter() - start if config.log_wall_clock else None,
                    "train_loss": state.loss_sum / state.count,
                    "ctx_recon_nll": float(scores["ctx_recon_nll"].mean()),
                    "tgt_nll": float(scores["tgt_nll"].mean()),
                    "kl": state.kl_sum / state.count,
                }
                for key in METRICS_COLUMNS[2:]:
                    if not np.isfinite(row[key]):
                        raise NonFiniteLoss(it, row)
                state.loss_sum = state.kl_sum = 0.0
                state.count = 0
                result.rows.append(row)
                log.info("iter %d loss %.4f ctx %.4f tgt %.4f kl %.4f", it, row["train_loss"],
                         row["ctx_recon_nll"], row["tgt_nll"], row["kl"])
                if writer is not None:
                    writer.writerow(format_row(row))
                    handle.flush()
            if out is not None and config.checkpoint_interval and it % config.checkpoint_interval == 0:
                save_checkpoint(state, out / f"ckpt_{it:08d}.ckpt")
    finally:
        if writer is not None:
            handle.close()
    if out is not None:
        save_checkpoint(state, out / "final.ckpt")
    return result


def _truncate_metrics(path: Path, iteration: int) -> None:
    """Drop logged rows beyond ``iteration`` so a resumed run continues the same file."""
    lines = path.read_text().splitlines(keepends=True)
    kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= iteration]
    path.write_text("".join(kept))


def resume(path, out_dir=None, iterations: int | None = None) -> TrainResult:
    state = load_checkpoint(path)
    if iterations is not None:
        state.config = cfgmod.with_overrides(state.config, iterations=iterations)
    return train(state.config, out_dir, state=state)


# checkpoints ------------------------------------------------------------------------

def _write_bytes(buf, data: bytes) -> None:
    buf.write(struct.pack("<Q", len(data)))
    buf.write(data)


def _write_tensors(buf, tensors: Mapping[str, np.ndarray]) -> None:
    buf.write(struct.pack("<Q", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        _write_bytes(buf, name.encode("utf-8"))
        buf.write(struct.pack("<Q", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated at byte offset {self.pos} (needed {size} more bytes)")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u64())

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u64()):
            name = self.blob().decode("utf-8")
            rank = self.u64()
            dims = struct.unpack(f"<{rank}Q", self.take(8 * rank))
            count = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        return out


def save_checkpoint(state: TrainState, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_bytes(buf, cfgmod.dumps(state.config).encode("utf-8"))
    _write_tensors(buf, {k: p.data for k, p in state.params.items()})
    buf.write(struct.pack("<Q", state.adam.step))
    moments = {f"m/{k}": v for k, v in state.adam.m.items()}
    moments.update({f"v/{k}": v for k, v in state.adam.v.items()})
    _write_tensors(buf, moments)
    extra = {
        "iteration": state.iteration,
        "train_rng": state.train_rng.bit_generator.state,
        "eval_rng": state.eval_rng.bit_generator.state,
        "loss_sum": state.loss_sum.hex(),
        "kl_sum": state.kl_sum.hex(),
        "count": state.count,
    }
    _write_bytes(buf, json.dumps(extra, sort_keys=True).encode("utf-8"))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)


def _rng_from_state(state: dict) -> np.random.Generator:
    bitgen = np.random.PCG64()
    bitgen.state = state
    return np.random.Generator(bitgen)


def load_checkpoint(path) -> TrainState:
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    magic = r.take(4)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", r.take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = cfgmod.loads(r.blob().decode("utf-8"))
    except (cfgmod.ConfigError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: invalid embedded config: {exc}") from None
    params = {k: ad.parameter(v) for k, v in r.tensors().items()}
    try:
        validate_params(params, config.model)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not match config: {exc}") from None
    step = r.u64()
    moments = r.tensors()
    adam = AdamState({k: moments[f"m/{k}"] for k in params}, {k: moments[f"v/{k}"] for k in params}, step)
    extra = json.loads(r.blob().decode("utf-8"))
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    return TrainState(config, params, adam, _rng_from_state(extra["train_rng"]), _rng_from_state(extra["eval_rng"]),
                      extra["iteration"], float.fromhex(extra["loss_sum"]), float.fromhex(extra["kl_sum"]), extra["count"])


def load_model(path) -> Model:
    return load_checkpoint(path).model
