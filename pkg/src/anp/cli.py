"""Command-line entry point: ``anp {train,predict,eval,bo,synth,episodes}``.

Exit codes: 0 success, 2 bad input (config, files, checkpoint mismatch),
3 non-finite loss during training.  Output paths default to
``$ANP_OUTPUT_DIR`` (or the working directory) when not given.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .gp import FIXED, EpisodeSpec, dump_episodes, make_rng, sample_episode
from .images import make_grid, synthetic_shapes, write_idx
from .metrics import evaluate, mean_stderr, sample_objective, thompson_bo, write_bo_csv
from .model import predict
from .training import CheckpointError, NonFiniteLoss, build_task, load_checkpoint, train

OUTPUT_ENV = "ANP_OUTPUT_DIR"
EVAL_METRIC_STREAM = 7


class UsageError(Exception):
    pass


def default_output(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, ".")) / name


def _load(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise UsageError(f"cannot load checkpoint: {exc}") from None


# context / target files -----------------------------------------------------------

def read_points(path) -> tuple[np.ndarray, np.ndarray]:
    """CSV with header ``x0[,x1],y0[,y1,...]``; returns ``x [k, d_x]`` and ``y [k, d_y]``."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise UsageError(f"{path}: empty file, expected a header line")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or len(xcols) + len(ycols) != len(header):
        raise UsageError(f"{path}: header must be x0[,x1],y0[,...], got {rows[0]}")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return data[:, xcols], data[:, ycols]


def parse_targets(spec: str, d_x: int, x_range=(-2.0, 2.0)) -> np.ndarray:
    kind, _, arg = spec.partition(":")
    if kind == "grid":
        try:
            if d_x == 1:
                return np.linspace(x_range[0], x_range[1], int(arg)).reshape(-1, 1)
            if "x" in arg:
                h, w = (int(v) for v in arg.split("x"))
            else:
                h = w = int(arg)
            return make_grid(h, w)
        except ValueError:
            raise UsageError(f"bad grid size {arg!r}") from None
    if kind == "file":
        x, _ = read_points(arg)
        return x
    raise UsageError(f"--targets must be grid:N or file:PATH, got {spec!r}")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _json_matrix(a: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in a) + "]"


def predictions_json(x: np.ndarray, preds) -> str:
    blocks = [
        '{"x":%s,"mu":%s,"sigma":%s}' % (_json_matrix(x), _json_matrix(p.mu.data), _json_matrix(p.sigma.data))
        for p in preds
    ]
    return '{"z_samples":%d,"predictions":[%s]}\n' % (len(preds), ",".join(blocks))


# subcommands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    try:
        config = cfgmod.load(args.config, overrides)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    out = Path(args.out) if args.out else default_output(Path(args.config).stem)
    try:
        train(config, out)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out / 'metrics.csv'} and {out / 'final.ckpt'}")
    return 0


def cmd_predict(args) -> int:
    state = _load(args.ckpt)
    model_cfg = state.config.model
    x_c, y_c = read_points(args.context)
    if len(x_c) and (x_c.shape[1] != model_cfg.d_x or y_c.shape[1] != model_cfg.d_y):
        raise UsageError(
            f"context has d_x={x_c.shape[1]}, d_y={y_c.shape[1]} but the checkpoint expects "
            f"d_x={model_cfg.d_x}, d_y={model_cfg.d_y}"
        )
    x_c = x_c.reshape(-1, model_cfg.d_x)
    y_c = y_c.reshape(-1, model_cfg.d_y)
    x_t = parse_targets(args.targets, model_cfg.d_x)
    if x_t.shape[1] != model_cfg.d_x:
        raise UsageError(f"targets have width {x_t.shape[1]}, checkpoint expects {model_cfg.d_x}")
    preds = predict(state.params, model_cfg, x_c, y_c, x_t, args.z_samples, make_rng(args.seed))
    out = Path(args.out) if args.out else default_output("predictions.json")
    out.write_text(predictions_json(x_t, preds))
    return 0


def cmd_eval(args) -> int:
    state = _load(args.ckpt)
    task = build_task(state.config)
    rng = make_rng(args.seed)
    episodes = [task.episode(rng) for _ in range(args.episodes)]
    scores = evaluate(state.model, episodes, make_rng(args.seed, EVAL_METRIC_STREAM))
    for key in ("ctx_recon_nll", "tgt_nll"):
        mean, se = mean_stderr(scores[key])
        print(f"{key}: {mean:.6f} +- {se:.6f}")
    return 0


def cmd_bo(args) -> int:
    state = _load(args.ckpt)
    if state.config.model.d_x != 1:
        raise UsageError("bo needs a 1D (GP-trained) checkpoint")
    spec = EpisodeSpec(mode="random" if state.config.dataset == "gp_random" else "fixed")
    fn_rng, act_rng = make_rng(args.seed), make_rng(args.seed, 1)
    traces = []
    for _ in range(args.functions):
        grid, values = sample_objective(spec.draw_hyperparams(fn_rng) if spec.mode == "random" else FIXED, fn_rng)
        trace = thompson_bo(state.model, grid, values, args.iterations, act_rng)
        trace.check()
        traces.append(trace)
    out = Path(args.out) if args.out else default_output("bo.csv")
    write_bo_csv(traces, out)
    final = np.array([t.simple_regret[-1] for t in traces])
    mean, se = mean_stderr(final)
    print(f"final simple regret: {mean:.6f} +- {se:.6f} over {len(traces)} functions")
    return 0


def cmd_synth(args) -> int:
    data = synthetic_shapes(args.count, args.size, args.seed)
    out = Path(args.out) if args.out else default_output("synthetic-images-idx3-ubyte")
    write_idx(out, data.images)
    print(f"wrote {args.count} images of {args.size}x{args.size} to {out}")
    return 0


def cmd_episodes(args) -> int:
    spec = EpisodeSpec(mode=args.mode)
    rng = make_rng(args.seed)
    out = Path(args.out) if args.out else default_output("episodes.json")
    dump_episodes([sample_episode(spec, rng) for _ in range(args.count)], out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anp", description="Neural processes and attentive neural processes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a key = value config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predictive distributions for a context file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--targets", required=True, help="grid:N, grid:HxW or file:PATH")
    p.add_argument("--z-samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="context reconstruction and target NLL on fresh episodes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--episodes", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bo", help="Thompson-sampling Bayesian optimisation on GP test functions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--functions", type=int, default=100)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bo)

    p = sub.add_parser("synth", help="write the synthetic shapes dataset as an IDX file")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("episodes", help="dump sampled GP episodes as JSON fixtures")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("fixed", "random"), default="fixed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_episodes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
