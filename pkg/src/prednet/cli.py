"""Command-line operator surface.

Subcommands: generate, train, predict, eval, readout. Every command reads a
strict-JSON config, writes its resolved effective config beside its outputs,
and is bitwise reproducible from that resolved config plus seed. Outputs go
only under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import readout as readout_mod
from . import synthdata, trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, PredNetConfig
from .metrics import evaluate, extrapolation_curve
from .model import PredNet
from .synthdata import SequenceBatch, scramble_time, write_frame

_THREAD_LIMITER = None  # keeps the BLAS thread limit alive for the process


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        _limit_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prednet",
        description="Train, run, and analyze predictive-coding video models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override every seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")

    p = sub.add_parser("generate", help="render a synthetic dataset to disk")
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model; writes checkpoint + history")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted frames and strips")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--extrapolate", type=int, default=0, metavar="HORIZON",
                   help="free-run this many steps past --t-switch")
    p.add_argument("--t-switch", type=int, default=None,
                   help="teacher-forced steps before extrapolating")
    p.add_argument("--scramble", action="store_true",
                   help="temporally scramble the input first")
    p.add_argument("--limit", type=int, default=8,
                   help="max sequences to write (default 8)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score checkpoints against the baseline")
    common(p)
    p.add_argument("--checkpoint", type=Path, action="append", required=True,
                   help="repeatable; one table row per checkpoint")
    p.add_argument("--curve", action="store_true",
                   help="also write per-offset extrapolation MSE")
    p.add_argument("--t-switch", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("readout", help="linear decoding of latent parameters")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--random-baseline", action="store_true",
                   help="include untrained same-architecture baselines")
    p.add_argument("--sweep", choices=["train-size", "frames"], action="append",
                   default=None)
    p.set_defaults(func=cmd_readout)
    return parser


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_config(args) -> dict:
    if args.config is None:
        raise ConfigError("this command needs --config")
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{args.config}: not valid strict JSON ({err})") from err
    if not isinstance(cfg, dict):
        raise ConfigError(f"{args.config}: top level must be a JSON object")
    if args.seed is not None:
        cfg = _override_seeds(cfg, args.seed)
    return cfg


def _override_seeds(cfg: dict, seed: int) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    cfg.setdefault("schedule", {})["seed"] = seed
    data = cfg.get("data", {})
    if "generate" in data:
        data["generate"]["seed"] = seed
    if "readout" in cfg:
        cfg["readout"]["seed"] = seed
    return cfg


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    sec = cfg.get(name)
    if sec is None:
        if required:
            raise ConfigError(f"{name}: section is required")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: must be a JSON object")
    return sec


def _model_config(cfg: dict) -> PredNetConfig:
    try:
        return PredNetConfig.from_dict(_section(cfg, "model"))
    except (ConfigError, TypeError) as err:
        raise ConfigError(f"model: {err}") from err


def _schedule(cfg: dict) -> trainer.TrainSchedule:
    try:
        return trainer.TrainSchedule.from_dict(_section(cfg, "schedule"))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"schedule: {err}") from err


def _resolve_data(cfg: dict, base_dir: Path) -> SequenceBatch:
    data = _section(cfg, "data")
    keys = [k for k in ("manifest", "generate", "frames_dir") if k in data]
    if len(keys) != 1:
        raise ConfigError(
            "data: exactly one of 'manifest', 'generate', 'frames_dir' is required"
        )
    if keys[0] == "manifest":
        path = Path(data["manifest"])
        if not path.is_absolute():
            path = base_dir / path
        return synthdata.dataset_from_manifest(
            synthdata.load_manifest(path), path.parent
        )
    if keys[0] == "generate":
        try:
            return synthdata.generate_moving_shapes(**_tupled(data["generate"]))
        except TypeError as err:
            raise ConfigError(f"data.generate: {err}") from err
    loader = {k: v for k, v in data.items() if k != "frames_dir"}
    if loader.get("target_hw") is not None:
        loader["target_hw"] = tuple(loader["target_hw"])
    try:
        return synthdata.load_frame_dir(data["frames_dir"], **loader)
    except TypeError as err:
        raise ConfigError(f"data: {err}") from err


def _tupled(params: dict) -> dict:
    params = dict(params)
    for key in ("shape_set", "velocity_range", "size_range", "intensity_range"):
        if key in params:
            params[key] = tuple(params[key])
    return params


def _split(cfg: dict, batch: SequenceBatch):
    split = _section(cfg, "split", required=False)
    if not split:
        raise ConfigError("split: section with train/val sizes is required for training")
    for key in ("train", "val"):
        if key not in split:
            raise ConfigError(f"split.{key}: required")
    sizes = [split["train"], split["val"]] + ([split["test"]] if "test" in split else [])
    if sum(sizes) > batch.count:
        raise ConfigError(
            f"split: {sizes} needs {sum(sizes)} sequences, dataset has {batch.count}"
        )
    parts = batch.split(*sizes)
    return parts[0], parts[1], (parts[2] if len(parts) > 2 else None)


def _write_resolved(out_dir: Path, cfg: dict, extra: dict | None = None) -> None:
    resolved = dict(cfg)
    if extra:
        resolved = {**resolved, **extra}
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _limit_threads(n: int) -> None:
    global _THREAD_LIMITER
    try:
        from threadpoolctl import threadpool_limits

        _THREAD_LIMITER = threadpool_limits(limits=n)
    except ImportError:
        pass


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    data = _section(cfg, "data")
    if "generate" not in data:
        raise ConfigError("data.generate: generate needs a generator spec")
    params = _tupled(data["generate"])
    batch = synthdata.generate_moving_shapes(**params)
    frames_dir = out / "frames"
    synthdata.materialize(batch, frames_dir)
    manifest = synthdata.generator_manifest(**data["generate"])
    synthdata.write_manifest(out / "manifest.json", manifest)
    _write_resolved(out, cfg)
    print(f"wrote {batch.count} sequences x {batch.t_steps} frames under {frames_dir}")
    print(f"manifest: {out / 'manifest.json'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model_cfg = _model_config(cfg)
    schedule = _schedule(cfg)
    batch = _resolve_data(cfg, Path(args.config).parent)
    train_data, val_data, _ = _split(cfg, batch)

    train_sec = _section(cfg, "train", required=False)
    init_ckpt = train_sec.get("init_checkpoint")
    if init_ckpt is not None:
        model = load_checkpoint(init_ckpt)
        if model.config.to_dict() != model_cfg.to_dict():
            raise ConfigError(
                "train.init_checkpoint: checkpoint config differs from model section"
            )
    else:
        model = PredNet(model_cfg, seed=schedule.seed)

    finetune = train_sec.get("finetune")
    if finetune is not None:
        history = trainer.finetune_extrapolation(
            model,
            train_data,
            val_data,
            schedule,
            t_total=finetune.get("t_total", 15),
            t_switch=finetune.get("t_switch", 10),
        )
    else:
        history = trainer.train(model, train_data, val_data, schedule)

    save_checkpoint(out / "checkpoint.pnetw", model)
    history.write_csv(out / "history.csv")
    _write_resolved(out, cfg, {"resolved_seed": schedule.seed})
    best = history.rows[history.best_epoch - 1] if history.rows else None
    if best is not None:
        print(f"best epoch {history.best_epoch}: val_loss={best.val_loss:.6g}")
    print(f"checkpoint: {out / 'checkpoint.pnetw'}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    batch = _resolve_data(cfg, Path(args.config).parent)
    if args.scramble:
        batch = scramble_time(batch, seed=args.seed if args.seed is not None else 0)
    frames = batch.frames[:, : args.limit]
    t_steps = frames.shape[0]
    if args.extrapolate > 0:
        t_switch = args.t_switch if args.t_switch is not None else t_steps
        result = model.extrapolate(frames, t_switch, args.extrapolate)
    else:
        result = model.run_sequence(frames)
    preds = np.clip(result.prediction_array(), 0.0, 1.0)
    for i in range(preds.shape[1]):
        seq_dir = out / f"pred_seq_{i:04d}"
        seq_dir.mkdir(exist_ok=True)
        for t in range(preds.shape[0]):
            write_frame(seq_dir / f"frame_{t:03d}.pgm", preds[t, i])
        strip = _compose_strip(frames[:, i], preds[:, i])
        write_frame(out / f"strip_{i:04d}.pgm", strip)
    _write_resolved(out, cfg)
    print(f"wrote {preds.shape[1]} sequences x {preds.shape[0]} predicted frames")
    return 0


def _compose_strip(truth: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """Two rows of frames: ground truth on top, predictions below. The
    prediction strip may be longer when extrapolating; missing truth frames
    render mid-gray."""
    t_pred, c, h, w = preds.shape
    canvas = np.full((c, 2 * h + 1, t_pred * (w + 1) - 1), 0.5, np.float32)
    for t in range(t_pred):
        x0 = t * (w + 1)
        if t < truth.shape[0]:
            canvas[:, :h, x0 : x0 + w] = truth[t]
        canvas[:, h + 1 :, x0 : x0 + w] = preds[t]
    return canvas


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    batch = _resolve_data(cfg, Path(args.config).parent)
    models = [(ckpt.stem, load_checkpoint(ckpt)) for ckpt in args.checkpoint]
    report = evaluate(models, batch)
    report.to_csv(out / "metrics.csv")
    (out / "metrics.txt").write_text(report.to_text())
    if args.curve:
        eval_sec = _section(cfg, "eval", required=False)
        t_switch = args.t_switch or eval_sec.get("t_switch")
        horizon = args.horizon or eval_sec.get("horizon")
        if not t_switch or not horizon:
            raise ConfigError("eval: --curve needs --t-switch and --horizon")
        for name, model in models:
            curve = extrapolation_curve(model, batch, t_switch, horizon)
            curve.to_csv(out / f"curve_{name}.csv")
    _write_resolved(out, cfg)
    print(report.to_text(), end="")
    return 0


def cmd_readout(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    batch = _resolve_data(cfg, Path(args.config).parent)
    if batch.latents is None:
        raise ConfigError("readout needs a generated dataset (latent labels)")
    ro = _section(cfg, "readout", required=False)
    sweeps = args.sweep or []
    rows = readout_mod.compare_trained_vs_random(
        model,
        batch,
        regression_targets=tuple(ro.get("regression_targets", ("velocity", "position0", "intensity"))),
        class_target=ro.get("class_target", "shape_id"),
        random_seeds=tuple(ro.get("random_seeds", (1,))) if args.random_baseline else (),
        test_fraction=ro.get("test_fraction", 0.5),
        train_sizes=ro.get("train_sizes", range(1, 21)) if "train-size" in sweeps else None,
        frame_counts=ro.get("frame_counts", range(1, batch.t_steps + 1)) if "frames" in sweeps else None,
        n_splits=ro.get("n_splits", 20),
        seed=ro.get("seed", 0),
    )
    readout_mod.write_readout_csv(rows, out / "readout.csv")
    _write_resolved(out, cfg)
    print(f"wrote {len(rows)} readout rows to {out / 'readout.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
