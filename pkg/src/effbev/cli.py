"""Command-line entry point: ``effbev {generate,train,eval,bench,viz}``.

Exit codes: 0 success, 1 user error (bad config, missing files, refusals),
2 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import tempfile
import traceback
from pathlib import Path

from . import pipeline
from .config import RunConfig
from .errors import ConfigError, EffBevError
from .metrics import format_report
from .predictor import PredictorConfig
from .synth import generate_dataset, read_dataset
from .synth.render import default_rig

MIN_WARMUP, MIN_ITERS = 10, 100


class UserError(EffBevError):
    """Refusals that are the caller's to fix (exit code 1)."""


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def prepare_out(path: Path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise UserError(f"{path} exists and is not a directory")
    if path.exists() and any(path.iterdir()) and not force:
        raise UserError(f"output directory {path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def rig_for(cfg: RunConfig):
    return default_rig(cfg.data.n_cameras, tuple(cfg.data.image_size))


# -- commands -------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args)
    out = prepare_out(args.out or cfg.paths.dataset, args.force)
    n = args.n_clips if args.n_clips is not None else cfg.data.n_clips
    if n < 1:
        raise ConfigError("--n-clips must be >= 1")
    ds = generate_dataset(out, n, cfg.seed, cfg.grid_spec(), cfg.sequence_spec(), rig_for(cfg),
                          tuple(cfg.data.agents))
    print(f"dataset {out}")
    print(f"clips {n} train {len(ds.splits['train'])} val {len(ds.splits['val'])} test {len(ds.splits['test'])}")
    print(f"grid {cfg.grid_name()} {ds.grid.H}x{ds.grid.W} cells, {ds.rig.n_cameras} cameras {ds.rig.image_size}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args)
    ds = read_dataset(args.dataset or cfg.paths.dataset)
    out = prepare_out(args.out or cfg.paths.out, args.force)
    cfg.save(out / "config.json")
    result = pipeline.train(cfg, ds, out)
    print(f"best val vpq {result.best_vpq:.6f} checkpoint {result.best_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args) if args.config else None
    if args.checkpoint:
        model, run_cfg, _ = pipeline.load_model(args.checkpoint, cfg)
    elif args.gt:
        model, run_cfg = None, cfg or RunConfig().validate()
    else:
        raise UserError("eval needs --checkpoint unless --gt is given")
    ds = read_dataset(args.dataset or run_cfg.paths.dataset)
    if ds.grid != run_cfg.grid_spec():
        raise UserError(f"dataset grid {ds.grid} does not match checkpoint grid {run_cfg.grid_name()}")
    clips = ds.clips(args.split)
    report = pipeline.evaluate(model, clips, ds.seq, ds.rig, ds.normalization, gt_as_prediction=args.gt,
                               grid=run_cfg.grid_name())
    text = format_report(report)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def bench_variants(cfg: RunConfig) -> dict:
    """Full and tiny predictors sharing the configured encoder and grid."""
    base = cfg.model_config()
    t_f = cfg.sequence_spec().t_f
    return {name: dataclasses.replace(base, predictor=factory(t_f=t_f))
            for name, factory in (("full", PredictorConfig.full), ("tiny", PredictorConfig.tiny))}


def cmd_bench(args) -> int:
    cfg = load_config(args)
    if args.warmup < MIN_WARMUP or args.iters < MIN_ITERS:
        raise UserError(f"benchmark needs --warmup >= {MIN_WARMUP} and --iters >= {MIN_ITERS}")
    rig = rig_for(cfg)
    reports = {}
    with tempfile.TemporaryDirectory() as tmp:
        for name, mcfg in bench_variants(cfg).items():
            reports[name] = pipeline.benchmark_model(name, mcfg, rig, args.warmup, args.iters, cfg.seed, tmp)
        if args.checkpoint:
            model, run_cfg, ckpt = pipeline.load_model(args.checkpoint, cfg)
            reports["checkpoint"] = pipeline.benchmark_model(
                "checkpoint", run_cfg.model_config(), rig_for(run_cfg), args.warmup, args.iters, cfg.seed)
            reports["checkpoint"].params_manifest = ckpt.param_count()
    values = {}
    for name, rep in reports.items():
        for key, value in rep.as_dict().items():
            values[f"{name}.{key}"] = value
    full, tiny = reports["full"], reports["tiny"]
    values["param_ratio_full_over_tiny"] = full.params / tiny.params
    values["tiny_fewer_params"] = str(tiny.params < full.params).lower()
    values["grid"] = cfg.grid_name()
    text = format_report(values)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_viz(args) -> int:
    cfg = load_config(args) if args.config else None
    out = prepare_out(args.out, args.force)
    if args.gt:
        run_cfg = cfg or RunConfig().validate()
        model = None
    else:
        if not args.checkpoint:
            raise UserError("viz needs --checkpoint unless --gt is given")
        model, run_cfg, _ = pipeline.load_model(args.checkpoint, cfg)
    ds = read_dataset(args.dataset or run_cfg.paths.dataset)
    if args.clip not in ds.names():
        raise UserError(f"clip {args.clip!r} is not in the dataset")
    clip = ds.load(args.clip)
    if args.gt:
        ids = clip.gt.instances
    else:
        ids = pipeline.predicted_instances(model, clip, ds.seq, ds.rig, ds.normalization)
    paths = pipeline.visualize_clip(ids, ds.grid, out, prefix=args.clip, scale=args.scale)
    for p in paths:
        print(p)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effbev", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty directory")
    common.add_argument("--out", help="output directory or report file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n-clips", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="report IoU and VPQ")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--gt", action="store_true", help="score ground truth as the prediction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="latency and parameter counts, full vs tiny")
    p.add_argument("--checkpoint")
    p.add_argument("--warmup", type=int, default=MIN_WARMUP)
    p.add_argument("--iters", type=int, default=MIN_ITERS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("viz", parents=[common], help="write BEV instance images")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--clip", required=True)
    p.add_argument("--gt", action="store_true", help="draw ground-truth instances")
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "viz" and not args.out:
        parser.error("viz needs --out")
    try:
        return args.func(args)
    except (EffBevError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
