"""
Train the micro model and score it
==================================

A short run on a small synthetic set, then IoU and VPQ on held-out clips.
The whole thing takes a few minutes on one CPU core.
"""

import sys
from pathlib import Path

from effbev import pipeline
from effbev.config import RunConfig
from effbev.synth import generate_dataset
from effbev.synth.render import default_rig

root = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/train")
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 100

cfg = RunConfig.from_dict({
    "model": {"variant": "micro"}, "grid": "micro", "seed": 0,
    "optimizer": {"lr": 5e-3},
    "schedule": {"max_steps": steps, "batch_size": 16, "eval_every": max(1, steps // 4)},
})
ds = generate_dataset(root / "data", 48, 1, cfg.grid_spec(), cfg.sequence_spec(), default_rig())
clips = ds.clips()
result = pipeline.train(cfg, ds, root / "run", train_clips=clips[:32], val_clips=clips[32:])

first, last = result.steps[0], result.steps[-1]
print(f"loss {first['total']:.3f} -> {last['total']:.3f}; lambdas {last['lambda_seg']:.2f} {last['lambda_flow']:.2f}")

model, _, _ = pipeline.load_model(result.best_path)
print("held-out:", pipeline.evaluate(model, clips[32:], ds.seq, ds.rig, ds.normalization, grid="micro"))
print("GT ceiling:", pipeline.evaluate(None, clips[32:], ds.seq, ds.rig, ds.normalization,
                                       gt_as_prediction=True, grid="micro"))
