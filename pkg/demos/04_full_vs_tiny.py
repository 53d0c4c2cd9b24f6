"""
Parameters and latency: full vs tiny predictor
==============================================

Both models share the encoder; only the BEV predictor widths differ.
"""

from effbev.cli import bench_variants
from effbev.config import RunConfig
from effbev.pipeline import benchmark_model
from effbev.synth.render import default_rig

cfg = RunConfig.from_dict({
    "model": {"variant": "micro"},
    "grid": {"x_range_m": [-25, 25], "y_range_m": [-25, 25], "resolution_m": 0.5},
    "data": {"n_cameras": 1, "image_size": [16, 32]},
})
rig = default_rig(1, (16, 32))
reports = {name: benchmark_model(name, m, rig, warmup=3, iters=20) for name, m in bench_variants(cfg).items()}
for name, r in reports.items():
    print(f"{name:5s} {r.params_m} M params  mean {r.mean_ms:7.1f} ms  p95 {r.p95_ms:7.1f} ms")
print("param ratio full/tiny: %.2f" % (reports["full"].params / reports["tiny"].params))
