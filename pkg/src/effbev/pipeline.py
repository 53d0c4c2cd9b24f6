"""Training, evaluation, benchmarking and visualization built on the library modules."""

from __future__ import annotations

import colorsys
import hashlib
import json
import math
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import AdamW, PolynomialLR, Tensor, no_grad, read_checkpoint, save_checkpoint, load_into
from .autodiff.nn import count_parameters
from .config import RunConfig
from .errors import ConfigError, EffBevError
from .geometry import BEVGridSpec, CameraRig
from .instances import run_sequence
from .losses import UncertaintyWeights, loss_report, per_frame_losses, total_loss
from .metrics import IoUAccumulator, VPQAccumulator
from .model import InstancePredictionModel, ModelConfig
from .synth.dataset import Clip, Dataset
from .synth.scene import SequenceSpec


class TrainingDiverged(EffBevError):
    """Raised when the loss stops being finite; the last good checkpoint is kept."""


# -- batching -----------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray  # (B, T_in, N, 3, H, W) normalized float32
    transforms: np.ndarray  # (B, T_in, 4, 4)
    seg: np.ndarray  # (B, T_f, H, W) int
    flow: np.ndarray  # (B, T_f, 2, H, W)
    instances: np.ndarray  # (B, T_f, H, W)


def make_batch(clips, seq: SequenceSpec, normalization: dict) -> Batch:
    mean = np.asarray(normalization["mean"], dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(normalization["std"], dtype=np.float32).reshape(3, 1, 1)
    return Batch(
        images=np.stack([(c.images - mean) / std for c in clips]).astype(np.float32),
        transforms=np.stack([c.present_from_past(seq) for c in clips]),
        seg=np.stack([c.gt.seg for c in clips]),
        flow=np.stack([c.gt.flow for c in clips]),
        instances=np.stack([c.gt.instances for c in clips]),
    )


# -- evaluation ---------------------------------------------------------------

def predict(model: InstancePredictionModel, batch: Batch, rig: CameraRig):
    model.eval()
    with no_grad():
        seg, flow = model(Tensor(batch.images), rig, batch.transforms)
    return seg.data, flow.data


def evaluate(model, clips, seq: SequenceSpec, rig: CameraRig, normalization, batch_size: int = 8,
             gt_as_prediction: bool = False, grid: str = "") -> dict:
    """IoU and VPQ over ``clips``; instance IDs come from flow propagation of the predictions."""
    ious, vpqs = IoUAccumulator(), VPQAccumulator()
    for i in range(0, len(clips), batch_size):
        batch = make_batch(clips[i:i + batch_size], seq, normalization)
        if gt_as_prediction:
            pred_ids = batch.instances
        else:
            seg, flow = predict(model, batch, rig)
            pred_ids = np.stack([run_sequence(s, f) for s, f in zip(seg, flow)])
        for p, g in zip(pred_ids, batch.instances):
            ious.update(p > 0, g > 0)
            vpqs.update(p, g)
    return {"iou": ious.compute(), "vpq": vpqs.compute(), "n_clips": len(clips), "grid": grid, "t_f": seq.t_f}


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    steps: list = field(default_factory=list)  # per-step dicts
    epochs: list = field(default_factory=list)  # per-evaluation dicts
    best_vpq: float = -1.0
    best_path: Path = None
    last_path: Path = None


def checkpoint_meta(cfg: RunConfig, weights: UncertaintyWeights, **extra):
    meta = {"config": json.dumps(cfg.to_dict(), sort_keys=True), "grid": cfg.grid_name(),
            "s_seg": float(weights.s_seg.data[0]), "s_flow": float(weights.s_flow.data[0])}
    meta.update(extra)
    return meta


def train(cfg: RunConfig, dataset: Dataset, out_dir, train_clips=None, val_clips=None, log=print) -> TrainResult:
    """Train on the dataset's train split and keep the best-VPQ checkpoint in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq, rig = dataset.seq, dataset.rig
    mcfg = cfg.model_config()
    if mcfg.grid != dataset.grid:
        raise ConfigError(f"config grid {mcfg.grid} does not match dataset grid {dataset.grid}")
    train_clips = train_clips if train_clips is not None else dataset.clips("train")
    val_clips = val_clips if val_clips is not None else dataset.clips("val")
    if not train_clips:
        raise ConfigError("the train split is empty")
    rng = np.random.default_rng(cfg.seed)
    model = InstancePredictionModel(mcfg, rng=rng)
    weights = UncertaintyWeights()
    sch = cfg.schedule
    steps_per_epoch = math.ceil(len(train_clips) / sch.batch_size)
    total = sch.max_steps or sch.epochs * steps_per_epoch
    opt = AdamW(model.parameters() + weights.parameters(), lr=cfg.optimizer.lr,
                betas=tuple(cfg.optimizer.betas), weight_decay=cfg.optimizer.weight_decay)
    sched = PolynomialLR(opt, total, cfg.schedule.power)
    eval_every = sch.eval_every or steps_per_epoch
    result = TrainResult(last_path=out_dir / "last.ckpt", best_path=out_dir / "best.ckpt")
    log_path = out_dir / "train_log.jsonl"
    log_file = log_path.open("w")
    order = []
    try:
        for step in range(1, total + 1):
            if not order:
                order = list(rng.permutation(len(train_clips)))
            idx = [order.pop() for _ in range(min(sch.batch_size, len(order)))]
            batch = make_batch([train_clips[i] for i in idx], seq, dataset.normalization)
            model.train()
            lr = sched.step()
            seg, flow = model(Tensor(batch.images), rig, batch.transforms)
            l_seg, l_flow = per_frame_losses(seg, flow, batch.seg, batch.flow, sch.k_frac)
            loss = total_loss(l_seg, l_flow, weights, seq.t_f)
            rep = loss_report(l_seg, l_flow, loss, weights)
            if not rep.finite:
                raise TrainingDiverged(f"non-finite loss at step {step}; last good checkpoint kept at {result.last_path}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            entry = {"step": step, "lr": lr, "l_seg": rep.l_seg, "l_flow": rep.l_flow, "total": rep.total,
                     "lambda_seg": rep.lambda_seg, "lambda_flow": rep.lambda_flow}
            result.steps.append(entry)
            log_file.write(json.dumps(entry) + "\n")
            if step % eval_every == 0 or step == total:
                epoch = step / steps_per_epoch
                metrics = evaluate(model, val_clips, seq, rig, dataset.normalization) if val_clips else {}
                window = result.steps[-eval_every:]
                summary = {"epoch": round(epoch, 3), "step": step,
                           "l_seg": float(np.mean([s["l_seg"] for s in window])),
                           "l_flow": float(np.mean([s["l_flow"] for s in window])),
                           "lambda_seg": rep.lambda_seg, "lambda_flow": rep.lambda_flow,
                           "val_iou": metrics.get("iou"), "val_vpq": metrics.get("vpq")}
                result.epochs.append(summary)
                log_file.write(json.dumps(summary) + "\n")
                log_file.flush()
                log(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))
                meta = checkpoint_meta(cfg, weights, step=step)
                save_checkpoint(result.last_path, model, meta)
                vpq_val = metrics.get("vpq", 0.0)
                if vpq_val > result.best_vpq:
                    result.best_vpq = vpq_val
                    save_checkpoint(result.best_path, model, {**meta, "val_vpq": vpq_val})
    finally:
        log_file.close()
    return result


def load_model(path, cfg: RunConfig | None = None) -> tuple:
    """Rebuild a model from a checkpoint; the stored config wins unless ``cfg`` is given."""
    ckpt = read_checkpoint(path)
    stored = RunConfig.from_dict(json.loads(ckpt.meta["config"])) if "config" in ckpt.meta else None
    if cfg is not None and stored is not None and cfg.grid_spec() != stored.grid_spec():
        raise ConfigError(f"checkpoint grid {stored.grid_name()} does not match config grid {cfg.grid_name()}")
    run_cfg = stored or cfg
    if run_cfg is None:
        raise ConfigError("checkpoint has no stored config; pass one explicitly")
    model = InstancePredictionModel(run_cfg.model_config())
    load_into(model, ckpt)
    return model.eval(), run_cfg, ckpt


# -- benchmark ----------------------------------------------------------------

@dataclass
class BenchmarkReport:
    name: str
    params: int
    params_manifest: int
    peak_rss_bytes: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    warmup: int
    iters: int

    @property
    def params_m(self):
        return f"{self.params / 1e6:.2f}"

    def as_dict(self):
        return {"params_m": self.params_m, "params": self.params, "params_manifest": self.params_manifest,
                "peak_rss_bytes": self.peak_rss_bytes, "mean_ms": self.mean_ms, "p50_ms": self.p50_ms,
                "p95_ms": self.p95_ms, "warmup": self.warmup, "iters": self.iters}


def peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def benchmark_model(name: str, mcfg: ModelConfig, rig: CameraRig, warmup: int = 10, iters: int = 100,
                    seed: int = 0, tmp_dir=None) -> BenchmarkReport:
    """Batch-1 forward latency, timed around the model call only."""
    if warmup < 0 or iters < 1:
        raise ConfigError("benchmark needs warmup >= 0 and iters >= 1")
    rng = np.random.default_rng(seed)
    model = InstancePredictionModel(mcfg, rng=rng).eval()
    h, w = rig.image_size
    images = Tensor(rng.normal(size=(1, mcfg.t_in, rig.n_cameras, 3, h, w)).astype(np.float32))
    transforms = np.broadcast_to(np.eye(4), (1, mcfg.t_in, 4, 4)).copy()
    times = []
    with no_grad():
        for i in range(warmup + iters):
            t0 = time.perf_counter()
            model(images, rig, transforms)
            dt = time.perf_counter() - t0
            if i >= warmup:
                times.append(dt * 1e3)
    manifest = None
    if tmp_dir is not None:
        path = Path(tmp_dir) / f"{name}.ckpt"
        save_checkpoint(path, model, {"name": name})
        manifest = read_checkpoint(path).param_count()
    times = np.asarray(times)
    return BenchmarkReport(name, count_parameters(model), manifest, peak_rss_bytes(), float(times.mean()),
                           float(np.percentile(times, 50)), float(np.percentile(times, 95)), warmup, iters)


# -- visualization ------------------------------------------------------------

def id_color(instance_id: int) -> np.ndarray:
    """Stable RGB color for an instance ID (hash -> hue)."""
    digest = hashlib.sha256(str(int(instance_id)).encode()).digest()
    hue = int.from_bytes(digest[:4], "little") / 2**32
    return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95))


BACKGROUND = np.array([1.0, 1.0, 1.0])


def render_instances(ids: np.ndarray, grid: BEVGridSpec, future_alpha: float = 0.35) -> list:
    """One RGB image per output frame; later frames are drawn faintly over frame 0.

    The ego vehicle is marked black at the grid center.
    """
    ids = np.asarray(ids)
    frames = []
    for t in range(ids.shape[0]):
        img = np.empty(ids.shape[1:] + (3,))
        img[...] = BACKGROUND
        layers = [(0, 1.0)] + ([(t, future_alpha)] if t > 0 else [])
        for k, alpha in layers:
            for i in np.unique(ids[k][ids[k] > 0]):
                m = ids[k] == i
                img[m] = (1 - alpha) * img[m] + alpha * id_color(i)
        _ego_marker(img, grid)
        frames.append(img)
    return frames


def _ego_marker(img, grid: BEVGridSpec):
    r0, c0 = grid.H // 2, grid.W // 2
    hr = max(1, round(2.0 / grid.resolution))  # ~4 m x 2 m box
    hc = max(1, round(1.0 / grid.resolution))
    img[max(0, r0 - hr):r0 + hr, max(0, c0 - hc):c0 + hc] = 0.0


def write_ppm(path, img: np.ndarray, scale: int = 1):
    """Binary PPM (P6) from an (H, W, 3) float image in [0, 1]."""
    data = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    if scale > 1:
        data = data.repeat(scale, axis=0).repeat(scale, axis=1)
    h, w = data.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


def visualize_clip(ids: np.ndarray, grid: BEVGridSpec, out_dir, prefix="frame", scale=4) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, img in enumerate(render_instances(ids, grid)):
        path = out_dir / f"{prefix}_{t}.ppm"
        write_ppm(path, img, scale)
        paths.append(path)
    return paths


def predicted_instances(model, clip: Clip, seq, rig, normalization):
    seg, flow = predict(model, make_batch([clip], seq, normalization), rig)
    return run_sequence(seg[0], flow[0])
