import json

import numpy as np
import pytest

from effbev import pipeline
from effbev.autodiff import read_checkpoint
from effbev.config import RunConfig
from effbev.errors import ConfigError
from effbev.geometry import BEVGridSpec
from effbev.model import ModelConfig
from effbev.synth import generate_dataset
from effbev.synth.render import default_rig


def small_config(**schedule):
    return RunConfig.from_dict({
        "model": {"variant": "micro"}, "grid": "micro", "seed": 3,
        "optimizer": {"lr": 2e-3},
        "schedule": {"max_steps": 4, "batch_size": 2, "eval_every": 2, **schedule},
        "data": {"n_cameras": 2, "image_size": [16, 32]},
    })


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    cfg = small_config()
    rig = default_rig(2, (16, 32))
    return generate_dataset(tmp_path_factory.mktemp("ds"), 8, 11, cfg.grid_spec(), cfg.sequence_spec(), rig)


def test_make_batch_normalizes_and_stacks(dataset):
    clips = dataset.clips("train")[:3]
    batch = pipeline.make_batch(clips, dataset.seq, dataset.normalization)
    assert batch.images.shape == (3, 3, 2, 3, 16, 32)
    assert batch.images.dtype == np.float32
    assert batch.transforms.shape == (3, 3, 4, 4)
    np.testing.assert_allclose(batch.transforms[:, -1], np.broadcast_to(np.eye(4), (3, 4, 4)), atol=1e-12)
    assert batch.seg.shape == (3, 4, 20, 20) and batch.flow.shape == (3, 4, 2, 20, 20)
    mean = np.asarray(dataset.normalization["mean"]).reshape(3, 1, 1)
    std = np.asarray(dataset.normalization["std"]).reshape(3, 1, 1)
    np.testing.assert_allclose(batch.images[0, 0, 0] * std + mean, clips[0].images[0, 0], atol=1e-5)


def test_gt_as_prediction_scores_exactly_one(dataset):
    report = pipeline.evaluate(None, dataset.clips(), dataset.seq, dataset.rig, dataset.normalization,
                               gt_as_prediction=True, grid="micro")
    assert set(report) == {"iou", "vpq", "n_clips", "grid", "t_f"}
    assert report["iou"] == 1.0 and report["vpq"] == 1.0
    assert report["n_clips"] == 8 and report["t_f"] == 4


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config()
    result = pipeline.train(cfg, dataset, out, log=lambda s: None)
    return cfg, out, result


def test_train_logs_and_checkpoints(trained):
    cfg, out, result = trained
    assert len(result.steps) == 4 and len(result.epochs) == 2
    assert result.best_path.exists() and result.last_path.exists()
    lines = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    evals = [x for x in lines if "val_iou" in x]
    assert {"l_seg", "l_flow", "lambda_seg", "lambda_flow", "val_iou", "val_vpq"} <= set(evals[0])
    assert all(s["lambda_seg"] > 0 and s["lambda_flow"] > 0 for s in result.steps)


def test_lr_schedule_ends_at_zero(trained):
    _, _, result = trained
    lrs = [s["lr"] for s in result.steps]
    assert lrs == sorted(lrs, reverse=True)
    assert lrs[-1] == 0.0
    np.testing.assert_allclose(lrs[0], 2e-3 * (1 - 1 / 4))


def test_checkpoint_meta_and_reload(trained, dataset):
    cfg, _, result = trained
    ckpt = read_checkpoint(result.last_path)
    assert ckpt.meta["grid"] == "micro"
    assert np.isfinite(float(ckpt.meta["s_seg"])) and np.isfinite(float(ckpt.meta["s_flow"]))
    assert ckpt.meta["step"] == "4"
    model, run_cfg, _ = pipeline.load_model(result.last_path)
    assert run_cfg == cfg
    clips = dataset.clips("val")
    a = pipeline.evaluate(model, clips, dataset.seq, dataset.rig, dataset.normalization)
    b = pipeline.evaluate(pipeline.load_model(result.last_path)[0], clips, dataset.seq, dataset.rig,
                          dataset.normalization)
    assert a == b


def test_training_is_deterministic(trained, dataset, tmp_path):
    cfg, _, result = trained
    again = pipeline.train(cfg, dataset, tmp_path, log=lambda s: None)
    assert [s["total"] for s in again.steps] == [s["total"] for s in result.steps]


def test_grid_mismatch_refused(trained):
    _, _, result = trained
    with pytest.raises(ConfigError, match="grid"):
        pipeline.load_model(result.last_path, RunConfig.from_dict({"model": {"variant": "micro"}, "grid": "long"}))


def test_train_refuses_dataset_grid_mismatch(dataset, tmp_path):
    cfg = RunConfig.from_dict({"model": {"variant": "micro"}, "grid": "short"})
    with pytest.raises(ConfigError, match="grid"):
        pipeline.train(cfg, dataset, tmp_path, log=lambda s: None)


def test_nan_loss_aborts_and_keeps_last_good(dataset, tmp_path, monkeypatch):
    cfg = small_config(max_steps=6, eval_every=1)
    real = pipeline.per_frame_losses
    calls = []

    def poisoned(*args, **kwargs):
        calls.append(1)
        l_seg, l_flow = real(*args, **kwargs)
        if len(calls) == 3:
            l_seg = l_seg * float("nan")
        return l_seg, l_flow

    monkeypatch.setattr(pipeline, "per_frame_losses", poisoned)
    with pytest.raises(pipeline.TrainingDiverged, match="step 3"):
        pipeline.train(cfg, dataset, tmp_path, log=lambda s: None)
    ckpt = read_checkpoint(tmp_path / "last.ckpt")
    assert ckpt.meta["step"] == "2"
    assert all(np.isfinite(a).all() for a in ckpt.arrays.values())


def test_benchmark_params_match_manifest(tmp_path):
    cfg = ModelConfig.micro()
    rep = pipeline.benchmark_model("micro", cfg, default_rig(2, (16, 32)), warmup=1, iters=3, tmp_dir=tmp_path)
    assert rep.params == rep.params_manifest
    assert rep.iters == 3 and rep.warmup == 1
    assert 0 < rep.p50_ms <= rep.p95_ms
    assert rep.peak_rss_bytes > 0
    with pytest.raises(ConfigError):
        pipeline.benchmark_model("micro", cfg, default_rig(2, (16, 32)), warmup=0, iters=0)


GRID = BEVGridSpec((-10.0, 10.0), (-10.0, 10.0), 1.0)


def test_empty_scene_is_background_plus_ego_marker():
    img = pipeline.render_instances(np.zeros((2, 20, 20), int), GRID)[1]
    black = (img == 0).all(-1)
    assert black.any()
    rows, cols = np.nonzero(black)
    assert rows.min() <= 10 <= rows.max() and cols.min() <= 10 <= cols.max()
    np.testing.assert_array_equal(img[~black], np.broadcast_to(pipeline.BACKGROUND, img[~black].shape))


def test_id_colors_are_stable():
    np.testing.assert_array_equal(pipeline.id_color(7), pipeline.id_color(7))
    assert not np.allclose(pipeline.id_color(1), pipeline.id_color(2))
    ids = np.zeros((2, 20, 20), int)
    ids[0, 1:3, 1:4] = 5
    ids[1, 15:17, 1:4] = 5
    f0, f1 = pipeline.render_instances(ids, GRID)
    np.testing.assert_allclose(f0[1, 1], pipeline.id_color(5))
    # the future footprint is composited faintly over frame 0
    np.testing.assert_allclose(f1[1, 1], pipeline.id_color(5))
    np.testing.assert_allclose(f1[15, 1], 0.65 * pipeline.BACKGROUND + 0.35 * pipeline.id_color(5))


def test_gt_visualization_has_one_color_per_agent(dataset, tmp_path):
    clip = next(c for c in dataset.clips() if len(np.unique(c.gt.instances[0])) == 3)
    paths = pipeline.visualize_clip(clip.gt.instances, dataset.grid, tmp_path, scale=2)
    assert len(paths) == dataset.seq.t_f
    img = pipeline.read_ppm(paths[0])
    assert img.shape == (40, 40, 3)
    colors = {tuple(c) for c in img.reshape(-1, 3)} - {(255, 255, 255), (0, 0, 0)}
    assert len(colors) == 2


def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).random((5, 7, 3))
    pipeline.write_ppm(tmp_path / "x.ppm", img)
    back = pipeline.read_ppm(tmp_path / "x.ppm")
    np.testing.assert_array_equal(back, np.round(img * 255).astype(np.uint8))
