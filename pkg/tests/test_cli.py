import json
import subprocess
import sys

import pytest

from effbev.cli import main
from effbev.metrics import parse_report
from effbev.synth import read_dataset

SMALL = {
    "model": {"variant": "micro"}, "grid": "micro", "seed": 1,
    "optimizer": {"lr": 2e-3},
    "schedule": {"max_steps": 2, "batch_size": 2},
    "data": {"n_clips": 6, "n_cameras": 2, "image_size": [16, 32]},
}


def write_config(path, **overrides):
    doc = json.loads(json.dumps(SMALL))
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return str(path)


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "run.json", paths={"dataset": str(root / "data"), "out": str(root / "run")})
    assert main(["generate", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    return root, cfg


def test_generate_is_deterministic_per_seed(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert main(["generate", "--config", cfg, "--seed", "7", "--n-clips", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", cfg, "--seed", "7", "--n-clips", "3", "--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    assert main(["generate", "--config", cfg, "--seed", "8", "--n-clips", "3", "--out", str(tmp_path / "c")]) == 0
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "c")


def test_hundred_clips_split_70_15_15(tmp_path):
    cfg = write_config(tmp_path / "c.json", data={"n_clips": 100, "n_cameras": 1, "image_size": [8, 16]})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    ds = read_dataset(tmp_path / "d")
    assert len([p for p in (tmp_path / "d").iterdir() if p.is_dir()]) == 100
    assert [len(ds.splits[s]) for s in ("train", "val", "test")] == [70, 15, 15]


def test_non_empty_output_refused_without_force(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "d"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["generate", "--config", cfg, "--n-clips", "1", "--out", str(out)]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["generate", "--config", cfg, "--n-clips", "1", "--out", str(out), "--force"]) == 0


def test_invalid_grid_names_the_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", grid={"x_range_m": [-5, 5], "y_range_m": [-5, 5]})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "d")]) == 1
    assert "resolution_m" in capsys.readouterr().err


def test_missing_config_is_user_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "d")]) == 1


def test_eval_gt_reports_exact_ones(workspace, tmp_path):
    root, cfg = workspace
    report_path = tmp_path / "report.txt"
    assert main(["eval", "--config", cfg, "--gt", "--split", "train", "--out", str(report_path)]) == 0
    report = parse_report(report_path.read_text())
    assert set(report) == {"iou", "vpq", "n_clips", "grid", "t_f"}
    assert report["iou"] == 1.0 and report["vpq"] == 1.0
    assert report["grid"] == "micro" and report["t_f"] == 4


def test_train_then_eval_checkpoint(workspace, tmp_path):
    root, cfg = workspace
    run = root / "run"
    assert (run / "best.ckpt").exists() and (run / "config.json").exists()
    out = tmp_path / "r.txt"
    assert main(["eval", "--checkpoint", str(run / "best.ckpt"), "--out", str(out)]) == 0
    report = parse_report(out.read_text())
    assert 0.0 <= report["iou"] <= 1.0 and 0.0 <= report["vpq"] <= 1.0


def test_eval_refuses_grid_mismatch(workspace, tmp_path, capsys):
    root, _ = workspace
    other = write_config(tmp_path / "o.json", grid="short")
    assert main(["eval", "--config", other, "--checkpoint", str(root / "run" / "best.ckpt")]) == 1
    assert "grid" in capsys.readouterr().err


def test_train_refuses_existing_run_dir(workspace):
    _, cfg = workspace
    assert main(["train", "--config", cfg]) == 1


def test_viz_writes_one_image_per_output_frame(workspace, tmp_path):
    root, cfg = workspace
    clip = read_dataset(root / "data").names()[0]
    out = tmp_path / "viz"
    assert main(["viz", "--config", cfg, "--clip", clip, "--gt", "--out", str(out)]) == 0
    assert len(list(out.glob("*.ppm"))) == 4
    out2 = tmp_path / "viz2"
    ckpt = str(root / "run" / "best.ckpt")
    assert main(["viz", "--checkpoint", ckpt, "--clip", clip, "--out", str(out2)]) == 0
    assert main(["viz", "--checkpoint", ckpt, "--clip", "missing", "--out", str(tmp_path / "v3")]) == 1


def test_bench_refuses_short_runs(workspace):
    _, cfg = workspace
    assert main(["bench", "--config", cfg, "--iters", "5"]) == 1


def test_bench_reports_full_vs_tiny(workspace, tmp_path):
    _, cfg = workspace
    out = tmp_path / "bench.txt"
    assert main(["bench", "--config", cfg, "--out", str(out)]) == 0
    report = parse_report(out.read_text())
    assert report["tiny_fewer_params"] == "true"
    assert report["full.params"] == report["full.params_manifest"]
    assert report["tiny.params"] == report["tiny.params_manifest"]
    assert report["full.iters"] == 100 and report["full.warmup"] == 10
    assert report["param_ratio_full_over_tiny"] > 1


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "effbev", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "generate" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "effbev", "eval", "--out", str(tmp_path / "r")],
                         capture_output=True, text=True)
    assert bad.returncode == 1
