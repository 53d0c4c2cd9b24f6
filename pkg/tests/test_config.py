import json

import pytest
from hypothesis import given, settings, strategies as st

from effbev.config import RunConfig
from effbev.errors import ConfigError


def test_defaults_validate_and_use_paper_optimizer_settings():
    cfg = RunConfig().validate()
    assert cfg.optimizer.lr == 6e-5
    assert cfg.schedule.power == 1.0
    assert cfg.schedule.epochs == 20
    assert cfg.optimizer.betas == [0.9, 0.999]
    assert cfg.optimizer.weight_decay == 0.01


@pytest.mark.parametrize("name", ["long", "short"])
def test_paper_grids_are_200_cells(name):
    g = RunConfig(grid=name).grid_spec()
    assert (g.H, g.W) == (200, 200)


def test_grid_ranges():
    assert RunConfig(grid="short").grid_spec().x_range == (-15.0, 15.0)
    assert RunConfig(grid="long").grid_spec().resolution == 0.5


@settings(max_examples=40, deadline=None)
@given(
    lr=st.floats(1e-6, 1.0), power=st.floats(0.0, 3.0), seed=st.integers(0, 2**31),
    variant=st.sampled_from(["full", "tiny", "micro"]), grid=st.sampled_from(["long", "short", "micro"]),
    t_f=st.integers(1, 6), batch=st.integers(1, 32),
)
def test_round_trip_is_identity(lr, power, seed, variant, grid, t_f, batch):
    cfg = RunConfig.from_dict({
        "model": {"variant": variant}, "grid": grid, "seed": seed,
        "sequence": {"t_p": 2, "t_f": t_f, "hz": 2.0},
        "optimizer": {"lr": lr}, "schedule": {"power": power, "batch_size": batch},
    })
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


def test_custom_grid_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"grid": {"x_range_m": [-8, 8], "y_range_m": [-4, 4], "resolution_m": 0.5}})
    path = tmp_path / "run.json"
    cfg.save(path)
    again = RunConfig.load(path)
    assert again == cfg
    assert (again.grid_spec().H, again.grid_spec().W) == (32, 16)


def test_missing_grid_field_is_named():
    with pytest.raises(ConfigError, match="resolution_m"):
        RunConfig.from_dict({"grid": {"x_range_m": [-8, 8], "y_range_m": [-4, 4]}})


def test_unknown_grid_preset_is_named():
    with pytest.raises(ConfigError, match="grid"):
        RunConfig.from_dict({"grid": "medium"})


@pytest.mark.parametrize("doc,field", [
    ({"bogus": 1}, "bogus"),
    ({"optimizer": {"learning_rate": 1e-3}}, "learning_rate"),
    ({"optimizer": {"lr": -1}}, "optimizer.lr"),
    ({"schedule": {"k_frac": 0}}, "schedule.k_frac"),
    ({"model": {"variant": "huge"}}, "model.variant"),
    ({"data": {"image_size": [48]}}, "data.image_size"),
    ({"sequence": {"t_p": 2, "hz": 2.0}}, "t_f"),
])
def test_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        RunConfig.from_dict(doc)


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError, match="line 2"):
        RunConfig.from_json('{\n  "seed": ,\n}')


def test_model_config_variants():
    full = RunConfig.from_dict({"model": {"variant": "full"}}).model_config()
    tiny = RunConfig().model_config()
    assert full.predictor.stage_channels == (16, 32, 64, 160, 256)
    assert tiny.predictor.stage_channels == (16, 24, 32, 48, 64)
    micro = RunConfig.from_dict({"model": {"variant": "micro"}, "grid": "micro"}).model_config()
    assert micro.grid.H == 20 and micro.predictor.n_stages == 2


def test_custom_widths():
    cfg = RunConfig.from_dict({"model": {"variant": "custom", "stage_channels": [8, 16, 24], "decoder_dim": 8}})
    pred = cfg.model_config().predictor
    assert pred.stage_channels == (8, 16, 24)
    assert pred.decoder_dim == 8
    with pytest.raises(ConfigError, match="stage_channels"):
        RunConfig.from_dict({"model": {"variant": "custom"}})


def test_json_is_sorted_and_stable():
    text = RunConfig().to_json()
    assert list(json.loads(text)) == sorted(json.loads(text))
