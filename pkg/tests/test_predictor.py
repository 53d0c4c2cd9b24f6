import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from effbev.autodiff import Conv2d, Tensor, default_dtype, no_grad
from effbev.autodiff.checkpoint import read_checkpoint, save_checkpoint
from effbev.autodiff.gradcheck import check_gradients
from effbev.autodiff.nn import count_parameters
from effbev.errors import ConfigError
from effbev.predictor import (
    BEVPredictor, FusionDecoder, MixFFN, MultiScaleEncoder, OverlapPatchEmbed, PredictorConfig,
    ResidualHead, SRAttention, encode_multiscale, fuse_decode, head_forward, params_millions,
    stage_sizes, temporal_merge, temporal_split,
)


def toy_config(**kw):
    base = dict(stage_channels=(4, 8, 8, 12, 16), heads_per_stage=(1, 2, 2, 4, 4),
                sr_ratios=(4, 2, 1, 1, 1), decoder_dim=8, t_f=2)
    base.update(kw)
    return PredictorConfig(**base)


def reference_mha(x, wq, bq, wk, bk, wv, bv, wo, bo, heads):
    """Textbook multi-head self-attention, one head at a time."""
    n, d = x.shape
    hd = d // heads
    q, k, v = x @ wq.T + bq, x @ wk.T + bk, x @ wv.T + bv
    outs = []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        outs.append((s / s.sum(axis=1, keepdims=True)) @ v[:, sl])
    return np.concatenate(outs, axis=1) @ wo.T + bo


# --- config -------------------------------------------------------------

def test_paper_configs():
    full, tiny = PredictorConfig.full(), PredictorConfig.tiny()
    assert full.stage_channels == (16, 32, 64, 160, 256)
    assert tiny.stage_channels == (16, 24, 32, 48, 64)
    assert full.n_stages == tiny.n_stages == 5
    assert all(a < b for a, b in zip(full.stage_channels, full.stage_channels[1:]))
    assert full.layers_per_stage == 2
    assert full.hidden_sizes == tuple(4 * c for c in full.stage_channels)


def test_config_errors():
    with pytest.raises(ConfigError, match="divisible"):
        toy_config(heads_per_stage=(3, 2, 2, 4, 4))
    with pytest.raises(ConfigError, match="entries"):
        toy_config(sr_ratios=(1, 1))
    with pytest.raises(ConfigError, match="decoder_dim"):
        toy_config(decoder_dim=6)


# --- temporal merge -----------------------------------------------------

def test_temporal_merge_contract():
    x = np.random.default_rng(0).normal(size=(1, 3, 64, 5, 5)).astype(np.float32)
    merged = temporal_merge(x)
    assert merged.shape == (1, 192, 5, 5)
    np.testing.assert_array_equal(merged.data[0, 0], x[0, 0, 0])
    np.testing.assert_array_equal(merged.data[0, 64], x[0, 1, 0])
    np.testing.assert_array_equal(temporal_split(merged, 3).data, x)


# --- patch embedding ----------------------------------------------------

def test_patch_embed_halves_200_grid():
    emb = OverlapPatchEmbed(3, 4, 7)
    tokens, h, w = emb(np.zeros((1, 3, 200, 200), dtype=np.float32))
    assert (h, w) == (100, 100) and tokens.shape == (1, 10000, 4)


def test_halving_chain_from_200():
    assert stage_sizes((200, 200), PredictorConfig.full()) == [(100, 100), (50, 50), (25, 25), (13, 13), (7, 7)]


def test_patch_embed_rejects_non_overlapping():
    with pytest.raises(ConfigError):
        OverlapPatchEmbed(3, 4, 1)


def test_constant_input_gives_constant_interior():
    emb = OverlapPatchEmbed(2, 3, 3, rng=np.random.default_rng(1))
    tokens, h, w = emb(np.full((1, 2, 12, 12), 0.7, dtype=np.float32))
    grid = tokens.data.reshape(h, w, 3)[1:-1, 1:-1]
    np.testing.assert_allclose(grid, np.broadcast_to(grid[0, 0], grid.shape), atol=1e-5)


# --- attention ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_sra_r1_matches_reference_mha(seed):
    rng = np.random.default_rng(seed)
    d, heads = 8, 2
    attn = SRAttention(d, heads, sr_ratio=1, rng=rng)
    for p in attn.parameters():
        p.data[...] = rng.normal(size=p.shape)
    x = rng.normal(size=(1, 16, d)).astype(np.float32)
    out = attn(Tensor(x), 4, 4).data[0]
    wk, wv = attn.kv.weight.data[:d], attn.kv.weight.data[d:]
    bk, bv = attn.kv.bias.data[:d], attn.kv.bias.data[d:]
    ref = reference_mha(x[0].astype(np.float64), attn.q.weight.data, attn.q.bias.data, wk, bk, wv, bv,
                        attn.proj.weight.data, attn.proj.bias.data, heads)
    np.testing.assert_allclose(out, ref, atol=1e-5 * max(1.0, np.abs(ref).max()))


@pytest.mark.parametrize("r", [1, 2, 4, 8])
def test_single_token_attends_to_itself(r):
    rng = np.random.default_rng(r)
    d = 8
    attn = SRAttention(d, 2, sr_ratio=r, rng=rng)
    x = Tensor(rng.normal(size=(1, 1, d)))
    out = attn(x, 1, 1).data[0, 0]
    np.testing.assert_allclose(attn.last_attention, 1.0)
    src = x if r == 1 else attn.sr_norm(attn.sr(
        Tensor(np.pad(x.data.reshape(1, 1, 1, d).transpose(0, 3, 1, 2), ((0, 0), (0, 0), (0, r - 1), (0, r - 1))))
    ).permute(0, 2, 3, 1).reshape(1, 1, d))
    v = src.data[0, 0] @ attn.kv.weight.data[d:].T + attn.kv.bias.data[d:]
    np.testing.assert_allclose(out, v @ attn.proj.weight.data.T + attn.proj.bias.data, atol=1e-5)


def test_attention_rows_sum_to_one_and_keys_are_reduced():
    attn = SRAttention(8, 4, sr_ratio=2, rng=np.random.default_rng(3))
    attn(Tensor(np.random.default_rng(4).normal(size=(2, 36, 8))), 6, 6)
    assert attn.last_attention.shape == (2, 4, 36, 9)
    np.testing.assert_allclose(attn.last_attention.sum(axis=-1), 1.0, atol=1e-6)


def test_odd_map_keeps_every_token_in_reduction():
    attn = SRAttention(4, 1, sr_ratio=2, rng=np.random.default_rng(5))
    attn(Tensor(np.ones((1, 25 * 25, 4))), 25, 25)
    assert attn.last_attention.shape[-1] == 13 * 13


def test_sra_head_mismatch():
    with pytest.raises(ConfigError):
        SRAttention(10, 4)


# --- mix-ffn ------------------------------------------------------------

def test_mix_ffn_zero_weights_zero_delta():
    ffn = MixFFN(6, 24)
    for p in ffn.parameters():
        p.data[...] = 0.0
    assert not ffn(Tensor(np.random.default_rng(0).normal(size=(1, 9, 6))), 3, 3).data.any()


def test_hidden_width_is_four_times_input_at_every_stage():
    enc = MultiScaleEncoder(PredictorConfig.tiny(), 8)
    for stage, c in zip(enc.stages, PredictorConfig.tiny().stage_channels):
        for block in stage.blocks:
            assert block.ffn.hidden == 4 * c
            assert block.ffn.fc1.weight.shape == (4 * c, c)


def test_mix_ffn_gradient_check():
    with default_dtype(np.float64):
        rng = np.random.default_rng(6)
        ffn = MixFFN(8, 32, rng=rng)
        x = Tensor(rng.normal(size=(2, 9, 8)), requires_grad=True)
        proj = rng.normal(size=(2, 9, 8))
        params = [ffn.fc1.weight, ffn.dwconv.weight, ffn.fc2.bias, x]
        idx = [rng.choice(p.size, size=min(p.size, 15), replace=False) for p in params]
        assert check_gradients(lambda: (ffn(x, 3, 3) * proj).sum(), params, indices=idx) < 1e-3


# --- multiscale encoder / decoder ---------------------------------------

@pytest.mark.parametrize("cfg", [PredictorConfig.full(), PredictorConfig.tiny()], ids=["full", "tiny"])
def test_multiscale_channels_and_sizes(cfg):
    enc = MultiScaleEncoder(cfg, 3)
    with no_grad():
        feats = encode_multiscale(np.zeros((1, 3, 200, 200), dtype=np.float32), enc)
    assert [f.shape[1] for f in feats] == list(cfg.stage_channels)
    assert [f.shape[2:] for f in feats] == stage_sizes((200, 200), cfg)


def test_fusion_zero_features_zero_output():
    cfg = toy_config()
    dec = FusionDecoder(cfg.stage_channels, 8, bias=False)
    feats = [Tensor(np.zeros((1, c, 16 >> k, 16 >> k))) for k, c in enumerate(cfg.stage_channels)]
    assert not fuse_decode(feats, dec, (32, 32)).data.any()


def test_fusion_concat_width_and_full_grid_output():
    cfg = PredictorConfig.full()
    dec = FusionDecoder(cfg.stage_channels, 64)
    feats = [Tensor(np.ones((1, c, h, w))) for c, (h, w) in zip(cfg.stage_channels, stage_sizes((200, 200), cfg))]
    with no_grad():
        out = dec(feats, (200, 200))
    assert dec.last_concat_channels == 320
    assert out.shape == (1, 64, 200, 200)


# --- heads --------------------------------------------------------------

@pytest.mark.parametrize("dim", [64, 32, 16, 8])
def test_head_channel_trace_and_adapters(dim):
    head = ResidualHead(dim, 4, 2)
    assert head.channel_trace == [dim, dim // 2, dim // 2, dim // 4, dim // 4]
    assert [b.skip is not None for b in head.blocks] == [True, False, True, False]


def test_head_rejects_indivisible_width():
    with pytest.raises(ConfigError):
        ResidualHead(18, 4, 2)


def test_head_output_volumes():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 64, 200, 200)).astype(np.float32))
    with no_grad():
        seg = head_forward(x, ResidualHead(64, 4, 2))
        flow = head_forward(x, ResidualHead(64, 4, 2))
    assert seg.shape == (1, 4, 2, 200, 200)
    assert flow.shape == (1, 4, 2, 200, 200)


# --- parameter counting -------------------------------------------------

def test_conv_param_count():
    assert count_parameters(Conv2d(4, 8, 3)) == 296


def test_tiny_has_fewer_params_and_report_format():
    full, tiny = BEVPredictor(PredictorConfig.full(), 192), BEVPredictor(PredictorConfig.tiny(), 192)
    assert count_parameters(tiny) < count_parameters(full)
    assert params_millions(full) == f"{count_parameters(full) / 1e6:.2f}"


def test_param_count_matches_checkpoint_manifest():
    model = BEVPredictor(toy_config(), 6)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "m.ckpt"
        save_checkpoint(path, model)
        ckpt = read_checkpoint(path)
    walked = sum(int(np.prod(e.shape)) for e in ckpt.entries if e.kind == "param")
    assert walked == count_parameters(model)


# --- whole predictor ----------------------------------------------------

def test_predictor_deterministic_and_batch_covariant():
    model = BEVPredictor(toy_config(), 6).eval()
    x = np.random.default_rng(1).normal(size=(3, 2, 3, 16, 16)).astype(np.float32)
    s1, f1 = model(x)
    s2, f2 = model(x)
    np.testing.assert_array_equal(s1.data, s2.data)
    perm = [2, 0, 1]
    s3, f3 = model(x[perm])
    np.testing.assert_allclose(s3.data, s1.data[perm], atol=1e-5)
    np.testing.assert_allclose(f3.data, f1.data[perm], atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_toy_forward_is_finite(seed):
    rng = np.random.default_rng(seed)
    model = BEVPredictor(toy_config(), 4, rng=rng)
    with no_grad():
        seg, flow = model(rng.normal(scale=3.0, size=(1, 2, 2, 16, 16)))
    assert np.isfinite(seg.data).all() and np.isfinite(flow.data).all()
