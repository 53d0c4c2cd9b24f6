"""Spatio-temporal BEV predictor: SRA transformer encoder, fusion decoder, residual heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, Tensor, as_tensor, concat
from .autodiff import functional as F
from .autodiff.nn import count_parameters
from .errors import ConfigError


@dataclass(frozen=True)
class PredictorConfig:
    stage_channels: tuple = (16, 32, 64, 160, 256)
    layers_per_stage: int = 2
    mlp_ratio: int = 4
    sr_ratios: tuple = (8, 4, 2, 1, 1)
    heads_per_stage: tuple = (1, 2, 4, 8, 8)
    patch_sizes: tuple = (7, 3, 3, 3, 3)
    decoder_dim: int = 64
    t_f: int = 4
    n_classes: int = 2

    def __post_init__(self):
        n = len(self.stage_channels)
        for name in ("sr_ratios", "heads_per_stage", "patch_sizes"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"predictor.{name} needs {n} entries")
        for c, h in zip(self.stage_channels, self.heads_per_stage):
            if c % h:
                raise ConfigError(f"stage width {c} not divisible by {h} heads")
        if any(p < 2 for p in self.patch_sizes):
            raise ConfigError("patch size must be >= stride 2 (overlapping patches)")
        if self.decoder_dim % 4:
            raise ConfigError(f"decoder_dim {self.decoder_dim} must survive two channel halvings")
        if self.t_f < 1 or self.n_classes < 1:
            raise ConfigError("t_f and n_classes must be positive")

    @classmethod
    def full(cls, **overrides):
        return cls(**{"stage_channels": (16, 32, 64, 160, 256), "decoder_dim": 64, **overrides})

    @classmethod
    def tiny(cls, **overrides):
        return cls(**{"stage_channels": (16, 24, 32, 48, 64), "decoder_dim": 32, **overrides})

    @property
    def n_stages(self):
        return len(self.stage_channels)

    @property
    def hidden_sizes(self):
        return tuple(self.mlp_ratio * c for c in self.stage_channels)


def temporal_merge(bev_seq) -> Tensor:
    """(B, T, C, H, W) -> (B, T*C, H, W), oldest frame first."""
    bev_seq = as_tensor(bev_seq)
    b, t, c, h, w = bev_seq.shape
    return bev_seq.reshape(b, t * c, h, w)


def temporal_split(merged: Tensor, t: int) -> Tensor:
    b, tc, h, w = merged.shape
    return merged.reshape(b, t, tc // t, h, w)


def tokens_to_map(x: Tensor, h: int, w: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, h, w, d).permute(0, 3, 1, 2)


def map_to_tokens(x: Tensor) -> Tensor:
    b, d, h, w = x.shape
    return x.permute(0, 2, 3, 1).reshape(b, h * w, d)


def pad_to_multiple(x: Tensor, r: int) -> Tensor:
    """Zero-pad an NCHW map at the bottom/right so H and W are multiples of ``r``.

    Keeps every token in the key/value reduction and lets maps smaller than
    ``r`` reduce to a single token.
    """
    b, c, h, w = x.shape
    ph, pw = (-h) % r, (-w) % r
    if ph:
        x = concat([x, Tensor(np.zeros((b, c, ph, w), dtype=x.dtype))], axis=2)
    if pw:
        x = concat([x, Tensor(np.zeros((b, c, h + ph, pw), dtype=x.dtype))], axis=3)
    return x


class OverlapPatchEmbed(Module):
    """Strided overlapping convolution followed by LayerNorm; halves H and W."""

    def __init__(self, c_in, c_out, patch, stride=2, rng=None):
        super().__init__()
        if patch < stride:
            raise ConfigError("overlapping patch embedding needs patch >= stride")
        self.proj = Conv2d(c_in, c_out, patch, stride=stride, padding=patch // 2, rng=rng)
        self.norm = LayerNorm(c_out)

    def forward(self, x):
        x = self.proj(as_tensor(x))
        _, _, h, w = x.shape
        return self.norm(map_to_tokens(x)), h, w


class SRAttention(Module):
    """Multi-head attention whose keys/values come from a map reduced by ``sr_ratio``."""

    def __init__(self, dim, heads, sr_ratio=1, rng=None):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"attention width {dim} not divisible by {heads} heads")
        if sr_ratio < 1:
            raise ConfigError("sr_ratio must be >= 1")
        self.dim, self.heads, self.sr_ratio = dim, heads, sr_ratio
        self.scale = (dim // heads) ** -0.5
        self.q = Linear(dim, dim, rng=rng)
        self.kv = Linear(dim, 2 * dim, rng=rng)
        self.proj = Linear(dim, dim, rng=rng)
        if sr_ratio > 1:
            self.sr = Conv2d(dim, dim, sr_ratio, stride=sr_ratio, rng=rng)
            self.sr_norm = LayerNorm(dim)
        self.last_attention = None

    def forward(self, x, h, w):
        b, n, d = x.shape
        hd = d // self.heads
        q = self.q(x).reshape(b, n, self.heads, hd).permute(0, 2, 1, 3)
        if self.sr_ratio > 1:
            reduced = self.sr(pad_to_multiple(tokens_to_map(x, h, w), self.sr_ratio))
            src = self.sr_norm(map_to_tokens(reduced))
        else:
            src = x
        m = src.shape[1]
        kv = self.kv(src).reshape(b, m, 2, self.heads, hd).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        attn = F.softmax((q @ k.transpose(-2, -1)) * self.scale, axis=-1)
        self.last_attention = attn.data
        out = (attn @ v).permute(0, 2, 1, 3).reshape(b, n, d)
        return self.proj(out)


class MixFFN(Module):
    """Linear expand -> depthwise 3x3 conv -> GELU -> linear project."""

    def __init__(self, dim, hidden, rng=None):
        super().__init__()
        self.hidden = hidden
        self.fc1 = Linear(dim, hidden, rng=rng)
        self.dwconv = Conv2d(hidden, hidden, 3, padding=1, groups=hidden, rng=rng)
        self.fc2 = Linear(hidden, dim, rng=rng)

    def forward(self, x, h, w):
        x = self.fc1(x)
        x = map_to_tokens(self.dwconv(tokens_to_map(x, h, w)))
        return self.fc2(F.gelu(x))


class TransformerBlock(Module):
    def __init__(self, dim, heads, sr_ratio, mlp_ratio, rng=None):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = SRAttention(dim, heads, sr_ratio, rng=rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = MixFFN(dim, mlp_ratio * dim, rng=rng)

    def forward(self, x, h, w):
        x = x + self.attn(self.norm1(x), h, w)
        return x + self.ffn(self.norm2(x), h, w)


class EncoderStage(Module):
    def __init__(self, c_in, c_out, patch, heads, sr_ratio, mlp_ratio, depth, rng=None):
        super().__init__()
        self.embed = OverlapPatchEmbed(c_in, c_out, patch, rng=rng)
        self.blocks = [TransformerBlock(c_out, heads, sr_ratio, mlp_ratio, rng=rng) for _ in range(depth)]
        self.norm = LayerNorm(c_out)

    def forward(self, x):
        tokens, h, w = self.embed(x)
        for block in self.blocks:
            tokens = block(tokens, h, w)
        return tokens_to_map(self.norm(tokens), h, w)


class MultiScaleEncoder(Module):
    def __init__(self, cfg: PredictorConfig, in_channels, rng=None):
        super().__init__()
        stages, c_in = [], in_channels
        for k in range(cfg.n_stages):
            stages.append(EncoderStage(c_in, cfg.stage_channels[k], cfg.patch_sizes[k], cfg.heads_per_stage[k],
                                       cfg.sr_ratios[k], cfg.mlp_ratio, cfg.layers_per_stage, rng=rng))
            c_in = cfg.stage_channels[k]
        self.stages = stages

    def forward(self, x):
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def encode_multiscale(x, encoder: MultiScaleEncoder):
    """Feature maps f_1..f_n, each half the spatial size of the previous one."""
    return encoder(as_tensor(x))


class FusionDecoder(Module):
    """Project every level to ``decoder_dim``, upsample to the full grid, concatenate, fuse 1x1."""

    def __init__(self, in_channels, decoder_dim, bias=True, rng=None):
        super().__init__()
        self.decoder_dim = decoder_dim
        self.proj = [Linear(c, decoder_dim, bias=bias, rng=rng) for c in in_channels]
        self.fuse = Conv2d(decoder_dim * len(in_channels), decoder_dim, 1, bias=bias, rng=rng)
        self.last_concat_channels = None

    def forward(self, feats, size):
        ups = []
        for f, proj in zip(feats, self.proj):
            _, _, h, w = f.shape
            m = tokens_to_map(proj(map_to_tokens(f)), h, w)
            ups.append(F.upsample_bilinear(m, size=size))
        cat = concat(ups, axis=1)
        self.last_concat_channels = cat.shape[1]
        return self.fuse(cat)


def fuse_decode(feats, decoder: FusionDecoder, size):
    return decoder(feats, size)


class ResidualBlock(Module):
    """conv3x3 -> BN -> LeakyReLU, plus a skip (1x1 conv when the width changes)."""

    def __init__(self, c_in, c_out, rng=None):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, padding=1, bias=False, rng=rng)
        self.norm = BatchNorm2d(c_out)
        self.skip = Conv2d(c_in, c_out, 1, bias=False, rng=rng) if c_in != c_out else None
        self.c_in, self.c_out = c_in, c_out

    def forward(self, x):
        y = F.leaky_relu(self.norm(self.conv(x)), 0.01)
        return y + (self.skip(x) if self.skip is not None else x)


class ResidualHead(Module):
    """Four residual blocks halving the width at blocks 1 and 3, then a 1x1 output conv."""

    def __init__(self, c_in, t_f, per_frame, rng=None):
        super().__init__()
        if c_in % 4:
            raise ConfigError(f"head width {c_in} must be divisible by 4")
        trace = [c_in, c_in // 2, c_in // 2, c_in // 4, c_in // 4]
        self.blocks = [ResidualBlock(a, b, rng=rng) for a, b in zip(trace[:-1], trace[1:])]
        self.out = Conv2d(trace[-1], t_f * per_frame, 1, rng=rng)
        self.t_f, self.per_frame = t_f, per_frame

    @property
    def channel_trace(self):
        return [self.blocks[0].c_in] + [b.c_out for b in self.blocks]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        y = self.out(x)
        b, _, h, w = y.shape
        return y.reshape(b, self.t_f, self.per_frame, h, w)


def head_forward(x, head: ResidualHead):
    return head(x)


class BEVPredictor(Module):
    """Merged BEV sequence -> (segmentation logits, backward flow)."""

    def __init__(self, cfg: PredictorConfig, in_channels, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.encoder = MultiScaleEncoder(cfg, in_channels, rng=rng)
        self.decoder = FusionDecoder(cfg.stage_channels, cfg.decoder_dim, rng=rng)
        self.seg_head = ResidualHead(cfg.decoder_dim, cfg.t_f, cfg.n_classes, rng=rng)
        self.flow_head = ResidualHead(cfg.decoder_dim, cfg.t_f, 2, rng=rng)

    def forward(self, bev_seq):
        x = temporal_merge(bev_seq)
        size = x.shape[-2:]
        fused = self.decoder(self.encoder(x), size)
        return self.seg_head(fused), self.flow_head(fused)


def stage_sizes(size, cfg: PredictorConfig):
    """Spatial size after each patch embedding (stride 2, padding patch // 2)."""
    out, (h, w) = [], size
    for p in cfg.patch_sizes:
        pad = p // 2
        h = (h + 2 * pad - p) // 2 + 1
        w = (w + 2 * pad - p) // 2 + 1
        out.append((h, w))
    return out


def params_millions(model: Module) -> str:
    return f"{count_parameters(model) / 1e6:.2f}"
