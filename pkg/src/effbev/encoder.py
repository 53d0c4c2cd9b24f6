"""Shared per-camera image encoder emitting depth logits and context features."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import BatchNorm2d, Conv2d, Module, Tensor, as_tensor, concat, functional as F
from .errors import ConfigError
from .geometry import CameraRig, EgoTrajectory


@dataclass(frozen=True)
class EncoderSpec:
    stride: int = 8
    c_depth: int = 48
    c_feat: int = 64
    stage_channels: tuple = (16, 32, 48, 64)
    coord_channels: bool = False  # append normalized (u, v) pixel coordinates to the input

    def __post_init__(self):
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ConfigError(f"encoder.stride must be a power of 2, got {self.stride}")
        if int(math.log2(self.stride)) > len(self.stage_channels):
            raise ConfigError("encoder needs one stage per stride-2 downsampling")
        if self.c_depth < 1 or self.c_feat < 1:
            raise ConfigError("encoder.c_depth and encoder.c_feat must be positive")

    @property
    def out_channels(self):
        return self.c_depth + self.c_feat

    @property
    def in_channels(self):
        return 5 if self.coord_channels else 3

    @property
    def stage_strides(self):
        n_down = int(math.log2(self.stride))
        return [2] * n_down + [1] * (len(self.stage_channels) - n_down)


@dataclass
class ImageSweep:
    """Multi-camera clip: images (T_p+1, N_c, 3, H, W), last frame is the present."""

    images: np.ndarray
    rig: CameraRig
    trajectory: EgoTrajectory = field(default=None)

    def __post_init__(self):
        if self.images.ndim != 5 or self.images.shape[1] != self.rig.n_cameras:
            raise ConfigError(f"sweep images {self.images.shape} do not match {self.rig.n_cameras} cameras")
        if self.trajectory is not None and len(self.trajectory.poses) != self.images.shape[0]:
            raise ConfigError("trajectory length differs from the number of frames")


class ImageEncoder(Module):
    """Conv/BN/LeakyReLU pyramid followed by a 1x1 projection to C_D + C_F channels."""

    def __init__(self, spec: EncoderSpec, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        convs, norms = [], []
        c_in = spec.in_channels
        for c_out, s in zip(spec.stage_channels, spec.stage_strides):
            convs.append(Conv2d(c_in, c_out, 3, stride=s, padding=1, bias=False, rng=rng))
            norms.append(BatchNorm2d(c_out))
            c_in = c_out
        self.convs = convs
        self.norms = norms
        self.head = Conv2d(c_in, spec.out_channels, 1, rng=rng)

    def forward(self, images):
        """Encode images of shape (..., 3, H, W) in one batched pass.

        Returns ``(depth_logits, feats)`` with shapes (..., C_D, H/s, W/s) and
        (..., C_F, H/s, W/s).
        """
        images = as_tensor(images)
        lead = images.shape[:-3]
        h, w = images.shape[-2:]
        s = self.spec.stride
        if h % s or w % s:
            raise ConfigError(f"image size {(h, w)} is not divisible by encoder stride {s}")
        x = images.reshape((-1, 3, h, w))
        if self.spec.coord_channels:
            x = concat([x, Tensor(np.broadcast_to(pixel_coords(h, w, x.dtype), (x.shape[0], 2, h, w)))], axis=1)
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), 0.01)
        x = self.head(x)
        hf, wf = x.shape[-2:]
        x = x.reshape(lead + (self.spec.out_channels, hf, wf))
        cd = self.spec.c_depth
        depth = x[(Ellipsis, slice(0, cd), slice(None), slice(None))]
        feats = x[(Ellipsis, slice(cd, None), slice(None), slice(None))]
        return depth, feats


def pixel_coords(h, w, dtype=np.float32):
    """(2, H, W) pixel-center coordinates scaled to [-1, 1]; channel 0 is u, channel 1 is v."""
    u = (np.arange(w) + 0.5) / w * 2 - 1
    v = (np.arange(h) + 0.5) / h * 2 - 1
    return np.stack(np.meshgrid(u, v)).astype(dtype)


def encode_images(sweep, encoder: ImageEncoder):
    """Encode an :class:`ImageSweep` (or raw image array); see :meth:`ImageEncoder.forward`."""
    images = sweep.images if isinstance(sweep, ImageSweep) else sweep
    return encoder(Tensor(images) if not isinstance(images, Tensor) else images)
