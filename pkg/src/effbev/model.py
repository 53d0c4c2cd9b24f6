"""End-to-end camera-to-BEV instance prediction model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Module, Tensor, as_tensor
from .encoder import EncoderSpec, ImageEncoder
from .errors import ConfigError, DimensionError
from .geometry import (
    BEVGridSpec, CameraRig, DepthBinSpec, build_frustum, frustum_to_ego, lift_features, splat_to_bev,
    warp_bev_features,
)
from .predictor import BEVPredictor, PredictorConfig


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    bins: DepthBinSpec = field(default_factory=DepthBinSpec)
    predictor: PredictorConfig = field(default_factory=PredictorConfig.full)
    grid: BEVGridSpec = field(default_factory=BEVGridSpec.long)
    t_p: int = 2

    def __post_init__(self):
        if self.t_p < 0:
            raise ConfigError("sequence.t_p must be >= 0")

    @property
    def t_in(self):
        return self.t_p + 1

    @property
    def bev_channels(self):
        return self.encoder.c_feat

    @classmethod
    def paper(cls, variant="full", grid="long", t_f=4):
        pred = {"full": PredictorConfig.full, "tiny": PredictorConfig.tiny}[variant](t_f=t_f)
        g = {"long": BEVGridSpec.long, "short": BEVGridSpec.short}[grid]()
        return cls(predictor=pred, grid=g)

    @classmethod
    def micro(cls, t_f=4, n_stages=2):
        """Desk-scale variant: 20x20 grid at 1 m, tiny widths, few depth bins."""
        tiny = PredictorConfig.tiny()
        pred = PredictorConfig(
            stage_channels=tiny.stage_channels[:n_stages], sr_ratios=(2, 1, 1, 1, 1)[:n_stages],
            heads_per_stage=tiny.heads_per_stage[:n_stages], patch_sizes=tiny.patch_sizes[:n_stages],
            decoder_dim=16, t_f=t_f,
        )
        return cls(
            # two extra stride-1 stages widen the receptive field; pixel coordinates give a row cue for depth
            encoder=EncoderSpec(stride=8, c_depth=12, c_feat=16, stage_channels=(8, 16, 16, 16, 16),
                                coord_channels=True),
            bins=DepthBinSpec(1.0, 13.0, 12),
            predictor=pred,
            grid=BEVGridSpec((-10.0, 10.0), (-10.0, 10.0), 1.0),
        )


class InstancePredictionModel(Module):
    """Multi-camera clip -> (segmentation logits, backward flow) on the present-frame BEV grid."""

    def __init__(self, cfg: ModelConfig, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.encoder = ImageEncoder(cfg.encoder, rng=rng)
        self.predictor = BEVPredictor(cfg.predictor, cfg.t_in * cfg.bev_channels, rng=rng)
        self._frustum_cache = {}

    def ego_points(self, rig: CameraRig, feat_size):
        key = (rig.intrinsics.tobytes(), rig.extrinsics.tobytes(), rig.image_size, tuple(feat_size))
        if key not in self._frustum_cache:
            self._frustum_cache.clear()
            self._frustum_cache[key] = frustum_to_ego(build_frustum(rig, self.cfg.bins, feat_size), rig.extrinsics)
        return self._frustum_cache[key]

    def bev_features(self, images, rig: CameraRig, present_from_past):
        """Images (B, T_in, N, 3, H, W) -> ego-warped BEV features (B, T_in, C_BEV, H, W)."""
        images = as_tensor(images)
        if images.ndim != 6:
            raise DimensionError(f"expected images (B, T, N, 3, H, W), got {images.shape}")
        b, t, n = images.shape[:3]
        if t != self.cfg.t_in or n != rig.n_cameras:
            raise DimensionError(f"clip has {t} frames x {n} cameras, model expects {self.cfg.t_in} x {rig.n_cameras}")
        transforms = np.asarray(present_from_past, dtype=np.float64).reshape(b, t, 4, 4)
        depth, feats = self.encoder(images)
        lifted = lift_features(feats, depth)
        points = self.ego_points(rig, feats.shape[-2:])
        bev = splat_to_bev(lifted, points, self.cfg.grid)  # (B, T, C, H, W)
        c, h, w = bev.shape[2:]
        warped = warp_bev_features(bev.reshape(b * t, c, h, w), transforms.reshape(b * t, 4, 4), self.cfg.grid)
        return warped.reshape(b, t, c, h, w)

    def forward(self, images, rig: CameraRig, present_from_past):
        return self.predictor(self.bev_features(images, rig, present_from_past))


def predict_clip(model: InstancePredictionModel, images, rig, present_from_past):
    """Convenience wrapper for a single unbatched clip."""
    seg, flow = model(Tensor(np.asarray(images)[None]), rig, np.asarray(present_from_past)[None])
    return seg.data[0], flow.data[0]
