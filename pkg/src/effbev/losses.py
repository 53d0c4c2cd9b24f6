"""Training objectives: top-k cross-entropy, masked smooth-L1 flow, uncertainty weighting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Module, Parameter, Tensor, as_tensor, get_default_dtype, stack
from .autodiff import functional as F
from .errors import ConfigError, DimensionError


def _one_hot(target, n_classes, dtype):
    target = np.asarray(target)
    if np.issubdtype(target.dtype, np.integer) or target.dtype == bool:
        return np.moveaxis(np.eye(n_classes, dtype=dtype)[target.astype(np.int64)], -1, -3)
    return target.astype(dtype)


def cell_cross_entropy(logits: Tensor, target) -> Tensor:
    """Per-cell CE for logits (..., C, H, W) against class indices (..., H, W) or one-hot."""
    logits = as_tensor(logits)
    onehot = _one_hot(target, logits.shape[-3], logits.dtype)
    if onehot.shape != logits.shape:
        raise DimensionError(f"target {onehot.shape} does not match logits {logits.shape}")
    return -(F.log_softmax(logits, axis=-3) * onehot).sum(axis=-3)


def topk_cross_entropy(logits, target, k_frac: float = 0.25) -> Tensor:
    """Mean of the ceil(k_frac * N) largest per-cell cross-entropies."""
    if not 0.0 < k_frac <= 1.0:
        raise ConfigError(f"k_frac must be in (0, 1], got {k_frac}")
    ce = cell_cross_entropy(logits, target).reshape(-1)
    n = ce.shape[0]
    k = max(1, math.ceil(k_frac * n - 1e-9))
    if k == n:
        return ce.mean()
    idx = np.argpartition(-ce.data, k - 1)[:k]
    return ce[idx].mean()


def smooth_l1_flow(pred, gt, mask, beta: float = 1.0) -> Tensor:
    """Smooth-L1 between flows (..., 2, H, W) averaged over masked cells and both components."""
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if gt.shape != pred.shape or mask.shape != pred.shape[:-3] + pred.shape[-2:]:
        raise DimensionError(f"flow {pred.shape}, target {gt.shape} and mask {mask.shape} disagree")
    weight = np.expand_dims(mask, -3)
    count = 2.0 * mask.sum()
    per = F.smooth_l1(pred - gt, beta) * weight
    if count == 0:
        return per.sum() * 0.0
    return per.sum() / count


def per_frame_losses(seg_logits, flow, gt_seg, gt_flow, k_frac: float = 0.25):
    """(T_f,) segmentation and flow losses for batched volumes (B, T_f, ...)."""
    seg_logits, flow = as_tensor(seg_logits), as_tensor(flow)
    gt_seg = np.asarray(gt_seg)
    fg = gt_seg > 0 if gt_seg.ndim == seg_logits.ndim - 1 else np.argmax(gt_seg, axis=-3) > 0
    t_f = seg_logits.shape[1]
    l_seg = [topk_cross_entropy(seg_logits[:, t], gt_seg[:, t], k_frac) for t in range(t_f)]
    l_flow = [smooth_l1_flow(flow[:, t], gt_flow[:, t], fg[:, t]) for t in range(t_f)]
    return stack(l_seg), stack(l_flow)


class UncertaintyWeights(Module):
    """Learned log-variances; task weights are exp(-s) and stay positive."""

    def __init__(self, s_seg: float = 0.0, s_flow: float = 0.0):
        super().__init__()
        dtype = get_default_dtype()
        self.s_seg = Parameter(np.array([s_seg], dtype=dtype))
        self.s_flow = Parameter(np.array([s_flow], dtype=dtype))

    @property
    def lambdas(self):
        return float(np.exp(-self.s_seg.data[0])), float(np.exp(-self.s_flow.data[0]))


def total_loss(l_seg, l_flow, w: UncertaintyWeights, t_f: int | None = None) -> Tensor:
    """mean_t(exp(-s_seg) L_seg_t + exp(-s_flow) L_flow_t) + s_seg + s_flow.

    ``l_seg`` and ``l_flow`` may be per-frame vectors of length ``t_f`` or scalars.
    """
    l_seg, l_flow = as_tensor(l_seg), as_tensor(l_flow)
    if t_f is not None and l_seg.size not in (1, t_f):
        raise DimensionError(f"expected {t_f} per-frame losses, got {l_seg.size}")
    weighted = (-w.s_seg).exp() * l_seg + (-w.s_flow).exp() * l_flow
    return (weighted.mean() + w.s_seg + w.s_flow).reshape(())


@dataclass
class LossReport:
    l_seg: float
    l_flow: float
    total: float
    lambda_seg: float
    lambda_flow: float

    @property
    def finite(self):
        return all(math.isfinite(v) for v in (self.l_seg, self.l_flow, self.total))


def loss_report(l_seg: Tensor, l_flow: Tensor, total: Tensor, w: UncertaintyWeights) -> LossReport:
    lam = w.lambdas
    return LossReport(float(l_seg.data.mean()), float(l_flow.data.mean()), float(total.item()), *lam)
