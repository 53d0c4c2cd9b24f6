"""Evaluation metrics: foreground IoU and video panoptic quality, plus a brute-force VPQ oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

MATCH_IOU = 0.5
ORACLE_MAX_INSTANCES = 10


def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    return pred, gt


def _reduce(values, reduction):
    if reduction == "mean":
        return float(np.mean(values)) if len(values) else 1.0
    if reduction == "sum":
        return float(np.sum(values))
    raise ConfigError(f"reduction must be 'mean' or 'sum', got {reduction!r}")


# -- IoU ----------------------------------------------------------------------

class IoUAccumulator:
    """Per-frame-index intersection and union totals across clips."""

    def __init__(self):
        self.inter, self.union = [], []

    def update(self, pred, gt):
        pred, gt = _check_pair(pred, gt)
        p, g = pred > 0, gt > 0
        for t in range(p.shape[0]):
            if t == len(self.inter):
                self.inter.append(0)
                self.union.append(0)
            self.inter[t] += int((p[t] & g[t]).sum())
            self.union[t] += int((p[t] | g[t]).sum())
        return self

    def per_frame(self):
        return [1.0 if u == 0 else i / u for i, u in zip(self.inter, self.union)]

    def compute(self):
        return float(np.mean(self.per_frame())) if self.inter else 1.0


def iou(pred, gt) -> float:
    """Foreground IoU averaged over frames; a frame empty on both sides scores 1."""
    return IoUAccumulator().update(pred, gt).compute()


# -- VPQ ----------------------------------------------------------------------

@dataclass
class FrameMatches:
    tp: list = field(default_factory=list)  # (pred_id, gt_id, iou)
    fp: list = field(default_factory=list)
    fn: list = field(default_factory=list)

    @property
    def empty(self):
        return not (self.tp or self.fp or self.fn)

    @property
    def iou_sum(self):
        return float(sum(m[2] for m in self.tp))

    @property
    def denominator(self):
        return len(self.tp) + 0.5 * len(self.fp) + 0.5 * len(self.fn)

    @property
    def quality(self):
        return self.iou_sum / self.denominator


@dataclass
class VPQBreakdown:
    frames: list
    value: float
    reduction: str = "mean"

    @property
    def counts(self):
        return [(len(f.tp), len(f.fp), len(f.fn)) for f in self.frames]


def instance_ious(pred_t: np.ndarray, gt_t: np.ndarray):
    """Pairwise IoU between the instances of one frame via a joint histogram."""
    p_ids = np.unique(pred_t[pred_t > 0])
    g_ids = np.unique(gt_t[gt_t > 0])
    p_idx = np.searchsorted(p_ids, pred_t.ravel())
    g_idx = np.searchsorted(g_ids, gt_t.ravel())
    p_fg, g_fg = pred_t.ravel() > 0, gt_t.ravel() > 0
    p_area = np.bincount(p_idx[p_fg], minlength=len(p_ids))
    g_area = np.bincount(g_idx[g_fg], minlength=len(g_ids))
    both = p_fg & g_fg
    inter = np.zeros((len(p_ids), len(g_ids)))
    np.add.at(inter, (p_idx[both], g_idx[both]), 1)
    union = p_area[:, None] + g_area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        ious = np.where(union > 0, inter / union, 0.0)
    return p_ids, g_ids, ious


class VPQAccumulator:
    """Temporally consistent instance matching with per-frame-index totals across clips."""

    def __init__(self, reduction: str = "mean"):
        _reduce([], reduction)
        self.reduction = reduction
        self.iou_sum, self.tp, self.fp, self.fn = [], [], [], []

    def match_clip(self, pred, gt):
        pred, gt = _check_pair(pred, gt)
        pred_of_gt, gt_of_pred = {}, {}
        frames = []
        for t in range(pred.shape[0]):
            p_ids, g_ids, ious = instance_ious(pred[t], gt[t])
            fm = FrameMatches()
            used_p, used_g = set(), set()
            for i, j in zip(*np.nonzero(ious > MATCH_IOU)):
                p, g = int(p_ids[i]), int(g_ids[j])
                if pred_of_gt.get(g, p) != p or gt_of_pred.get(p, g) != g:
                    continue
                fm.tp.append((p, g, float(ious[i, j])))
                used_p.add(p)
                used_g.add(g)
                pred_of_gt[g], gt_of_pred[p] = p, g
            fm.fp = [int(p) for p in p_ids if p not in used_p]
            fm.fn = [int(g) for g in g_ids if g not in used_g]
            frames.append(fm)
        return frames

    def update(self, pred, gt):
        frames = self.match_clip(pred, gt)
        for t, fm in enumerate(frames):
            if t == len(self.tp):
                for acc in (self.iou_sum, self.tp, self.fp, self.fn):
                    acc.append(0)
            self.iou_sum[t] += fm.iou_sum
            self.tp[t] += len(fm.tp)
            self.fp[t] += len(fm.fp)
            self.fn[t] += len(fm.fn)
        return frames

    def per_frame(self):
        out = []
        for s, tp, fp, fn in zip(self.iou_sum, self.tp, self.fp, self.fn):
            den = tp + 0.5 * fp + 0.5 * fn
            if den > 0:
                out.append(s / den)
        return out

    def compute(self):
        return _reduce(self.per_frame(), self.reduction)


def vpq(pred, gt, reduction: str = "mean") -> VPQBreakdown:
    """Video panoptic quality of instance-ID volumes (T, H, W).

    A predicted and a ground-truth instance match in a frame when their IoU
    exceeds 0.5 and neither was matched to a different partner earlier in the
    clip. Frames without instances on either side are skipped. ``reduction``
    "mean" averages the per-frame ratios; "sum" adds them.
    """
    acc = VPQAccumulator(reduction)
    frames = acc.update(pred, gt)
    return VPQBreakdown(frames, acc.compute(), reduction)


# -- brute-force oracle ---------------------------------------------------------

def _loop_iou(pred_t, gt_t, p, g):
    inter = union = 0
    h, w = pred_t.shape
    for r in range(h):
        for c in range(w):
            a, b = pred_t[r, c] == p, gt_t[r, c] == g
            inter += a and b
            union += a or b
    return inter / union if union else 0.0


def vpq_oracle(pred, gt, reduction: str = "mean") -> float:
    """Exhaustive-search VPQ for small scenes.

    Every partial one-to-one assignment of predicted to ground-truth IDs is
    enumerated; pairs must have IoU > 0.5 and agree with the pairings chosen
    in earlier frames. The assignment with the largest IoU sum is kept.
    """
    pred, gt = _check_pair(pred, gt)
    history = {}  # frozen pairings from earlier frames: ("p", id) / ("g", id) -> partner
    ratios = []
    for t in range(pred.shape[0]):
        p_ids = sorted({int(v) for v in pred[t].ravel() if v > 0})
        g_ids = sorted({int(v) for v in gt[t].ravel() if v > 0})
        if len(p_ids) > ORACLE_MAX_INSTANCES or len(g_ids) > ORACLE_MAX_INSTANCES:
            raise ConfigError(f"oracle refuses scenes with more than {ORACLE_MAX_INSTANCES} instances per frame")
        if not p_ids and not g_ids:
            continue
        table = {(p, g): _loop_iou(pred[t], gt[t], p, g) for p in p_ids for g in g_ids}

        def allowed(p, g):
            return (table[p, g] > MATCH_IOU and history.get(("p", p), g) == g
                    and history.get(("g", g), p) == p)

        best = (-1.0, [])

        def search(i, used, chosen, score):
            nonlocal best
            if i == len(p_ids):
                if score > best[0]:
                    best = (score, list(chosen))
                return
            search(i + 1, used, chosen, score)
            for g in g_ids:
                if g not in used and allowed(p_ids[i], g):
                    chosen.append((p_ids[i], g))
                    search(i + 1, used | {g}, chosen, score + table[p_ids[i], g])
                    chosen.pop()

        search(0, frozenset(), [], 0.0)
        score, pairs = best
        for p, g in pairs:
            history[("p", p)], history[("g", g)] = g, p
        n_tp = len(pairs)
        ratios.append(score / (n_tp + 0.5 * (len(p_ids) - n_tp) + 0.5 * (len(g_ids) - n_tp)))
    return _reduce(ratios, reduction)


# -- report -------------------------------------------------------------------

def format_report(values: dict) -> str:
    """Flat ``key value`` lines, keys sorted."""
    lines = []
    for key in sorted(values):
        v = values[key]
        lines.append(f"{key} {v:.6f}" if isinstance(v, float) else f"{key} {v}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition(" ")
        try:
            out[key] = int(raw)
        except ValueError:
            try:
                out[key] = float(raw)
            except ValueError:
                out[key] = raw
    return out
