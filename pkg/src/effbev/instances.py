"""Instance IDs from segmentation and backward flow.

Frame 0 is seeded with connected components; every later frame looks up, for
each foreground cell, the ID found at its backward-flow destination in the
previous frame.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError

# Flow targets that land within this distance of a cell boundary round toward
# the lower index, so float32 round-off cannot split one object's cells.
TIE_TOL = 1e-4

_STRUCTURE = {4: ndimage.generate_binary_structure(2, 1), 8: ndimage.generate_binary_structure(2, 2)}


def foreground(seg) -> np.ndarray:
    """Binary (…, H, W) mask from a binary map or class logits/one-hot (…, C, H, W)."""
    seg = np.asarray(seg)
    if seg.dtype == bool:
        return seg
    if np.issubdtype(seg.dtype, np.integer):
        return seg > 0
    return np.argmax(seg, axis=-3) > 0


def label_components(mask: np.ndarray, connectivity: int = 8, first_id: int = 1):
    """Label connected components with IDs ordered by their smallest (row, col).

    Returns ``(labels, n)`` where labels use ``first_id .. first_id + n - 1``.
    """
    if connectivity not in _STRUCTURE:
        raise ConfigError(f"connectivity must be 4 or 8, got {connectivity}")
    raw, n = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    if n == 0:
        return np.zeros(mask.shape, dtype=np.int64), 0
    flat = raw.ravel()
    pos = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[pos], pos)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[order + 1] = np.arange(first_id, first_id + n)
    return remap[raw], n


def seed_instances_t0(seg_t0, connectivity: int = 8) -> np.ndarray:
    return label_components(np.asarray(seg_t0, dtype=bool), connectivity)[0]


def flow_destinations(flow_t: np.ndarray):
    """Rounded (row, col) destination of every cell; ties go toward negative infinity."""
    h, w = flow_t.shape[-2:]
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dest_r = np.ceil(rows + flow_t[0].astype(np.float64) - 0.5 - TIE_TOL).astype(np.int64)
    dest_c = np.ceil(cols + flow_t[1].astype(np.float64) - 0.5 - TIE_TOL).astype(np.int64)
    return dest_r, dest_c


def propagate_ids(ids_prev, seg_t, flow_t, next_id=None, connectivity: int = 8):
    """Assign IDs at frame t from frame t-1.

    Returns ``(ids_t, next_id)``; orphan components receive IDs starting at
    ``next_id`` (default: one above the largest ID in ``ids_prev``).
    """
    ids_prev = np.asarray(ids_prev)
    mask = np.asarray(seg_t, dtype=bool)
    flow_t = np.asarray(flow_t)
    if ids_prev.shape != mask.shape or flow_t.shape != (2,) + mask.shape:
        raise DimensionError(f"ids {ids_prev.shape}, seg {mask.shape} and flow {flow_t.shape} disagree")
    if next_id is None:
        next_id = int(ids_prev.max(initial=0)) + 1
    h, w = mask.shape
    dr, dc = flow_destinations(flow_t)
    inside = (dr >= 0) & (dr < h) & (dc >= 0) & (dc < w)
    inherited = np.zeros_like(ids_prev, dtype=np.int64)
    inherited[inside] = ids_prev[dr[inside], dc[inside]]
    ids = np.where(mask, inherited, 0)
    orphans = mask & (ids == 0)
    fresh, n = label_components(orphans, connectivity, first_id=next_id)
    ids = np.where(orphans, fresh, ids)
    return ids, next_id + n


def run_sequence(seg, flow, connectivity: int = 8) -> np.ndarray:
    """Instance volume (T, H, W) from segmentation (T, [C,] H, W) and flow (T, 2, H, W)."""
    mask = foreground(seg)
    flow = np.asarray(flow)
    if mask.ndim != 3 or flow.shape != (mask.shape[0], 2) + mask.shape[1:]:
        raise DimensionError(f"segmentation {np.shape(seg)} and flow {flow.shape} disagree")
    ids = np.zeros(mask.shape, dtype=np.int64)
    ids[0] = seed_instances_t0(mask[0], connectivity)
    next_id = int(ids[0].max(initial=0)) + 1
    for t in range(1, mask.shape[0]):
        ids[t], next_id = propagate_ids(ids[t - 1], mask[t], flow[t], next_id, connectivity)
    return ids


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two ID maps induce the same set partition (background 0 on both)."""
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if ((a > 0) != (b > 0)).any():
        return False
    fg = a > 0
    pairs = np.unique(np.stack([a[fg], b[fg]]), axis=1)
    return len(np.unique(pairs[0])) == pairs.shape[1] == len(np.unique(pairs[1]))
