"""Ground-truth BEV rasterization: segmentation, instance IDs and backward flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import BEVGridSpec
from .scene import SequenceSpec, Trajectories


@dataclass
class GroundTruth:
    seg: np.ndarray  # (T_f, H, W) int32 class map, 1 = vehicle
    instances: np.ndarray  # (T_f, H, W) int32, agent index + 1
    flow: np.ndarray  # (T_f, 2, H, W) float32, (d_row, d_col) cells

    def seg_onehot(self, n_classes=2):
        return np.moveaxis(np.eye(n_classes, dtype=np.float32)[self.seg], -1, -3)


def footprint(state, size, grid: BEVGridSpec) -> np.ndarray:
    """Cells whose center lies inside the rotated rectangle (x, y, yaw) x (length, width)."""
    xs, ys = grid.cell_centers()
    x, y, yaw = state
    c, s = np.cos(yaw), np.sin(yaw)
    dx, dy = xs - x, ys - y
    along = c * dx + s * dy
    across = -s * dx + c * dy
    return (np.abs(along) <= 0.5 * size[0]) & (np.abs(across) <= 0.5 * size[1])


def agent_masks(traj: Trajectories, grid: BEVGridSpec, reference: int, frames=None) -> np.ndarray:
    """(A, len(frames), H, W) footprints in the ego frame of ``reference``."""
    frames = range(traj.n_frames) if frames is None else frames
    states = traj.in_ego_frame(reference)
    out = np.zeros((traj.n_agents, len(frames)) + grid.shape, dtype=bool)
    for a in range(traj.n_agents):
        for j, k in enumerate(frames):
            if traj.alive[a, k]:
                out[a, j] = footprint(states[a, k], traj.sizes[a], grid)
    return out


def rasterize_gt(traj: Trajectories, grid: BEVGridSpec, seq: SequenceSpec) -> GroundTruth:
    """Rasterize the output frames of a clip in the present ego frame.

    Flow at a covered cell of frame t points to the agent center at t-1; at
    t = 0 and for agents absent at t-1 it points to the agent's own center.
    """
    present = seq.present
    frames = seq.output_frames
    states = traj.in_ego_frame(present)
    masks = agent_masks(traj, grid, present, frames)
    shape = (len(frames),) + grid.shape
    instances = np.zeros(shape, dtype=np.int32)
    flow = np.zeros((len(frames), 2) + grid.shape, dtype=np.float32)
    rows, cols = np.meshgrid(np.arange(grid.H), np.arange(grid.W), indexing="ij")
    for t, k in enumerate(frames):
        for a in range(traj.n_agents):
            m = masks[a, t]
            if not m.any():
                continue
            instances[t][m] = a + 1
            src = k - 1 if t > 0 and traj.alive[a, k - 1] else k
            cr, cc = grid.to_cells(states[a, src, 0], states[a, src, 1])
            flow[t, 0][m] = cr - rows[m]
            flow[t, 1][m] = cc - cols[m]
    return GroundTruth((instances > 0).astype(np.int32), instances, flow)
