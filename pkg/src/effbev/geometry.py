"""Camera frustums, lift-splat projection and ego-motion warping of BEV maps.

Conventions
-----------
* Camera frame: x right, y down, z forward (pinhole, z is the depth).
* Ego frame: x forward, y left, z up.
* BEV grid: ``row = floor((x_max - x) / res)``, ``col = floor((y_max - y) / res)``,
  so +x (forward) points up the map and the ego origin falls in cell
  ``(H/2, W/2)``. Continuous cell coordinates put cell centers on integers.
* Pixel ``(u, v)`` coordinates are continuous with pixel ``i`` spanning
  ``[i, i + 1)``; a pixel center is at ``i + 0.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, functional as F
from .errors import CalibrationError, ConfigError, DimensionError


@dataclass(frozen=True)
class BEVGridSpec:
    x_range: tuple = (-50.0, 50.0)
    y_range: tuple = (-50.0, 50.0)
    resolution: float = 0.5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ConfigError(f"grid.resolution must be positive, got {self.resolution}")
        for name, (lo, hi) in (("x_range", self.x_range), ("y_range", self.y_range)):
            if not hi > lo:
                raise ConfigError(f"grid.{name} must satisfy min < max, got {(lo, hi)}")
        if self.H < 1 or self.W < 1:
            raise ConfigError("grid has no cells")

    @classmethod
    def long(cls):
        return cls((-50.0, 50.0), (-50.0, 50.0), 0.5)

    @classmethod
    def short(cls):
        return cls((-15.0, 15.0), (-15.0, 15.0), 0.15)

    @property
    def H(self):
        return int(round((self.x_range[1] - self.x_range[0]) / self.resolution))

    @property
    def W(self):
        return int(round((self.y_range[1] - self.y_range[0]) / self.resolution))

    @property
    def shape(self):
        return (self.H, self.W)

    def to_cells(self, x, y):
        """Continuous (row, col) coordinates; cell centers are integers."""
        row = (self.x_range[1] - np.asarray(x)) / self.resolution - 0.5
        col = (self.y_range[1] - np.asarray(y)) / self.resolution - 0.5
        return row, col

    def cell_centers(self):
        """Ego-frame (x, y) of every cell center, each of shape (H, W)."""
        rows, cols = np.meshgrid(np.arange(self.H), np.arange(self.W), indexing="ij")
        x = self.x_range[1] - (rows + 0.5) * self.resolution
        y = self.y_range[1] - (cols + 0.5) * self.resolution
        return x, y


@dataclass(frozen=True)
class DepthBinSpec:
    """Equal-width depth bins on ``[d_min, d_max)``; points sit at bin centers."""

    d_min: float = 2.0
    d_max: float = 50.0
    n_bins: int = 48

    def __post_init__(self):
        if self.n_bins < 1 or not self.d_max > self.d_min > 0:
            raise ConfigError(f"invalid depth bins {self}")

    @property
    def width(self):
        return (self.d_max - self.d_min) / self.n_bins

    def centers(self):
        return self.d_min + (np.arange(self.n_bins) + 0.5) * self.width


@dataclass
class CameraRig:
    intrinsics: np.ndarray  # (N, 3, 3) pixels
    extrinsics: np.ndarray  # (N, 4, 4) ego_from_camera, meters
    image_size: tuple  # (H, W)

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.extrinsics = np.asarray(self.extrinsics, dtype=np.float64)
        self.image_size = tuple(int(s) for s in self.image_size)

    @property
    def n_cameras(self):
        return self.intrinsics.shape[0]

    def validate(self):
        h, w = self.image_size
        if self.intrinsics.shape[1:] != (3, 3) or self.extrinsics.shape[1:] != (4, 4) \
                or len(self.intrinsics) != len(self.extrinsics):
            raise CalibrationError(
                f"rig shapes {self.intrinsics.shape} / {self.extrinsics.shape} are inconsistent")
        for k, K in enumerate(self.intrinsics):
            if K[0, 0] <= 0 or K[1, 1] <= 0:
                raise CalibrationError(f"camera {k}: focal lengths must be positive")
            if not (0 <= K[0, 2] <= w and 0 <= K[1, 2] <= h):
                raise CalibrationError(f"camera {k}: principal point outside the image")
        for k, E in enumerate(self.extrinsics):
            R = E[:3, :3]
            if np.abs(R.T @ R - np.eye(3)).max() > 1e-5 or abs(np.linalg.det(R) - 1.0) > 1e-5:
                raise CalibrationError(f"camera {k}: rotation is not a proper orthonormal matrix")
        return self

    def permuted(self, order):
        return CameraRig(self.intrinsics[list(order)], self.extrinsics[list(order)], self.image_size)


# -- poses --------------------------------------------------------------------

def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion ``(qw, qx, qy, qz)``."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def yaw_quat(yaw):
    return np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])


def pose_matrix(pose, tol=1e-3):
    """4x4 world_from_ego for a pose ``(x, y, z, qw, qx, qy, qz)``."""
    pose = np.asarray(pose, dtype=np.float64)
    q = pose[3:7]
    if abs(np.linalg.norm(q) - 1.0) > tol:
        raise CalibrationError(f"pose quaternion {q} is not unit norm")
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(q / np.linalg.norm(q))
    m[:3, 3] = pose[:3]
    return m


def relative_pose(pose_t, pose_present):
    """``present_from_t = inverse(world_from_present) @ world_from_t``."""
    return np.linalg.inv(pose_matrix(pose_present)) @ pose_matrix(pose_t)


def planar(transform):
    """Reduce a 4x4 rigid transform to (tx, ty, yaw)."""
    transform = np.asarray(transform)
    return transform[0, 3], transform[1, 3], math.atan2(transform[1, 0], transform[0, 0])


@dataclass
class EgoTrajectory:
    poses: np.ndarray  # (T, 7): x, y, z, qw, qx, qy, qz (world_from_ego)

    def __post_init__(self):
        self.poses = np.asarray(self.poses, dtype=np.float64)

    def validate(self, tol=1e-6):
        norms = np.linalg.norm(self.poses[:, 3:7], axis=1)
        if np.abs(norms - 1.0).max() > tol:
            raise CalibrationError("ego trajectory quaternions must have unit norm")
        return self

    def present_from_each(self):
        """(T, 4, 4) transforms mapping every frame into the last (present) one."""
        present = self.poses[-1]
        return np.stack([relative_pose(p, present) for p in self.poses])


# -- lift-splat -----------------------------------------------------------------

def build_frustum(rig: CameraRig, bins: DepthBinSpec, feat_size) -> np.ndarray:
    """Camera-frame points (N, D, H_f, W_f, 3) for each feature cell and depth bin."""
    h_img, w_img = rig.image_size
    hf, wf = feat_size
    if h_img % hf or w_img % wf or h_img // hf != w_img // wf:
        raise ConfigError(f"feature size {feat_size} is not an integer stride of image {rig.image_size}")
    stride = h_img // hf
    u = (np.arange(wf) + 0.5) * stride
    v = (np.arange(hf) + 0.5) * stride
    uu, vv = np.meshgrid(u, v)
    pix = np.stack([uu, vv, np.ones_like(uu)], axis=-1)  # (H_f, W_f, 3)
    depths = bins.centers()
    out = []
    for K in rig.intrinsics:
        try:
            kinv = np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise CalibrationError("intrinsic matrix is not invertible") from exc
        rays = pix @ kinv.T  # z component is 1
        out.append(depths[:, None, None, None] * rays[None])
    return np.stack(out)


def frustum_to_ego(frustum: np.ndarray, extrinsics: np.ndarray) -> np.ndarray:
    """Transform (N, D, H_f, W_f, 3) camera points into the ego frame."""
    R = extrinsics[:, :3, :3]
    t = extrinsics[:, :3, 3]
    return np.einsum("nij,ndhwj->ndhwi", R, frustum) + t[:, None, None, None, :]


def lift_features(feat: Tensor, depth_logits: Tensor) -> Tensor:
    """Outer product of the depth distribution and the context features.

    ``feat`` is (..., C_F, H_f, W_f), ``depth_logits`` (..., C_D, H_f, W_f);
    the result is (..., C_D, C_F, H_f, W_f).
    """
    if feat.shape[:-3] != depth_logits.shape[:-3] or feat.shape[-2:] != depth_logits.shape[-2:]:
        raise DimensionError(f"lift shapes {feat.shape} and {depth_logits.shape} disagree")
    probs = F.softmax(depth_logits, axis=-3)
    lead = feat.shape[:-3]
    p = probs.reshape(lead + (probs.shape[-3], 1) + probs.shape[-2:])
    f = feat.reshape(lead + (1,) + feat.shape[-3:])
    return p * f


def bev_cell_index(points_ego: np.ndarray, grid: BEVGridSpec):
    """Flat cell index and in-grid mask for ego-frame points (..., 3)."""
    x, y = points_ego[..., 0], points_ego[..., 1]
    row = np.floor((grid.x_range[1] - x) / grid.resolution).astype(np.int64)
    col = np.floor((grid.y_range[1] - y) / grid.resolution).astype(np.int64)
    keep = (row >= 0) & (row < grid.H) & (col >= 0) & (col < grid.W)
    return np.where(keep, row * grid.W + col, 0), keep


def splat_to_bev(lifted: Tensor, points_ego: np.ndarray, grid: BEVGridSpec) -> Tensor:
    """Sum-pool lifted features into the BEV grid.

    ``lifted`` is (*L, N, D, C, H_f, W_f) and ``points_ego`` broadcasts to
    (*L, N, D, H_f, W_f, 3). The result is (*L, C, H, W). Points outside the
    grid are dropped; height is ignored.
    """
    lead = lifted.shape[:-5]
    n, d, c, hf, wf = lifted.shape[-5:]
    points = np.broadcast_to(points_ego, lead + (n, d, hf, wf, 3))
    cell, keep = bev_cell_index(points, grid)
    n_lead = int(np.prod(lead)) if lead else 1
    hw = grid.H * grid.W
    offset = (np.arange(n_lead) * hw).reshape((n_lead, 1, 1, 1, 1))
    index = cell.reshape((n_lead, n, d, hf, wf)) + offset
    order = tuple(range(len(lead))) + tuple(len(lead) + k for k in (0, 1, 3, 4, 2))
    values = lifted.permute(order).reshape(-1, c)
    pooled = F.scatter_add(values, index.reshape(-1), n_lead * hw, keep.reshape(-1))
    return pooled.reshape(n_lead, grid.H, grid.W, c).permute(0, 3, 1, 2).reshape(lead + (c, grid.H, grid.W))


# -- ego warp -----------------------------------------------------------------

def warp_sample_coords(present_from_past: np.ndarray, grid: BEVGridSpec, snap=1e-6):
    """Past-frame (row, col) sample position of every present-frame cell."""
    tx, ty, yaw = planar(present_from_past)
    c, s = math.cos(yaw), math.sin(yaw)
    x, y = grid.cell_centers()
    # past_from_present = inverse of the planar present_from_past
    dx, dy = x - tx, y - ty
    xp = c * dx + s * dy
    yp = -s * dx + c * dy
    rows, cols = grid.to_cells(xp, yp)
    for arr in (rows, cols):
        near = np.abs(arr - np.round(arr)) < snap
        arr[near] = np.round(arr[near])
    return rows, cols


def warp_bev_features(past: Tensor, present_from_past, grid: BEVGridSpec) -> Tensor:
    """Resample past BEV maps (B, C, H, W) into the present ego frame.

    ``present_from_past`` is one 4x4 transform or a (B, 4, 4) stack. Only the
    planar part (x, y, yaw) is used; out-of-grid samples read as zero.
    """
    squeeze = past.ndim == 3
    if squeeze:
        past = past.reshape((1,) + past.shape)
    transforms = np.asarray(present_from_past, dtype=np.float64)
    if transforms.ndim == 2:
        transforms = np.broadcast_to(transforms, (past.shape[0], 4, 4))
    coords = [warp_sample_coords(T, grid) for T in transforms]
    rows = np.stack([r for r, _ in coords])
    cols = np.stack([q for _, q in coords])
    out = F.grid_sample_bilinear(past, rows, cols)
    return out.reshape(out.shape[1:]) if squeeze else out
