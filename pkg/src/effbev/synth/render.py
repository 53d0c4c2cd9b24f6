"""Flat-shaded multi-camera rendering of scripted scenes."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import CameraRig
from .scene import SequenceSpec, Trajectories

GROUND = np.array([0.5, 0.5, 0.5])
SKY = np.array([0.55, 0.7, 0.9])
BOX_HEIGHT = 1.5  # m
# brightness per hit face: body x (front/back), body y (sides), top
FACE_SHADE = np.array([0.8, 0.6, 1.0])


def camera_extrinsic(yaw: float, height: float = 1.6, offset=(0.0, 0.0)) -> np.ndarray:
    """ego_from_camera for a level camera looking along ego heading ``yaw``."""
    c, s = math.cos(yaw), math.sin(yaw)
    E = np.eye(4)
    # columns: camera x (right), y (down), z (forward) in ego coordinates
    E[:3, :3] = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    E[:3, 3] = (offset[0], offset[1], height)
    return E


def pinhole(image_size, fov_deg: float) -> np.ndarray:
    h, w = image_size
    f = 0.5 * w / math.tan(math.radians(fov_deg) / 2)
    return np.array([[f, 0.0, w / 2], [0.0, f, h / 2], [0.0, 0.0, 1.0]])


def default_rig(n_cameras: int = 6, image_size=(48, 96), fov_deg: float = 70.0, height: float = 1.6) -> CameraRig:
    """Ring of identical cameras spaced evenly in yaw, camera 0 facing forward."""
    K = pinhole(image_size, fov_deg)
    ext = [camera_extrinsic(2 * math.pi * k / n_cameras, height) for k in range(n_cameras)]
    return CameraRig(np.stack([K] * n_cameras), np.stack(ext), image_size).validate()


def pixel_rays(K: np.ndarray, E: np.ndarray, image_size):
    """Ego-frame ray origin (3,) and directions (H, W, 3) through pixel centers."""
    h, w = image_size
    u, v = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1)
    d_cam = pix @ np.linalg.inv(K).T
    return E[:3, 3], d_cam @ E[:3, :3].T


def ray_box(origin, dirs, center, half, yaw):
    """Slab intersection with a yawed box. Returns (entry distance, face axis); inf where missed."""
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    o = rot @ (origin - center)
    d = dirs @ rot.T
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    t1 = np.nan_to_num(t1, nan=-np.inf)
    t2 = np.nan_to_num(t2, nan=np.inf)
    lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
    t_in, t_out = lo.max(axis=-1), hi.min(axis=-1)
    face = lo.argmax(axis=-1)
    hit = (t_out >= t_in) & (t_in > 0)
    return np.where(hit, t_in, np.inf), face


def render_view(states, sizes, colors, K, E, image_size) -> np.ndarray:
    """One (3, H, W) image; ``states`` are ego-frame (x, y, yaw) of the visible agents."""
    origin, dirs = pixel_rays(K, E, image_size)
    img = np.empty(dirs.shape[:2] + (3,))
    img[...] = SKY
    img[dirs[..., 2] < 0] = GROUND
    dist = [np.hypot(st[0] - origin[0], st[1] - origin[1]) for st in states]
    for i in np.argsort(dist)[::-1]:  # painter's order: far to near
        center = np.array([states[i][0], states[i][1], 0.5 * BOX_HEIGHT])
        half = np.array([0.5 * sizes[i][0], 0.5 * sizes[i][1], 0.5 * BOX_HEIGHT])
        t, face = ray_box(origin, dirs, center, half, states[i][2])
        hit = np.isfinite(t)
        img[hit] = colors[i] * FACE_SHADE[face[hit]][:, None]
    return img.transpose(2, 0, 1)


def render_cameras(traj: Trajectories, rig: CameraRig, seq: SequenceSpec) -> np.ndarray:
    """Images (T_p+1, N_c, 3, H, W) in [0, 1] for the input frames of a clip."""
    frames = seq.input_frames
    out = np.empty((len(frames), rig.n_cameras, 3) + rig.image_size, dtype=np.float32)
    for j, k in enumerate(frames):
        states = traj.in_ego_frame(k)[:, k]
        alive = np.flatnonzero(traj.alive[:, k])
        for n in range(rig.n_cameras):
            out[j, n] = render_view(states[alive], traj.sizes[alive], traj.colors[alive],
                                    rig.intrinsics[n], rig.extrinsics[n], rig.image_size)
    return out
