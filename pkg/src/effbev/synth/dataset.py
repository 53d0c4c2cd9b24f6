"""Clip generation and the on-disk dataset format.

Layout::

    root/dataset.json            version, grid, sequence, rig, splits, normalization
    root/<clip>/manifest.json    script, ego poses, grid, rig, normalization
    root/<clip>/<array>.bif      binary arrays

Each ``.bif`` file starts with the 8-byte magic ``BIFD0001``, a uint32 dtype
code, a uint32 rank, ``rank`` uint32 dims, then the little-endian payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, FormatError
from ..geometry import BEVGridSpec, CameraRig, relative_pose
from .generator import random_script
from .raster import GroundTruth, rasterize_gt
from .render import default_rig, render_cameras
from .scene import SceneScript, SequenceSpec, simulate

MAGIC = b"BIFD0001"
FORMAT_VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<i4")}
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("int32"): 2}
ARRAYS = ("images", "seg", "instances", "flow")
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)


# -- binary arrays --------------------------------------------------------------

def encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ConfigError(f"unsupported array dtype {arr.dtype}")
    header = MAGIC + struct.pack("<II", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < 16:
        raise FormatError("array header truncated", offset=len(buf))
    if buf[:4] != MAGIC[:4]:
        raise FormatError("bad array magic", offset=0)
    if buf[:8] != MAGIC:
        raise FormatError(f"array format version {buf[4:8]!r} is not supported", offset=4)
    code, rank = struct.unpack_from("<II", buf, 8)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=8)
    dims_end = 16 + 4 * rank
    if len(buf) < dims_end:
        raise FormatError("array dims truncated", offset=len(buf))
    shape = struct.unpack_from(f"<{rank}I", buf, 16)
    dtype = DTYPES[code]
    need = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - dims_end < need:
        raise FormatError(f"payload truncated: expected {need} bytes, found {len(buf) - dims_end}", offset=len(buf))
    if len(buf) - dims_end > need:
        raise FormatError("trailing bytes after payload", offset=dims_end + need)
    return np.frombuffer(buf, dtype=dtype, count=int(np.prod(shape)), offset=dims_end).reshape(shape).copy()


def write_array(path, arr):
    Path(path).write_bytes(encode_array(arr))


def read_array(path):
    return decode_array(Path(path).read_bytes())


# -- clips -------------------------------------------------------------------

@dataclass
class Clip:
    name: str
    script: SceneScript
    images: np.ndarray  # (T_p+1, N, 3, H, W) float32
    gt: GroundTruth
    ego_poses: np.ndarray  # (T, 7) world_from_ego
    seed: int = 0

    @property
    def n_agents(self):
        return len(self.script.agents)

    def present_from_past(self, seq: SequenceSpec) -> np.ndarray:
        """(T_p+1, 4, 4) transforms from each input frame into the present ego frame."""
        present = self.ego_poses[seq.present]
        return np.stack([relative_pose(self.ego_poses[k], present) for k in seq.input_frames])


def generate_clip(seed: int, grid: BEVGridSpec, seq: SequenceSpec, rig: CameraRig, n_agents=(2, 6),
                  name: str | None = None) -> Clip:
    rng = np.random.default_rng(seed)
    script = random_script(rng, grid, seq, n_agents)
    traj = simulate(script)
    return Clip(name or f"clip_{seed}", script, render_cameras(traj, rig, seq), rasterize_gt(traj, grid, seq),
                traj.ego_poses(), seed)


def clip_seeds(seed: int, n: int):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def split_counts(n: int):
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = round(SPLIT_FRACTIONS[1] * n)
    return n_train, n_val, n - n_train - n_val


# -- dataset -----------------------------------------------------------------

@dataclass
class Dataset:
    root: Path
    grid: BEVGridSpec
    seq: SequenceSpec
    rig: CameraRig
    splits: dict
    normalization: dict

    def names(self, split=None):
        if split is None:
            return [n for s in ("train", "val", "test") for n in self.splits[s]]
        return list(self.splits[split])

    def load(self, name: str) -> Clip:
        return read_clip(self.root / name)

    def clips(self, split=None):
        return [self.load(n) for n in self.names(split)]


def _grid_dict(grid):
    return {"x_range_m": list(grid.x_range), "y_range_m": list(grid.y_range), "resolution_m": grid.resolution}


def _grid_from(d):
    return BEVGridSpec(tuple(d["x_range_m"]), tuple(d["y_range_m"]), d["resolution_m"])


def _rig_dict(rig):
    return {"intrinsics_px": rig.intrinsics.tolist(), "ego_from_camera": rig.extrinsics.tolist(),
            "image_size_hw": list(rig.image_size)}


def _rig_from(d):
    return CameraRig(np.array(d["intrinsics_px"]), np.array(d["ego_from_camera"]), tuple(d["image_size_hw"]))


def _seq_dict(seq):
    return {"t_p": seq.t_p, "t_f": seq.t_f, "hz": seq.hz}


def normalization_stats(clips) -> dict:
    imgs = np.stack([c.images for c in clips]).astype(np.float64)
    axes = tuple(i for i in range(imgs.ndim) if i != imgs.ndim - 3)
    std = imgs.std(axis=axes)
    return {"mean": imgs.mean(axis=axes).tolist(), "std": np.maximum(std, 1e-6).tolist()}


def write_clip(path, clip: Clip, grid, seq, rig, normalization):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "name": clip.name, "seed": clip.seed, "grid": _grid_dict(grid), "sequence": _seq_dict(seq),
        "rig": _rig_dict(rig), "normalization": normalization, "n_agents": clip.n_agents,
        "ego_poses": clip.ego_poses.tolist(), "script": clip.script.to_dict(),
        "arrays": {k: f"{k}.bif" for k in ARRAYS},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    write_array(path / "images.bif", clip.images.astype(np.float32))
    write_array(path / "seg.bif", clip.gt.seg.astype(np.int32))
    write_array(path / "instances.bif", clip.gt.instances.astype(np.int32))
    write_array(path / "flow.bif", clip.gt.flow.astype(np.float32))


def read_clip(path) -> Clip:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    arrays = {k: read_array(path / m["arrays"][k]) for k in ARRAYS}
    gt = GroundTruth(arrays["seg"], arrays["instances"], arrays["flow"])
    return Clip(m["name"], SceneScript.from_dict(m["script"]), arrays["images"], gt,
                np.array(m["ego_poses"], dtype=np.float64), int(m["seed"]))


def write_dataset(clips, path, grid: BEVGridSpec, seq: SequenceSpec, rig: CameraRig, splits=None,
                  normalization=None) -> Dataset:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = [c.name for c in clips]
    if len(set(names)) != len(names):
        raise ConfigError("clip names must be unique")
    if splits is None:
        n_train, n_val, _ = split_counts(len(clips))
        splits = {"train": names[:n_train], "val": names[n_train:n_train + n_val], "test": names[n_train + n_val:]}
    if normalization is None:
        by_name = {c.name: c for c in clips}
        normalization = normalization_stats([by_name[n] for n in splits["train"]] or clips)
    for clip in clips:
        write_clip(path / clip.name, clip, grid, seq, rig, normalization)
    meta = {"format": "effbev-dataset", "version": FORMAT_VERSION, "n_clips": len(clips),
            "grid": _grid_dict(grid), "sequence": _seq_dict(seq), "rig": _rig_dict(rig),
            "splits": splits, "normalization": normalization}
    (path / "dataset.json").write_text(json.dumps(meta, indent=1))
    return Dataset(path, grid, seq, rig, splits, normalization)


def read_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path / "dataset.json"
    if not meta_path.exists():
        raise FormatError(f"{meta_path} not found")
    raw = meta_path.read_bytes()
    try:
        meta = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"dataset manifest is not valid JSON: {exc.msg}", offset=exc.pos) from exc
    if meta.get("version") != FORMAT_VERSION:
        raise FormatError(f"dataset version {meta.get('version')!r} != supported {FORMAT_VERSION}")
    return Dataset(path, _grid_from(meta["grid"]), SequenceSpec(**meta["sequence"]), _rig_from(meta["rig"]),
                   meta["splits"], meta["normalization"])


def generate_dataset(path, n_clips: int, seed: int, grid: BEVGridSpec, seq: SequenceSpec, rig=None,
                     n_agents=(2, 6)) -> Dataset:
    rig = rig or default_rig()
    clips = [generate_clip(s, grid, seq, rig, n_agents, name=f"clip_{i:04d}")
             for i, s in enumerate(clip_seeds(seed, n_clips))]
    return write_dataset(clips, path, grid, seq, rig)
