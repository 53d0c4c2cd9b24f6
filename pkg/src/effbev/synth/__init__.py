"""Procedural multi-camera driving clips with exact BEV ground truth."""

from .dataset import (
    Clip, Dataset, decode_array, encode_array, generate_clip, generate_dataset, read_array, read_clip,
    read_dataset, write_array, write_dataset,
)
from .generator import crossing_pairs, random_script
from .raster import GroundTruth, agent_masks, footprint, rasterize_gt
from .render import default_rig, render_cameras
from .scene import AgentSpec, EgoSegment, SceneScript, SequenceSpec, Trajectories, simulate

__all__ = [
    "AgentSpec", "Clip", "Dataset", "EgoSegment", "GroundTruth", "SceneScript", "SequenceSpec", "Trajectories",
    "agent_masks", "crossing_pairs", "decode_array", "default_rig", "encode_array", "footprint",
    "generate_clip", "generate_dataset", "random_script", "rasterize_gt", "read_array", "read_clip",
    "read_dataset", "render_cameras", "simulate", "write_array", "write_dataset",
]
