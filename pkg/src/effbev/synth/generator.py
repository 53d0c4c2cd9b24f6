"""Randomized scene scripts whose ground truth is unambiguous for instance propagation.

Rejection sampling enforces:

* agents never touch (not even diagonally) in any rasterized frame, so every
  agent is its own connected component;
* an agent that spawns inside the output window has background under its own
  center in the previous frame, so propagation gives it a fresh ID;
* agents keep clear of the ego vehicle and of each other physically;
* every agent covers at least one cell of some output frame.
"""

from __future__ import annotations

import colorsys
import math

import numpy as np
from scipy import ndimage

from ..geometry import BEVGridSpec
from .raster import agent_masks
from .scene import AgentSpec, EgoSegment, SceneScript, SequenceSpec, Trajectories, simulate

EGO_CLEARANCE = 3.5  # m between ego origin and any agent center
GAP = 0.3  # m between bounding circles of two agents


def _color(rng):
    r, g, b = colorsys.hsv_to_rgb(rng.random(), 0.75 + 0.25 * rng.random(), 0.8 + 0.2 * rng.random())
    return (round(r, 4), round(g, 4), round(b, 4))


def _ego_script(rng, n_frames):
    split = int(rng.integers(1, n_frames + 1))
    segs = [EgoSegment(split, float(rng.uniform(0.0, 3.0)), float(rng.uniform(-0.15, 0.15)))]
    if split < n_frames:
        segs.append(EgoSegment(n_frames - split, float(rng.uniform(0.0, 3.0)), float(rng.uniform(-0.15, 0.15))))
    return tuple(segs)


def _to_world(ego_state, x, y, yaw):
    ex, ey, eyaw = ego_state
    c, s = math.cos(eyaw), math.sin(eyaw)
    return ex + c * x - s * y, ey + s * x + c * y, yaw + eyaw


def _random_agent(rng, ego, grid, seq, placed: Trajectories | None):
    spawn = 0 if rng.random() < 0.75 else int(rng.integers(1, seq.n_frames))
    length, width = float(rng.uniform(3.6, 4.8)), float(rng.uniform(1.7, 2.1))
    speed = float(rng.uniform(0.0, 4.0)) if rng.random() < 0.85 else 0.0
    yaw_rate = float(rng.uniform(-0.2, 0.2)) if rng.random() < 0.3 else 0.0
    dt = 1.0 / seq.hz
    if placed is not None and placed.n_agents and rng.random() < 0.5:
        # cross the path of an existing agent at a different time
        other = int(rng.integers(placed.n_agents))
        k_other = int(rng.choice(np.flatnonzero(placed.alive[other])))
        k_self = int(np.clip(k_other + rng.choice([-3, -2, 2, 3]), spawn, seq.n_frames - 1))
        px, py, pyaw = placed.agents[other, k_other]
        yaw = pyaw + rng.choice([-1, 1]) * rng.uniform(math.pi / 3, 2 * math.pi / 3)
        speed = max(speed, 2.0)
        back = speed * dt * (k_self - spawn)
        x, y = px - back * math.cos(yaw), py - back * math.sin(yaw)
        return AgentSpec(spawn, float(x), float(y), float(yaw), length, width, speed, 0.0, 0.0, _color(rng))
    lx = rng.uniform(grid.x_range[0], grid.x_range[1])
    ly = rng.uniform(grid.y_range[0], grid.y_range[1])
    x, y, yaw = _to_world(ego[spawn], lx, ly, rng.uniform(-math.pi, math.pi))
    return AgentSpec(spawn, float(x), float(y), float(yaw), length, width, speed, 0.0, yaw_rate, _color(rng))


def _acceptable(traj: Trajectories, grid: BEVGridSpec, seq: SequenceSpec) -> bool:
    """Check the newest agent (last index) against the ego and the others."""
    j = traj.n_agents - 1
    alive_j = traj.alive[j]
    for k in np.flatnonzero(alive_j):
        local = traj.in_ego_frame(k)[:, k]
        if math.hypot(local[j, 0], local[j, 1]) < EGO_CLEARANCE + 0.5 * math.hypot(*traj.sizes[j]):
            return False
        for i in range(j):
            if traj.alive[i, k]:
                reach = 0.5 * (math.hypot(*traj.sizes[i]) + math.hypot(*traj.sizes[j])) + GAP
                if math.hypot(*(traj.agents[i, k, :2] - traj.agents[j, k, :2])) < reach:
                    return False
    masks = agent_masks(traj, grid, seq.present)
    out = seq.output_frames
    if not masks[j][out].any():
        return False
    grown = ndimage.binary_dilation(masks[j], structure=np.ones((1, 3, 3), bool))
    if (grown & masks[:j].any(axis=0)).any():
        return False
    present_states = traj.in_ego_frame(seq.present)
    for a in range(traj.n_agents):
        spawn = int(np.argmax(traj.alive[a]))
        if spawn <= seq.present or not traj.alive[a].any():
            continue
        r, c = grid.to_cells(present_states[a, spawn, 0], present_states[a, spawn, 1])
        r, c = math.ceil(r - 0.5), math.ceil(c - 0.5)
        if 0 <= r < grid.H and 0 <= c < grid.W:
            others = np.delete(np.arange(traj.n_agents), a)
            if masks[others, spawn - 1, r, c].any():
                return False
    return True


def random_script(rng, grid: BEVGridSpec, seq: SequenceSpec, n_agents=(2, 6), max_tries: int = 400) -> SceneScript:
    """Sample a scene with ``n_agents`` (inclusive range) agents satisfying the module constraints."""
    lo, hi = n_agents
    while True:
        target = int(rng.integers(lo, hi + 1))
        ego = _ego_script(rng, seq.n_frames)
        ego_states = simulate(SceneScript((), ego, seq.n_frames, seq.hz)).ego
        agents, traj = [], None
        for _ in range(max_tries):
            cand = _random_agent(rng, ego_states, grid, seq, traj)
            trial = simulate(SceneScript(tuple(agents) + (cand,), ego, seq.n_frames, seq.hz))
            if _acceptable(trial, grid, seq):
                agents.append(cand)
                traj = trial
                if len(agents) == target:
                    return SceneScript(tuple(agents), ego, seq.n_frames, seq.hz)


def crossing_pairs(traj: Trajectories, grid: BEVGridSpec, seq: SequenceSpec):
    """Agent pairs whose footprints share a cell at different frames (paths cross)."""
    masks = agent_masks(traj, grid, seq.present)
    swept = masks.any(axis=1)
    return [(i, j) for i in range(traj.n_agents) for j in range(i + 1, traj.n_agents)
            if (swept[i] & swept[j]).any()]
