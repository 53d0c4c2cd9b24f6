"""Scene scripts and their kinematic simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import yaw_quat


@dataclass(frozen=True)
class SequenceSpec:
    """Clip timing: ``t_p`` past frames, the present, and ``t_f`` output frames starting at the present."""

    t_p: int = 2
    t_f: int = 4
    hz: float = 2.0

    def __post_init__(self):
        if self.t_p < 0 or self.t_f < 1 or self.hz <= 0:
            raise ConfigError(f"invalid sequence spec t_p={self.t_p} t_f={self.t_f} hz={self.hz}")

    @property
    def n_frames(self):
        return self.t_p + self.t_f

    @property
    def present(self):
        return self.t_p

    @property
    def input_frames(self):
        return list(range(self.t_p + 1))

    @property
    def output_frames(self):
        return list(range(self.t_p, self.t_p + self.t_f))


@dataclass(frozen=True)
class AgentSpec:
    spawn: int
    x: float  # m, world frame
    y: float
    yaw: float  # rad
    length: float  # m
    width: float
    vx: float  # m/s, body frame
    vy: float = 0.0
    yaw_rate: float = 0.0  # rad/s
    color: tuple = (0.8, 0.2, 0.2)

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ConfigError("agent size must be positive")
        if self.spawn < 0:
            raise ConfigError("agent spawn frame must be >= 0")

    @property
    def radius(self):
        return 0.5 * math.hypot(self.length, self.width)


@dataclass(frozen=True)
class EgoSegment:
    frames: int
    v: float  # m/s along ego heading
    yaw_rate: float = 0.0  # rad/s


@dataclass(frozen=True)
class SceneScript:
    agents: tuple
    ego: tuple = ()
    duration: int = 6
    hz: float = 2.0

    def to_dict(self):
        return {
            "duration_frames": self.duration,
            "rate_hz": self.hz,
            "ego": [{"frames": s.frames, "v_mps": s.v, "yaw_rate_radps": s.yaw_rate} for s in self.ego],
            "agents": [
                {"spawn_frame": a.spawn, "x_m": a.x, "y_m": a.y, "yaw_rad": a.yaw, "length_m": a.length,
                 "width_m": a.width, "vx_mps": a.vx, "vy_mps": a.vy, "yaw_rate_radps": a.yaw_rate,
                 "color_rgb": list(a.color)}
                for a in self.agents
            ],
        }

    @classmethod
    def from_dict(cls, d):
        agents = tuple(
            AgentSpec(a["spawn_frame"], a["x_m"], a["y_m"], a["yaw_rad"], a["length_m"], a["width_m"],
                      a["vx_mps"], a["vy_mps"], a["yaw_rate_radps"], tuple(a["color_rgb"]))
            for a in d["agents"]
        )
        ego = tuple(EgoSegment(s["frames"], s["v_mps"], s["yaw_rate_radps"]) for s in d["ego"])
        return cls(agents, ego, int(d["duration_frames"]), float(d["rate_hz"]))


@dataclass
class Trajectories:
    """World-frame states (x, y, yaw) per frame."""

    agents: np.ndarray  # (A, T, 3)
    alive: np.ndarray  # (A, T) bool
    ego: np.ndarray  # (T, 3)
    sizes: np.ndarray  # (A, 2) length, width
    colors: np.ndarray  # (A, 3)
    hz: float = 2.0

    @property
    def n_agents(self):
        return self.agents.shape[0]

    @property
    def n_frames(self):
        return self.ego.shape[0]

    def ego_poses(self):
        """(T, 7) world_from_ego poses: x, y, z, qw, qx, qy, qz."""
        out = np.zeros((self.n_frames, 7))
        out[:, :2] = self.ego[:, :2]
        out[:, 3:] = np.stack([yaw_quat(y) for y in self.ego[:, 2]])
        return out

    def in_ego_frame(self, frame: int):
        """Agent states at every frame expressed in the ego frame of ``frame``."""
        ex, ey, eyaw = self.ego[frame]
        c, s = math.cos(eyaw), math.sin(eyaw)
        dx, dy = self.agents[..., 0] - ex, self.agents[..., 1] - ey
        out = np.empty_like(self.agents)
        out[..., 0] = c * dx + s * dy
        out[..., 1] = -s * dx + c * dy
        out[..., 2] = self.agents[..., 2] - eyaw
        return out


def _integrate(x, y, yaw, vx, vy, yaw_rate, dt, steps):
    states = np.empty((steps, 3))
    for k in range(steps):
        states[k] = x, y, yaw
        c, s = math.cos(yaw), math.sin(yaw)
        x += dt * (c * vx - s * vy)
        y += dt * (s * vx + c * vy)
        yaw += dt * yaw_rate
    return states


def simulate(script: SceneScript) -> Trajectories:
    """Euler integration of body-frame velocities and yaw rates at the script's frame rate.

    Agent poses are the state at frame ``spawn``; the agent is absent before it.
    The ego starts at the world origin facing +x.
    """
    T, dt = script.duration, 1.0 / script.hz
    controls = [(seg.v, seg.yaw_rate) for seg in script.ego for _ in range(seg.frames)]
    controls += [controls[-1] if controls else (0.0, 0.0)] * max(0, T - len(controls))
    ego = np.empty((T, 3))
    x = y = yaw = 0.0
    for k in range(T):
        ego[k] = x, y, yaw
        v, w = controls[k]
        x += dt * v * math.cos(yaw)
        y += dt * v * math.sin(yaw)
        yaw += dt * w
    n = len(script.agents)
    agents = np.zeros((n, T, 3))
    alive = np.zeros((n, T), dtype=bool)
    for i, a in enumerate(script.agents):
        if a.spawn >= T:
            continue
        agents[i, a.spawn:] = _integrate(a.x, a.y, a.yaw, a.vx, a.vy, a.yaw_rate, dt, T - a.spawn)
        alive[i, a.spawn:] = True
    sizes = np.array([[a.length, a.width] for a in script.agents]).reshape(n, 2)
    colors = np.array([a.color for a in script.agents], dtype=np.float64).reshape(n, 3)
    return Trajectories(agents, alive, ego, sizes, colors, script.hz)
