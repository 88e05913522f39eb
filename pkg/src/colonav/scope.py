"""Discrete colonoscope kinematics and the farthest-point scripted expert.

Six actions: four bend directions articulate the tip (distributed over a
small chain of bones, capped at a max angle), advance/withdraw translate the
tip along its heading. The heading is the local path tangent offset by the
net pitch/yaw of the bends, a deliberate kinematic simplification of a
continuum scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .geometry import ColonModel, ProximityReport


class Action(IntEnum):
    """Stable 0..5 encoding; the wire protocol and logs use these indices."""

    BEND_UP = 0
    BEND_DOWN = 1
    BEND_LEFT = 2
    BEND_RIGHT = 3
    ADVANCE = 4
    WITHDRAW = 5


N_ACTIONS = 6
BEND_ACTIONS = (Action.BEND_UP, Action.BEND_DOWN, Action.BEND_LEFT, Action.BEND_RIGHT)
# direction name per bend action index, order matches Action 0..3
BEND_DIRECTIONS = ("up", "down", "left", "right")
_OPPOSITE = {Action.BEND_UP: Action.BEND_DOWN, Action.BEND_DOWN: Action.BEND_UP,
             Action.BEND_LEFT: Action.BEND_RIGHT, Action.BEND_RIGHT: Action.BEND_LEFT}


@dataclass(frozen=True)
class ScopeConfig:
    """Kinematic constants; defaults give full articulation in 18 bend steps."""

    step_mm: float = 3.0
    bend_delta_deg: float = 5.0
    bend_max_deg: float = 90.0
    n_bones: int = 5
    trail_maxlen: int = 4096


@dataclass
class ScopeState:
    """Tip pose plus articulation state.

    bend_deg holds (up, down, left, right) angles in [0, bend_max].
    bone_deg is the per-bone split, shape (4, n_bones); each row sums to the
    direction's bend angle. trail keeps recent tip positions for logging and
    stuck detection.
    """

    tip_position: np.ndarray
    tip_heading: np.ndarray
    insertion_depth: float
    bend_deg: np.ndarray
    bone_deg: np.ndarray
    trail: list = field(default_factory=list)

    def copy(self) -> "ScopeState":
        return ScopeState(self.tip_position.copy(), self.tip_heading.copy(),
                          self.insertion_depth, self.bend_deg.copy(),
                          self.bone_deg.copy(), list(self.trail))


def tip_frame(model: ColonModel, position: np.ndarray, bend_deg: np.ndarray):
    """Orthonormal tip frame (forward, up, right) and nearest arclength.

    The base frame is the transported centerline frame at the nearest
    arclength; net pitch = up-down, net yaw = right-left rotate it.
    """
    s, _, _ = model.nearest(position)
    _, t, n, b = model.frame_at(s)
    pitch = math.radians(bend_deg[0] - bend_deg[1])
    yaw = math.radians(bend_deg[3] - bend_deg[2])
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    # yaw about n, then pitch about the yawed right axis
    f1 = cy * t + sy * b
    r1 = cy * b - sy * t
    forward = cp * f1 + sp * n
    up = cp * n - sp * f1
    return forward, up, r1, s


def make_scope(model: ColonModel, s: float = 0.0, radial_offset: np.ndarray = None,
               bend_deg: np.ndarray = None, cfg: ScopeConfig = ScopeConfig()) -> ScopeState:
    """Scope at arclength s, optionally offset from the centerline and pre-bent."""
    p, _, n, b = model.frame_at(s)
    pos = p.astype(float).copy()
    if radial_offset is not None:
        pos = pos + radial_offset[0] * n + radial_offset[1] * b
    bends = np.zeros(4) if bend_deg is None else np.asarray(bend_deg, dtype=float).copy()
    bones = np.repeat(bends[:, None] / cfg.n_bones, cfg.n_bones, axis=1)
    forward, _, _, s_star = tip_frame(model, pos, bends)
    state = ScopeState(pos, forward, float(s_star), bends, bones)
    state.trail.append(pos.copy())
    return state


def apply_action(model: ColonModel, scope: ScopeState, action: Action,
                 cfg: ScopeConfig = ScopeConfig(),
                 proximity_threshold: float = 5.0):
    """Apply one discrete action; returns (new_state, proximity_report).

    Bends first unwind the opposing direction, then build their own angle,
    clamped to bend_max and split equally over the bones. Advance/withdraw
    translate by +/- step_mm along the current heading. Never raises for
    in-range states: saturation is a silent clamp.
    """
    new = scope.copy()
    act = Action(action)
    if act in BEND_ACTIONS:
        delta = cfg.bend_delta_deg
        opp = _OPPOSITE[act]
        unwound = min(new.bend_deg[opp], delta)
        new.bend_deg[opp] -= unwound
        grow = delta - unwound
        new.bend_deg[act] = min(new.bend_deg[act] + grow, cfg.bend_max_deg)
        new.bone_deg = np.repeat(new.bend_deg[:, None] / cfg.n_bones, cfg.n_bones, axis=1)
        forward, _, _, s = tip_frame(model, new.tip_position, new.bend_deg)
        new.tip_heading = forward
        new.insertion_depth = s
    else:
        sign = 1.0 if act == Action.ADVANCE else -1.0
        new.tip_position = new.tip_position + sign * cfg.step_mm * new.tip_heading
        forward, _, _, s = tip_frame(model, new.tip_position, new.bend_deg)
        new.tip_heading = forward
        new.insertion_depth = s
    new.trail.append(new.tip_position.copy())
    if len(new.trail) > cfg.trail_maxlen:
        del new.trail[0]
    report = model.wall_distance(new.tip_position, proximity_threshold)
    return new, report


def farthest_direction(obs, depth_threshold: float = 0.3):
    """Index of the deepest ray if it clears the threshold, else None.

    Accepts an Observation or a bare depth array. Ties break toward the
    smallest index, so the center ray (index 0) wins over equally deep
    peripheral rays.
    """
    depths = np.asarray(getattr(obs, "ray_depths", obs), dtype=float)
    idx = int(np.argmax(depths))  # argmax returns the first max: smallest index
    if depths[idx] >= depth_threshold:
        return idx
    return None


def ray_to_bend_action(ray_index: int) -> Action:
    """Bend action steering toward an off-center ray.

    Peripheral rays sit at azimuths of 45 deg * (index-1), measured from the
    tip's up axis toward its right axis; diagonals round clockwise to the
    nearest cardinal direction.
    """
    az = (ray_index - 1) * 45.0
    card = int(((az + 45.0) // 90.0)) % 4  # 0 up, 1 right, 2 down, 3 left
    return (Action.BEND_UP, Action.BEND_RIGHT, Action.BEND_DOWN, Action.BEND_LEFT)[card]


def expert_step(model: ColonModel, scope: ScopeState, observation,
                cfg: ScopeConfig = ScopeConfig(),
                depth_threshold: float = 0.3) -> Action:
    """Farthest-point controller used as the scripted operator.

    Deepest ray at the center cell -> advance. Deepest ray off-center ->
    single bend toward it. No ray clears the threshold -> probe the bend
    directions in fixed order (up, right, down, left), skipping saturated
    ones; withdraw once every direction is fully bent.
    """
    idx = farthest_direction(observation.ray_depths, depth_threshold)
    if idx is not None:
        if idx == 0:
            return Action.ADVANCE
        return ray_to_bend_action(idx)
    probe_order = (Action.BEND_UP, Action.BEND_RIGHT, Action.BEND_DOWN, Action.BEND_LEFT)
    for act in probe_order:
        if scope.bend_deg[act] < cfg.bend_max_deg - 1e-9:
            return act
    return Action.WITHDRAW
