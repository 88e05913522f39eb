"""Navigation environment: ray-cast observations, waypoint reward, episode loop.

Observations are geometric (a forward cone of wall distances plus waypoint
and articulation state) rather than rendered images. Raw observations are
produced here; running normalization lives with the agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ColonModel, ProximityReport
from .scope import Action, ScopeConfig, ScopeState, apply_action, make_scope, tip_frame

OBS_RAYS_DEFAULT = 9


@dataclass(frozen=True)
class Observation:
    """Geometric observation in the tip frame.

    ray_depths: K normalized cone distances in [0,1] (center ray first).
    waypoint_dir: unit vector to the next waypoint in (right, up, forward)
    tip coordinates; zero vector when standing on the waypoint.
    waypoint_dist: clamped distance / dist_norm. bend_state: four bend angles
    normalized by the bend cap.
    """

    ray_depths: np.ndarray
    waypoint_dir: np.ndarray
    waypoint_dist: float
    bend_state: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.ray_depths, self.waypoint_dir,
                               [self.waypoint_dist], self.bend_state])


def obs_dim(ray_count: int = OBS_RAYS_DEFAULT) -> int:
    return ray_count + 3 + 1 + 4


@dataclass(frozen=True)
class EnvConfig:
    """Environment constants: sensing, reward weights, episode rules."""

    ray_count: int = OBS_RAYS_DEFAULT
    cone_half_angle_deg: float = 60.0
    max_range_mm: float = 100.0
    proximity_threshold_mm: float = 5.0
    dist_norm_mm: float = 100.0
    w_pos: float = 1.0
    w_ori: float = 0.1
    waypoint_bonus: float = 1.0
    max_episode_steps: int = 3000
    terminate_on_collision: bool = True
    start_s_mm: float = 2.0
    init_offset_frac: float = 0.0
    init_bend_deg: float = 0.0
    scope: ScopeConfig = field(default_factory=ScopeConfig)


def ray_directions(forward, up, right, count: int, half_angle_deg: float) -> np.ndarray:
    """Center ray plus (count-1) rays on the cone at the half angle.

    Peripheral azimuths start at the up axis and step clockwise toward right.
    """
    dirs = [forward]
    alpha = math.radians(half_angle_deg)
    ca, sa = math.cos(alpha), math.sin(alpha)
    for k in range(count - 1):
        az = 2 * math.pi * k / (count - 1)
        dirs.append(ca * forward + sa * (math.cos(az) * up + math.sin(az) * right))
    return np.array(dirs)


def next_waypoint_index(model: ColonModel, s: float) -> int:
    """First waypoint strictly ahead of arclength s; len(waypoints) when past all."""
    lo, hi = 0, len(model.waypoints)
    while lo < hi:
        mid = (lo + hi) // 2
        if model.waypoints[mid][0] <= s + 1e-9:
            lo = mid + 1
        else:
            hi = mid
    return lo


def observe(model: ColonModel, scope: ScopeState, cfg: EnvConfig = EnvConfig()) -> Observation:
    """Ray-cast cone depths plus waypoint and bend state at the current tip.

    Raises if the tip is already outside the lumen; the caller must terminate
    the episode before observing again.
    """
    report = model.wall_distance(scope.tip_position, cfg.proximity_threshold_mm)
    if report.collided:
        raise ValueError("cannot observe a collided scope; episode must end first")
    forward, up, right, s = tip_frame(model, scope.tip_position, scope.bend_deg)
    dirs = ray_directions(forward, up, right, cfg.ray_count, cfg.cone_half_angle_deg)
    hits = model.cast_rays(scope.tip_position, dirs, max_range=cfg.max_range_mm)
    depths = np.clip(hits / cfg.max_range_mm, 0.0, 1.0)

    wp_idx = next_waypoint_index(model, s)
    if wp_idx >= len(model.waypoints):
        wp_idx = len(model.waypoints) - 1
    wp_s, wp_pos = model.waypoints[wp_idx]
    rel = wp_pos - scope.tip_position
    dist = float(np.linalg.norm(rel))
    if dist > 1e-12:
        unit = rel / dist
        wp_dir = np.array([unit @ right, unit @ up, unit @ forward])
    else:
        wp_dir = np.zeros(3)
    wp_dist = min(dist, cfg.dist_norm_mm) / cfg.dist_norm_mm
    bend_state = scope.bend_deg / cfg.scope.bend_max_deg
    return Observation(depths, wp_dir, wp_dist, bend_state.copy())


def base_reward(model: ColonModel, prev: ScopeState, cur: ScopeState,
                cfg: EnvConfig = EnvConfig()) -> float:
    """Waypoint-progress shaping: position score + orientation score + bonus.

    Position: drop in Euclidean distance to the waypoint that was next before
    the step, scaled by the per-step advance. Orientation: cosine between the
    new heading and the direction to the (possibly new) next waypoint. Bonus
    fires once per waypoint crossing, detected by arclength.
    """
    prev_s, _, _ = model.nearest(prev.tip_position)
    cur_s, _, _ = model.nearest(cur.tip_position)
    idx_prev = next_waypoint_index(model, prev_s)
    idx_cur = next_waypoint_index(model, cur_s)

    target = model.waypoints[min(idx_prev, len(model.waypoints) - 1)]
    d_prev = float(np.linalg.norm(target[1] - prev.tip_position))
    d_cur = float(np.linalg.norm(target[1] - cur.tip_position))
    r = cfg.w_pos * (d_prev - d_cur) / cfg.scope.step_mm

    if idx_cur < len(model.waypoints):
        rel = model.waypoints[idx_cur][1] - cur.tip_position
        norm = float(np.linalg.norm(rel))
        align = 1.0 if norm < 1e-12 else float(cur.tip_heading @ (rel / norm))
    else:
        align = 1.0  # past the terminal waypoint: aligned by convention
    r += cfg.w_ori * align

    if idx_cur > idx_prev:
        r += cfg.waypoint_bonus
    return r


@dataclass
class StepRecord:
    """Per-step facts the detectors and logs need."""

    s: float
    collided: bool
    wall_distance: float


@dataclass
class StepResult:
    observation: Observation | None
    reward: float
    terminated: bool
    truncated: bool
    report: ProximityReport
    s: float
    waypoint_index: int
    waypoints_total: int
    reached_terminal: bool
    blocked: bool


class NavEnv:
    """Episode wrapper around the colon model and scope kinematics.

    Owns the scope state, waypoint bookkeeping, termination rules, and the
    per-step records consumed by the stuck detector and episode logs.
    """

    def __init__(self, model: ColonModel, cfg: EnvConfig = EnvConfig()):
        self.model = model
        self.cfg = cfg
        self.scope: ScopeState | None = None
        self.steps = 0
        self.records: list[StepRecord] = []
        self.last_report: ProximityReport | None = None
        self.current_s = 0.0
        self.done = True
        self.start_state: dict | None = None

    def reset(self, rng: np.random.Generator | None = None,
              start: dict | None = None) -> Observation:
        """Start an episode; `start` pins the pose explicitly (used by replay)."""
        cfg = self.cfg
        if start is not None:
            pos = np.asarray(start["pos"], dtype=float)
            bends = np.asarray(start["bend_deg"], dtype=float)
            self.scope = make_scope(self.model, 0.0, None, bends, cfg.scope)
            self.scope.tip_position = pos.copy()
            forward, _, _, s = tip_frame(self.model, pos, bends)
            self.scope.tip_heading = forward
            self.scope.insertion_depth = float(s)
            self.scope.trail = [pos.copy()]
        else:
            offset = None
            bends = None
            if rng is not None and (cfg.init_offset_frac > 0 or cfg.init_bend_deg > 0):
                radius = float(self.model.radius_at(cfg.start_s_mm))
                mag = rng.uniform(0.0, cfg.init_offset_frac * radius)
                ang = rng.uniform(0.0, 2 * math.pi)
                offset = np.array([mag * math.cos(ang), mag * math.sin(ang)])
                bends = rng.uniform(0.0, cfg.init_bend_deg, size=4)
            self.scope = make_scope(self.model, cfg.start_s_mm, offset, bends, cfg.scope)
        self.steps = 0
        self.records = []
        self.done = False
        self.current_s = self.scope.insertion_depth
        self.last_report = self.model.wall_distance(self.scope.tip_position,
                                                    cfg.proximity_threshold_mm)
        self.start_state = {
            "pos": [float(x) for x in self.scope.tip_position],
            "bend_deg": [float(x) for x in self.scope.bend_deg],
        }
        return observe(self.model, self.scope, cfg)

    def step(self, action: Action) -> StepResult:
        """Apply an action, score it, and update episode bookkeeping."""
        assert not self.done, "step() after episode end"
        cfg = self.cfg
        prev = self.scope
        prev_s = self.current_s
        new_scope, report = apply_action(self.model, prev, action, cfg.scope,
                                         cfg.proximity_threshold_mm)
        blocked = False
        if report.collided and not cfg.terminate_on_collision:
            # wall contact blocks the move instead of ending the episode
            blocked = True
            kept = prev.copy()
            kept.trail.append(kept.tip_position.copy())
            new_scope = kept
        self.scope = new_scope
        self.current_s = new_scope.insertion_depth
        reward = base_reward(self.model, prev, new_scope, cfg)

        idx_prev = next_waypoint_index(self.model, prev_s)
        idx_cur = next_waypoint_index(self.model, self.current_s)
        reached_terminal = idx_cur >= len(self.model.waypoints)

        self.steps += 1
        terminated = reached_terminal or (report.collided and cfg.terminate_on_collision)
        truncated = (not terminated) and self.steps >= cfg.max_episode_steps
        self.done = terminated or truncated
        self.records.append(StepRecord(self.current_s, report.collided,
                                       report.wall_distance))
        self.last_report = report

        obs = None
        if not (report.collided and cfg.terminate_on_collision):
            obs = observe(self.model, self.scope, cfg)
        return StepResult(
            observation=obs, reward=reward, terminated=terminated,
            truncated=truncated, report=report, s=self.current_s,
            waypoint_index=min(idx_cur, len(self.model.waypoints)),
            waypoints_total=len(self.model.waypoints),
            reached_terminal=reached_terminal, blocked=blocked,
        )
