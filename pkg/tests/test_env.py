"""Environment tests: observations, reward shaping, episode rules."""

import numpy as np
import pytest

from colonav.env import (
    Action,
    EnvConfig,
    NavEnv,
    base_reward,
    next_waypoint_index,
    obs_dim,
    observe,
    ray_directions,
)
from colonav.geometry import build_colon, default_segments, straight_tube
from colonav.scope import make_scope

TUBE = straight_tube(length=100.0, radius=20.0)


def test_obs_dim_and_vector_layout():
    assert obs_dim(9) == 17
    env = NavEnv(TUBE, EnvConfig())
    obs = env.reset()
    vec = obs.vector()
    assert vec.shape == (17,)
    assert np.array_equal(vec[:9], obs.ray_depths)
    assert np.array_equal(vec[9:12], obs.waypoint_dir)
    assert vec[12] == obs.waypoint_dist
    assert np.array_equal(vec[13:], obs.bend_state)


def test_ray_directions_cone_geometry():
    f = np.array([0.0, 0.0, 1.0])
    u = np.array([1.0, 0.0, 0.0])
    r = np.array([0.0, 1.0, 0.0])
    dirs = ray_directions(f, u, r, count=9, half_angle_deg=60.0)
    assert dirs.shape == (9, 3)
    assert np.allclose(dirs[0], f, atol=1e-12)
    for d in dirs:
        assert abs(np.linalg.norm(d) - 1.0) < 1e-12
    # peripheral rays sit exactly at the half angle
    for d in dirs[1:]:
        assert abs(d @ f - np.cos(np.radians(60.0))) < 1e-12
    # first peripheral ray tilts toward up, third toward right
    assert dirs[1] @ u > 0.5
    assert dirs[3] @ r > 0.5


def test_open_tube_center_ray_sees_no_wall():
    env = NavEnv(TUBE, EnvConfig())
    obs = env.reset()
    assert obs.ray_depths[0] == 1.0


def test_ray_depth_on_wall_facing_scope():
    # tip offset 10 mm toward the wall (radius 20), heading turned 90 degrees
    # to face it: the center ray must report 10 mm / 100 mm = 0.1.
    cfg = EnvConfig()
    scope = make_scope(TUBE, s=50.0, radial_offset=np.array([0.0, 10.0]),
                       bend_deg=np.array([0.0, 0.0, 0.0, 90.0]), cfg=cfg.scope)
    obs = observe(TUBE, scope, cfg)
    assert abs(obs.ray_depths[0] - 0.1) < 1e-9


def test_waypoint_direction_straight_ahead():
    env = NavEnv(TUBE, EnvConfig())
    obs = env.reset()
    assert np.allclose(obs.waypoint_dir, [0.0, 0.0, 1.0], atol=1e-9)
    assert abs(obs.waypoint_dist - 23.0 / 100.0) < 1e-9  # s=2 start, waypoint at 25


def test_observe_raises_on_collided_scope():
    cfg = EnvConfig()
    scope = make_scope(TUBE, s=50.0, radial_offset=np.array([25.0, 0.0]),
                       cfg=cfg.scope)
    with pytest.raises(ValueError):
        observe(TUBE, scope, cfg)


def test_next_waypoint_index_brackets():
    model = build_colon(default_segments(), seed=0)
    assert next_waypoint_index(model, 0.0) == 0
    last_s = model.waypoints[-1][0]
    assert next_waypoint_index(model, last_s) == len(model.waypoints)
    mid_s = model.waypoints[3][0]
    assert next_waypoint_index(model, mid_s - 0.5) == 3
    assert next_waypoint_index(model, mid_s) == 4


def test_base_reward_aligned_no_movement():
    cfg = EnvConfig()
    scope = make_scope(TUBE, s=10.0, cfg=cfg.scope)
    r = base_reward(TUBE, scope, scope, cfg)
    assert abs(r - 0.1) < 1e-9


def test_base_reward_aligned_advance():
    cfg = EnvConfig()
    prev = make_scope(TUBE, s=10.0, cfg=cfg.scope)
    cur = prev.copy()
    cur.tip_position = prev.tip_position + 3.0 * prev.tip_heading
    r = base_reward(TUBE, prev, cur, cfg)
    assert abs(r - 1.1) < 1e-9


def test_base_reward_waypoint_bonus_fires_once():
    cfg = EnvConfig(start_s_mm=0.0)
    env = NavEnv(TUBE, cfg)
    env.reset()
    rewards, indices = [], []
    done = False
    while not done:
        res = env.step(Action.ADVANCE)
        rewards.append(res.reward)
        indices.append(res.waypoint_index)
        done = res.terminated or res.truncated
    assert res.reached_terminal
    assert len(rewards) == 34  # ceil(100 / 3)
    # waypoints sit at 25/50/75/100 -> exactly four crossings
    crossings = [i for i in range(len(indices))
                 if indices[i] > (indices[i - 1] if i else 0)]
    assert crossings == [8, 16, 24, 33]
    step = cfg.scope.step_mm
    for i, r in enumerate(rewards):
        if i in crossings:
            # position score still measures against the waypoint being
            # crossed, plus alignment 0.1 and the one-time bonus 1.0
            s_w = TUBE.waypoints[indices[i] - 1][0]
            d_prev = abs(s_w - step * i)
            d_cur = abs(step * (i + 1) - s_w)
            expect = (d_prev - d_cur) / step + 0.1 + 1.0
        else:
            expect = 1.1
        assert abs(r - expect) < 1e-9, (i, r)


def test_reward_bounded_under_defaults():
    rng = np.random.default_rng(3)
    model = build_colon(default_segments(), seed=2)
    cfg = EnvConfig(terminate_on_collision=False)
    env = NavEnv(model, cfg)
    env.reset(rng=rng)
    for _ in range(300):
        res = env.step(Action(int(rng.integers(0, 6))))
        assert abs(res.reward) <= 2.5 + 1e-9
        if res.terminated or res.truncated:
            env.reset(rng=rng)


def test_position_score_telescopes_within_waypoint_interval():
    cfg = EnvConfig(start_s_mm=0.0, w_ori=0.0, waypoint_bonus=0.0)
    env = NavEnv(TUBE, cfg)
    env.reset()
    first_wp = TUBE.waypoints[0][1]
    d0 = float(np.linalg.norm(first_wp - env.scope.tip_position))
    total = 0.0
    for _ in range(8):  # stays inside the first 25 mm interval
        res = env.step(Action.ADVANCE)
        total += res.reward
    d1 = float(np.linalg.norm(first_wp - env.scope.tip_position))
    assert abs(total - (d0 - d1) / cfg.scope.step_mm) < 1e-9


def test_collision_terminates_episode():
    cfg = EnvConfig()
    env = NavEnv(TUBE, cfg)
    env.reset()
    # bend hard to the side and drive into the wall
    res = None
    for _ in range(60):
        res = env.step(Action.BEND_RIGHT if env.scope.bend_deg[3] < 90 else Action.ADVANCE)
        if res.terminated or res.truncated:
            break
    assert res.terminated and res.report.collided
    assert res.observation is None
    assert env.done


def test_blocked_mode_keeps_position_and_continues():
    cfg = EnvConfig(terminate_on_collision=False)
    env = NavEnv(TUBE, cfg)
    env.reset()
    blocked_seen = False
    for _ in range(80):
        before = env.scope.tip_position.copy()
        res = env.step(Action.BEND_RIGHT if env.scope.bend_deg[3] < 90 else Action.ADVANCE)
        if res.blocked:
            blocked_seen = True
            assert res.report.collided
            assert not res.terminated
            assert np.allclose(env.scope.tip_position, before, atol=1e-12)
            assert res.observation is not None
            break
    assert blocked_seen


def test_truncation_at_step_cap():
    cfg = EnvConfig(max_episode_steps=5)
    env = NavEnv(TUBE, cfg)
    env.reset()
    res = None
    for _ in range(5):
        res = env.step(Action.BEND_UP)
    assert res.truncated and not res.terminated
    assert env.done


def test_randomized_reset_is_seeded_and_in_lumen():
    cfg = EnvConfig(init_offset_frac=0.5, init_bend_deg=45.0)
    env = NavEnv(TUBE, cfg)
    obs_a = env.reset(rng=np.random.default_rng(77))
    start_a = env.start_state
    obs_b = env.reset(rng=np.random.default_rng(77))
    start_b = env.start_state
    assert start_a == start_b
    assert np.array_equal(obs_a.vector(), obs_b.vector())
    assert not env.last_report.collided
    obs_c = env.reset(rng=np.random.default_rng(78))
    assert not np.array_equal(obs_a.vector(), obs_c.vector())


def test_reset_with_pinned_start_reproduces_pose():
    cfg = EnvConfig(init_offset_frac=0.5, init_bend_deg=45.0)
    env = NavEnv(TUBE, cfg)
    env.reset(rng=np.random.default_rng(5))
    pinned = env.start_state
    pos = env.scope.tip_position.copy()
    heading = env.scope.tip_heading.copy()
    env2 = NavEnv(TUBE, cfg)
    env2.reset(start=pinned)
    assert np.allclose(env2.scope.tip_position, pos, atol=1e-12)
    assert np.allclose(env2.scope.tip_heading, heading, atol=1e-12)


def test_observation_translation_invariance():
    cfg = EnvConfig()
    offset = np.array([500.0, -250.0, 80.0])
    moved = TUBE.translated(offset)
    scope_a = make_scope(TUBE, s=40.0, radial_offset=np.array([5.0, -3.0]),
                         bend_deg=np.array([10.0, 0.0, 5.0, 0.0]), cfg=cfg.scope)
    scope_b = make_scope(moved, s=40.0, radial_offset=np.array([5.0, -3.0]),
                         bend_deg=np.array([10.0, 0.0, 5.0, 0.0]), cfg=cfg.scope)
    obs_a = observe(TUBE, scope_a, cfg)
    obs_b = observe(moved, scope_b, cfg)
    assert np.allclose(obs_a.vector(), obs_b.vector(), atol=1e-9)
