"""Top-level acceptance gates for the whole stack.

Each test encodes one shipping criterion: gradient correctness, advantage
oracle, intervention-arithmetic equivalence, loss decomposition, the metric
fixtures, the scripted-controller traverse, the directional training
comparison on the committed fixture configs, bitwise determinism, and replay
closure over every log the suite produces.
"""

import dataclasses
import math
import time
from pathlib import Path

import numpy as np
import pytest

from colonav.agent import Batch, gae, init_params, log_softmax, ppo_loss
from colonav.config import RunConfig, load_run_config
from colonav.env import EnvConfig
from colonav.geometry import straight_tube
from colonav.hiloop import (
    adjust_reward,
    arbitrate,
    bc_similarity,
    hi_ppo_loss,
    onset_count,
)
from colonav.metrics import ate, compare, security, trimmed_mean_improvement
from colonav.report import analyze_log
from colonav.scope import N_ACTIONS
from colonav.trainer import evaluate, expert_run, replay_all, train

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
TREND_SEEDS = (0, 1, 2)
EVAL_EPISODES = 10
EVAL_SEED_BASE = 1000

# per-segment trajectory errors of the reference comparison (baseline policy
# vs the intervention-trained one), mm
BASELINE_ATE = [4.687, 33.38, 17.97, 9.001, 15.80, 3.984]
TREATED_ATE = [2.353, 16.15, 9.269, 8.348, 8.436, 3.597]
SEGMENT_NAMES = ["Rectum", "Sigmoid", "Descending", "Transverse",
                 "Ascending", "Cecum"]

# logs produced by the traverse/training tests, consumed by replay closure
_PRODUCED_LOGS: list = []


# ---------------------------------------------------------------------------
# shared gradient-check helpers
# ---------------------------------------------------------------------------

def generic_params(seed, obs_dim=5, hidden=8):
    """Init then jolt the weights into generic position.

    A fresh init puts the actor head at gain 0.01, which leaves entropy and
    similarity gradients at the scale of finite-difference roundoff.
    """
    params = init_params(obs_dim, hidden=hidden, n_layers=2, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    params.load_flat(params.flat() + 0.1 * rng.standard_normal(params.flat().size))
    return params


def random_batch(rng, params, n=10, obs_dim=5, engaged_frac=0.5):
    obs = rng.standard_normal((n, obs_dim))
    actions = rng.integers(0, N_ACTIONS, size=n)
    logits, _ = params.actor.forward(obs)
    logp = log_softmax(logits)[np.arange(n), actions]
    logp_old = logp + rng.uniform(-0.05, 0.05, size=n)
    adv = rng.standard_normal(n)
    adv = np.where(np.abs(adv) < 0.2, np.sign(adv) * 0.5 + adv, adv)
    returns = rng.standard_normal(n)
    m = (rng.random(n) < engaged_frac).astype(np.int64)
    expert = np.where(m == 1, actions, -1)
    return Batch(obs, actions, logp_old, adv, returns, m, expert)


def flat_grads(params, grads):
    gws_a, gbs_a = grads["actor"]
    gws_c, gbs_c = grads["critic"]
    return np.concatenate([g.ravel() for g in gws_a + gbs_a + gws_c + gbs_c])


def fd_gradient(params, scalar_fn, h=1e-5):
    base = params.flat()
    g = np.zeros_like(base)
    for i in range(base.size):
        step = h * max(1.0, abs(base[i]))
        vec = base.copy()
        vec[i] = base[i] + step
        params.load_flat(vec)
        up = scalar_fn(params)
        vec[i] = base[i] - step
        params.load_flat(vec)
        down = scalar_fn(params)
        g[i] = (up - down) / (2.0 * step)
    params.load_flat(base)
    return g


def assert_grads_close(fd, an, rel_tol=1e-4, abs_floor=1e-3):
    denom = np.maximum(np.abs(fd), np.abs(an))
    small = denom < 1e-6
    assert np.all(np.abs(fd - an)[small] < abs_floor)
    big = ~small
    rel = np.abs(fd - an)[big] / denom[big]
    assert rel.size == 0 or rel.max() < rel_tol, f"max rel err {rel.max():.3e}"


# ---------------------------------------------------------------------------
# analytic gradients match finite differences
# ---------------------------------------------------------------------------

def test_gradient_suite_matches_finite_differences():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    for instance in range(20):
        params = generic_params(seed=instance)
        batch = random_batch(rng, params)

        # full clipped-surrogate loss (policy + value + entropy)
        _, grads = ppo_loss(params, batch, entropy_coef=0.01, value_coef=0.7,
                            with_grads=True)
        fd = fd_gradient(params, lambda p: ppo_loss(
            p, batch, entropy_coef=0.01, value_coef=0.7).total)
        assert_grads_close(fd, flat_grads(params, grads))

        # value term alone: full weight on the critic, nothing else
        _, grads_v = ppo_loss(params, batch, entropy_coef=0.0, value_coef=1.0,
                              with_grads=True)
        an_v = flat_grads(params, {"actor": grads_v["actor"],
                                   "critic": grads_v["critic"]})
        n_actor = sum(p.size for p in params.actor.params())
        an_v[:n_actor] = 0.0  # the value term cannot touch the actor
        fd_v = fd_gradient(params, lambda p: ppo_loss(p, batch).value)
        assert_grads_close(fd_v, an_v)

        # entropy term isolated by linearity of the combined gradient
        _, g1 = ppo_loss(params, batch, entropy_coef=1.0, value_coef=0.0,
                         with_grads=True)
        _, g0 = ppo_loss(params, batch, entropy_coef=0.0, value_coef=0.0,
                         with_grads=True)
        an_e = flat_grads(params, g1) - flat_grads(params, g0)
        fd_e = fd_gradient(params, lambda p: ppo_loss(p, batch).entropy)
        assert_grads_close(fd_e, an_e)

        # similarity term: weighted difference against the plain loss
        _, _, gh = hi_ppo_loss(params, batch, entropy_coef=0.0,
                               value_coef=0.0, bc_weight=1.0, with_grads=True)
        an_b = flat_grads(params, gh) - flat_grads(params, g0)
        fd_b = fd_gradient(params, lambda p: hi_ppo_loss(
            p, batch, entropy_coef=0.0, value_coef=0.0, bc_weight=1.0)[1])
        assert_grads_close(fd_b, an_b)
    assert time.monotonic() - t0 < 60.0


# ---------------------------------------------------------------------------
# recursive advantage estimator equals brute force
# ---------------------------------------------------------------------------

def brute_force_gae(rewards, values, dones, bootstrap, gamma, lam):
    n = len(rewards)
    nxt = np.append(values[1:], bootstrap)
    deltas = rewards + gamma * nxt * (1.0 - dones) - values
    adv = np.zeros(n)
    for t in range(n):
        coef = 1.0
        for k in range(t, n):
            adv[t] += coef * deltas[k]
            if dones[k]:
                break
            coef *= gamma * lam
    return adv


def test_gae_matches_brute_force_expansion():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 21))
        rewards = rng.standard_normal(n)
        values = rng.standard_normal(n)
        dones = (rng.random(n) < 0.2).astype(float)
        bootstrap = float(rng.standard_normal())
        gamma = float(rng.uniform(0.8, 1.0))
        lam = float(rng.uniform(0.0, 1.0))
        adv, returns = gae(rewards, values, dones, bootstrap, gamma, lam)
        expected = brute_force_gae(rewards, values, dones, bootstrap, gamma, lam)
        assert np.allclose(adv, expected, atol=1e-10)
        assert np.allclose(returns, expected + values, atol=1e-10)


# ---------------------------------------------------------------------------
# intervention arithmetic reproduces the worked examples
# ---------------------------------------------------------------------------

def test_intervention_arithmetic_unit_equivalence():
    # executed action: the operator's while engaged, the agent's otherwise
    assert arbitrate(4, 2, 1) == 2
    assert arbitrate(4, None, 0) == 4
    assert arbitrate(4, 2, 0) == 4
    with pytest.raises(ValueError):
        arbitrate(4, None, 1)

    # onset penalty fires exactly on 0 -> 1 edges
    assert adjust_reward(1.0, 1, 0, -1.0) == 0.0
    assert adjust_reward(1.0, 1, 1, -1.0) == 1.0
    assert adjust_reward(1.0, 0, 0, -1.0) == 1.0
    assert adjust_reward(1.0, 0, 1, -1.0) == 1.0

    # similarity loss worked examples
    uniform, _ = bc_similarity(np.zeros((1, 6)), np.array([3]), np.array([1]))
    assert abs(uniform - math.log(6.0)) < 1e-12
    peaked_logits = np.array([[2.0, 0, 0, 0, 0, 0]])
    peaked, _ = bc_similarity(peaked_logits, np.array([0]), np.array([1]))
    assert abs(peaked - (math.log(math.exp(2.0) + 5.0) - 2.0)) < 1e-12

    # episode-sum identity: total penalty charged == penalty * onset edges
    rng = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        flags = (rng.random(n) < rng.uniform(0.05, 0.9)).astype(int)
        rewards = rng.standard_normal(n)
        penalty = float(-rng.uniform(0.1, 3.0))
        prev = 0
        total = 0.0
        for reward, m in zip(rewards, flags):
            total += adjust_reward(float(reward), int(m), prev, penalty)
            prev = int(m)
        charged = total - float(np.sum(rewards))
        assert abs(charged - penalty * onset_count(flags)) < 1e-12


# ---------------------------------------------------------------------------
# combined loss decomposes exactly
# ---------------------------------------------------------------------------

def test_similarity_weight_decomposition():
    rng = np.random.default_rng(11)
    for trial in range(10):
        params = generic_params(seed=100 + trial)
        batch = random_batch(rng, params, n=16)
        logits, _ = params.actor.forward(batch.obs)
        engaged = np.flatnonzero(batch.m == 1)
        logp = log_softmax(logits)
        mean_ce = float(np.mean(
            [-logp[i, batch.expert_actions[i]] for i in engaged]))
        base, bc0 = hi_ppo_loss(params, batch, bc_weight=0.0)
        assert abs(bc0 - mean_ce) < 1e-12  # reported even when unweighted
        for w in (0.1, 0.5, 2.0):
            parts, bc = hi_ppo_loss(params, batch, bc_weight=w)
            assert abs(bc - mean_ce) < 1e-12
            assert abs((parts.total - base.total) - w * mean_ce) < 1e-12


# ---------------------------------------------------------------------------
# metric fixtures and the reference comparison table
# ---------------------------------------------------------------------------

def test_metric_fixtures_and_reference_table():
    tube = straight_tube(length=100.0, radius=20.0)
    centered = np.array([[0.0, 0.0, z] for z in (5.0, 30.0, 60.0)])
    assert ate(tube, centered).mean_mm < 1e-9

    off = np.array([[4.0, 0.0, 10.0], [0.0, 4.0, 40.0], [-4.0, 0.0, 90.0]])
    err = ate(tube, off)
    assert abs(err.mean_mm - 4.0) < 1e-9 and err.std_mm < 1e-9

    mixed = np.array([[2.0, 0.0, 10.0], [6.0, 0.0, 50.0]])
    err = ate(tube, mixed)
    assert abs(err.mean_mm - 4.0) < 1e-9 and abs(err.std_mm - 2.0) < 1e-9

    assert security(np.full(10, 30.0), np.zeros(10, bool)).score == 1.0
    assert security(np.zeros(10), np.ones(10, bool)).score == 0.0
    wall = np.concatenate([np.full(10, 2.0), np.full(90, 30.0)])
    col = np.zeros(100, bool)
    col[:2] = True
    assert abs(security(wall, col).score - 0.956) < 1e-12

    report = compare(SEGMENT_NAMES, BASELINE_ATE, TREATED_ATE)
    per_seg = {c.segment: c.improvement for c in report.segments}
    assert abs(per_seg["Rectum"] - 0.49797) < 1e-4
    assert abs(per_seg["Sigmoid"] - 0.51618) < 1e-4
    assert abs(per_seg["Transverse"] - 0.07255) < 1e-4
    assert abs(report.mean_improvement - 0.35568) < 1e-4
    trimmed = trimmed_mean_improvement([c.improvement for c in report.segments])
    assert trimmed == report.trimmed_mean_improvement
    assert abs(trimmed * 100.0 - 38.63) < 0.5


# ---------------------------------------------------------------------------
# scripted controller traverses the whole default colon
# ---------------------------------------------------------------------------

def test_expert_traverses_default_colon_securely(tmp_path):
    cfg = RunConfig(algorithm="ppo", seed=0, total_steps=1,
                    env=EnvConfig(max_episode_steps=3000))
    result = expert_run(cfg, tmp_path / "full", n_episodes=1, seed=0)
    summary = result.stats["episode_summaries"][0]
    assert summary["reached_terminal"]
    assert summary["collisions"] == 0
    row = analyze_log(result.log_paths[0])
    assert row.security >= 0.90
    _PRODUCED_LOGS.extend(result.log_paths)

    # straight tube: pure advancing, one step per step_mm of length
    tube = tmp_path / "tube.cfg"
    tube.write_text("[colon]\nturn_radius_mm = 30\nwaypoint_spacing_mm = 25\n\n"
                    "[segment:Tube]\nlength_mm = 100\nradius_min_mm = 20\n"
                    "radius_max_mm = 20\n")
    cfg = RunConfig(algorithm="ppo", seed=0, total_steps=1,
                    colon_file=str(tube),
                    env=EnvConfig(max_episode_steps=200, start_s_mm=0.0))
    result = expert_run(cfg, tmp_path / "tube_run", n_episodes=1, seed=0)
    summary = result.stats["episode_summaries"][0]
    assert summary["steps"] == math.ceil(100.0 / cfg.env.scope.step_mm)
    assert summary["reached_terminal"] and summary["collisions"] == 0
    _PRODUCED_LOGS.extend(result.log_paths)


# ---------------------------------------------------------------------------
# directional training comparison on the committed fixtures
# ---------------------------------------------------------------------------

def load_fixture(name, seed):
    cfg = load_run_config(CONFIG_DIR / f"{name}.json")
    return dataclasses.replace(cfg, seed=seed)


def run_fixture(name, seed, out_root):
    cfg = load_fixture(name, seed)
    result = train(cfg, out_root / name / f"seed{seed}")
    ev = evaluate(result.checkpoint, out_root / name / f"seed{seed}" / "eval",
                  n_episodes=EVAL_EPISODES, seed=EVAL_SEED_BASE + seed)
    return result, ev


@pytest.fixture(scope="module")
def trend_runs(tmp_path_factory):
    """All comparison trainings and evaluations, run once per session."""
    root = tmp_path_factory.mktemp("trend")
    runs = {}
    for fixture in ("rectum_ppo", "rectum_hippo",
                    "descending_ppo", "descending_hippo"):
        per_seed = [run_fixture(fixture, seed, root) for seed in TREND_SEEDS]
        runs[fixture] = per_seed
        for result, ev in per_seed:
            _PRODUCED_LOGS.extend(result.log_paths)
            _PRODUCED_LOGS.extend(ev.log_paths)
    return runs


def eval_means(per_seed):
    cache = {}
    rows = [analyze_log(p, cache) for _, ev in per_seed for p in ev.log_paths]
    return (float(np.mean([r.ate_mean for r in rows])),
            float(np.mean([r.security for r in rows])))


def test_intervention_training_beats_plain_ppo(trend_runs):
    for per_seed in trend_runs.values():
        for result, _ in per_seed:
            assert result.stats["steps_done"] <= 200_000

    rectum_ppo = eval_means(trend_runs["rectum_ppo"])
    rectum_hi = eval_means(trend_runs["rectum_hippo"])
    desc_ppo = eval_means(trend_runs["descending_ppo"])
    desc_hi = eval_means(trend_runs["descending_hippo"])

    assert rectum_hi[0] < rectum_ppo[0]
    assert desc_hi[0] < desc_ppo[0]
    mean_sec_hi = (rectum_hi[1] + desc_hi[1]) / 2.0
    mean_sec_ppo = (rectum_ppo[1] + desc_ppo[1]) / 2.0
    assert mean_sec_hi >= mean_sec_ppo
    assert desc_hi[1] >= 0.90


def test_identical_seeds_are_bitwise_identical(trend_runs, tmp_path):
    cfg = load_fixture("rectum_hippo", TREND_SEEDS[0])
    again = train(cfg, tmp_path / "again")
    first = trend_runs["rectum_hippo"][0][0]
    assert first.checkpoint.read_bytes() == again.checkpoint.read_bytes()
    assert [p.read_bytes() for p in first.log_paths] == \
           [p.read_bytes() for p in again.log_paths]


def test_every_produced_log_replays_without_divergence(trend_runs):
    assert len(_PRODUCED_LOGS) > 0
    reports = replay_all(_PRODUCED_LOGS)
    bad = [r for r in reports if not r.ok]
    assert bad == [], f"replay divergences: {bad[:3]}"
