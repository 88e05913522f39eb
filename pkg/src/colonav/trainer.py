"""Training, evaluation, and replay pipelines.

train() owns the single stepping context: environment, policy, intervention
source, rollout buffer, and episode logs all advance in one thread. All
randomness flows from one seed through named SeedSequence children, so a rerun
with the same config produces byte-identical artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import (RolloutBuffer, Trainer, Transition, init_params,
                    log_softmax, sample_action)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, canonical_hash
from .env import EnvConfig, NavEnv, obs_dim
from .episode_log import EpisodeLogWriter, read_episode_log
from .geometry import SegmentSpec, build_colon
from .hiloop import (InterventionState, QueueHumanSource,
                     ScriptedExpertSource, adjust_reward, hi_ppo_loss,
                     resolve_step)
from .scope import Action, ScopeConfig, expert_step


class TrainingAborted(RuntimeError):
    """Raised when an update produced a non-finite loss; a checkpoint of the
    last good parameters has already been written."""


# ---------------------------------------------------------------------------
# resolved-config plumbing (logs and checkpoints embed resolved dicts)
# ---------------------------------------------------------------------------

def resolved_model(resolved: dict):
    c = resolved["colon"]
    specs = [
        SegmentSpec(s["name"], float(s["length_mm"]),
                    tuple((float(f), d, float(a)) for f, d, a in s["curvature"]),
                    tuple(float(r) for r in s["radius_range_mm"]))
        for s in c["segments"]
    ]
    return build_colon(specs, seed=resolved["colon_seed"],
                       turn_radius=c["turn_radius_mm"],
                       waypoint_spacing=c["waypoint_spacing_mm"])


def resolved_env_cfg(resolved: dict) -> EnvConfig:
    env_d = dict(resolved["env"])
    scope = ScopeConfig(**env_d.pop("scope"))
    return EnvConfig(scope=scope, **env_d)


def restrict_resolved(resolved: dict, segments) -> dict:
    """Derived config containing only the named segments."""
    wanted = list(segments)
    out = copy.deepcopy(resolved)
    known = {s["name"] for s in out["colon"]["segments"]}
    missing = [n for n in wanted if n not in known]
    if missing:
        raise ValueError(f"unknown segments: {missing}")
    keep = set(wanted)
    out["colon"]["segments"] = [s for s in out["colon"]["segments"]
                                if s["name"] in keep]
    out["segments"] = wanted
    return out


def _make_source(cfg: RunConfig):
    if cfg.algorithm != "hi-ppo" or cfg.intervention_source == "none":
        return None
    if cfg.intervention_source == "scripted":
        return ScriptedExpertSource(cfg.hi)
    return QueueHumanSource(cfg.hi)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: Path
    checkpoint: Path
    log_paths: list
    stats: dict


def _policy_forward(params, vec):
    """Logits and value for one raw observation, without normalizer updates."""
    x = params.normalizer.normalize(vec) if params.normalize_obs else np.asarray(vec, dtype=float)
    logits, _ = params.actor.forward(x)
    value, _ = params.critic.forward(x)
    return x, logits[0], float(value[0, 0])


def _snapshot(cfg, env, model, obs, res, episode, step_i, action, m, reward,
              steps_done, ep_reward, ep_collisions):
    scope = env.scope
    return {
        "episode": episode, "step": step_i, "steps_done": steps_done,
        "total_steps": cfg.total_steps, "action": int(action),
        "pos": [float(v) for v in scope.tip_position],
        "heading": [float(v) for v in scope.tip_heading],
        "bend_deg": [float(v) for v in scope.bend_deg],
        "s": float(res.s), "segment": model.segment_name_at(res.s),
        "radius_mm": float(model.radius_at(res.s)),
        "total_length_mm": float(model.total_length),
        "waypoint_index": res.waypoint_index,
        "waypoints_total": res.waypoints_total,
        "ray_depths": ([float(v) for v in obs.ray_depths] if obs is not None else []),
        "wall_distance": float(res.report.wall_distance),
        "collided": bool(res.report.collided),
        "m": int(m), "reward": float(reward),
        "ep_reward": float(ep_reward), "ep_collisions": int(ep_collisions),
        "terminated": bool(res.terminated), "truncated": bool(res.truncated),
        "reached_terminal": bool(res.reached_terminal),
    }


def train(cfg: RunConfig, out_dir: str | Path, source=None, on_step=None,
          on_episode_end=None, should_stop=None) -> TrainResult:
    """Run the full training pipeline and write logs/checkpoints/stats."""
    t0 = time.monotonic()
    out = Path(out_dir)
    logs_dir = out / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    resolved = cfg.resolved()
    chash = canonical_hash(resolved)
    (out / "config_resolved.json").write_text(
        json.dumps({"config": resolved, "config_hash": chash},
                   sort_keys=True, indent=2) + "\n")

    model = resolved_model(resolved)
    env = NavEnv(model, cfg.env)
    dim = obs_dim(cfg.env.ray_count)
    ss = np.random.SeedSequence(cfg.seed)
    ss_init, ss_env, ss_act, ss_shuf = ss.spawn(4)
    params = init_params(dim, cfg.hidden_size, cfg.n_layers, seed=ss_init,
                         normalize_obs=cfg.normalize_obs)
    trainer = Trainer(params, cfg.update)
    rng_env = np.random.default_rng(ss_env)
    rng_act = np.random.default_rng(ss_act)
    rng_shuf = np.random.default_rng(ss_shuf)
    buffer = RolloutBuffer(cfg.buffer_size, dim)

    hi = cfg.algorithm == "hi-ppo"
    if source is None:
        source = _make_source(cfg)

    loss_fn = None
    if hi:
        u = cfg.update

        def loss_fn(params, batch, with_grads=True):
            return hi_ppo_loss(params, batch, u.clip_eps, u.entropy_coef,
                               u.value_coef, cfg.hi.bc_weight, with_grads=True)

    seg_names = [sg.name for sg in model.segments]
    steps_done = 0
    episode = 0
    updates = 0
    update_history = []
    episode_summaries = []
    log_paths = []

    def save(path, meta_extra=None):
        meta = {"config": resolved, "steps_done": steps_done,
                "updates": updates, "episodes": episode}
        meta.update(meta_extra or {})
        save_checkpoint(path, params, chash, meta)

    while steps_done < cfg.total_steps and not (should_stop and should_stop()):
        obs = env.reset(rng_env)
        state = InterventionState()
        if source is not None:
            source.reset()
        log_path = logs_dir / f"ep_{episode:05d}.jsonl"
        logger = EpisodeLogWriter(log_path, resolved, chash, cfg.seed, episode,
                                  cfg.algorithm, "train", seg_names,
                                  env.start_state, len(model.waypoints))
        log_paths.append(log_path)
        ep_reward = 0.0
        ep_collisions = 0
        step_i = 0
        done = False
        while not done:
            vec = obs.vector()
            if cfg.normalize_obs:
                params.normalizer.update(vec)
            x, logits, value = _policy_forward(params, vec)
            a_agent = sample_action(logits, rng_act)
            executed, op_action, m, m_prev = resolve_step(
                source if hi else None, state, env, env.scope, obs, step_i, a_agent)
            res = env.step(Action(executed))
            reward = res.reward
            if hi:
                reward = adjust_reward(reward, m, m_prev, cfg.hi.intervention_penalty)

            reward_buf = reward
            done_flag = res.terminated
            if res.truncated and res.observation is not None:
                # bootstrap the cut-off tail so the value target stays unbiased
                _, _, v_next = _policy_forward(params, res.observation.vector())
                reward_buf = reward + cfg.gamma * v_next
                done_flag = True
            buffer.add(Transition(x, executed, logits,
                                  float(log_softmax(logits)[executed]),
                                  op_action, m, reward_buf, value, done_flag))
            logger.step(step_i, env.scope.tip_position, res.s, executed, m,
                        reward, value, res.report.wall_distance,
                        res.report.collided, model.segment_name_at(res.s),
                        res.waypoint_index)
            ep_reward += reward
            ep_collisions += int(res.report.collided)
            steps_done += 1
            step_i += 1

            if buffer.full:
                bootstrap = 0.0
                if not done_flag and res.observation is not None:
                    _, _, bootstrap = _policy_forward(params, res.observation.vector())
                buffer.compute_advantages(bootstrap, cfg.gamma, cfg.gae_lambda)
                backup = params.copy()
                try:
                    stats = trainer.update(buffer, rng_shuf, loss_fn)
                except FloatingPointError as exc:
                    save_checkpoint(out / "ckpt_abort.bin", backup, chash,
                                    {"config": resolved, "steps_done": steps_done,
                                     "updates": updates, "episodes": episode,
                                     "aborted": True})
                    logger.abort()
                    raise TrainingAborted(str(exc)) from exc
                updates += 1
                update_history.append(stats)
                buffer.clear()
                if cfg.checkpoint_every_updates and \
                        updates % cfg.checkpoint_every_updates == 0:
                    save(out / f"ckpt_{updates:05d}.bin")

            budget_cut = steps_done >= cfg.total_steps or \
                (should_stop is not None and should_stop())
            done = res.terminated or res.truncated or budget_cut
            if on_step is not None:
                on_step(_snapshot(cfg, env, model, res.observation, res, episode,
                                  step_i - 1, executed, m, reward, steps_done,
                                  ep_reward, ep_collisions))
            if done:
                logger.end(res.terminated, res.truncated or budget_cut,
                           res.reached_terminal, ep_reward, ep_collisions,
                           state.onsets, state.engaged_steps)
                summary = {
                    "episode": episode, "steps": step_i,
                    "reward": ep_reward, "collisions": ep_collisions,
                    "reached_terminal": res.reached_terminal,
                    "onsets": state.onsets, "engaged_steps": state.engaged_steps,
                }
                episode_summaries.append(summary)
                if on_episode_end is not None:
                    on_episode_end(summary)
            else:
                obs = res.observation
        episode += 1

    ckpt = out / "ckpt_final.bin"
    save(ckpt)
    stats = {
        "wall_time_s": time.monotonic() - t0,
        "steps_done": steps_done, "episodes": episode, "updates": updates,
        "update_history": update_history, "episode_summaries": episode_summaries,
    }
    (out / "run_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    return TrainResult(out, ckpt, log_paths, stats)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(checkpoint_path: str | Path, out_dir: str | Path, segments=None,
             n_episodes: int = 10, seed: int = 0, deterministic: bool = True,
             expect_config: RunConfig | None = None,
             episode_cap: int | None = None) -> TrainResult:
    """Greedy (or sampled) rollouts of a trained policy; no learning."""
    params, header = load_checkpoint(checkpoint_path)
    resolved = header["meta"].get("config")
    if resolved is None:
        raise ValueError(f"{checkpoint_path}: no embedded config")
    if canonical_hash(resolved) != header["config_hash"]:
        raise ValueError(f"{checkpoint_path}: embedded config does not match its hash")
    if expect_config is not None and \
            expect_config.config_hash() != header["config_hash"]:
        raise ValueError("checkpoint was produced under a different config")

    derived = restrict_resolved(resolved, segments) if segments else copy.deepcopy(resolved)
    if episode_cap is not None:
        derived["env"]["max_episode_steps"] = int(episode_cap)
    derived["eval"] = {
        "n_episodes": int(n_episodes), "seed": int(seed),
        "deterministic": bool(deterministic),
        "checkpoint_sha256": hashlib.sha256(Path(checkpoint_path).read_bytes()).hexdigest(),
    }
    ehash = canonical_hash(derived)

    model = resolved_model(derived)
    env_cfg = resolved_env_cfg(derived)
    env = NavEnv(model, env_cfg)
    ss = np.random.SeedSequence(seed)
    ss_env, ss_act = ss.spawn(2)
    rng_env = np.random.default_rng(ss_env)
    rng_act = np.random.default_rng(ss_act)

    out = Path(out_dir)
    logs_dir = out / "logs"
    seg_names = [sg.name for sg in model.segments]
    log_paths = []
    summaries = []
    t0 = time.monotonic()
    for episode in range(n_episodes):
        obs = env.reset(rng_env)
        log_path = logs_dir / f"eval_{episode:05d}.jsonl"
        logger = EpisodeLogWriter(log_path, derived, ehash, seed, episode,
                                  resolved["algorithm"], "eval", seg_names,
                                  env.start_state, len(model.waypoints))
        log_paths.append(log_path)
        ep_reward = 0.0
        ep_collisions = 0
        step_i = 0
        done = False
        while not done:
            _, logits, value = _policy_forward(params, obs.vector())
            if deterministic:
                action = int(np.argmax(logits))
            else:
                action = sample_action(logits, rng_act)
            res = env.step(Action(action))
            logger.step(step_i, env.scope.tip_position, res.s, action, 0,
                        res.reward, value, res.report.wall_distance,
                        res.report.collided, model.segment_name_at(res.s),
                        res.waypoint_index)
            ep_reward += res.reward
            ep_collisions += int(res.report.collided)
            step_i += 1
            done = res.terminated or res.truncated
            if not done:
                obs = res.observation
        logger.end(res.terminated, res.truncated, res.reached_terminal,
                   ep_reward, ep_collisions, 0, 0)
        summaries.append({"episode": episode, "steps": step_i,
                          "reward": ep_reward, "collisions": ep_collisions,
                          "reached_terminal": res.reached_terminal})
    stats = {"wall_time_s": time.monotonic() - t0, "episodes": n_episodes,
             "episode_summaries": summaries}
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    return TrainResult(out, Path(checkpoint_path), log_paths, stats)


# ---------------------------------------------------------------------------
# scripted-controller rollouts (no learning, no policy)
# ---------------------------------------------------------------------------

def expert_run(cfg: RunConfig, out_dir: str | Path, n_episodes: int = 1,
               seed: int = 0, depth_threshold: float = 0.3) -> TrainResult:
    """Run the rule-based controller alone and log like any other run."""
    resolved = cfg.resolved()
    chash = canonical_hash(resolved)
    model = resolved_model(resolved)
    env = NavEnv(model, cfg.env)
    rng_env = np.random.default_rng(np.random.SeedSequence(seed))
    out = Path(out_dir)
    logs_dir = out / "logs"
    seg_names = [sg.name for sg in model.segments]
    log_paths = []
    summaries = []
    for episode in range(n_episodes):
        obs = env.reset(rng_env)
        log_path = logs_dir / f"expert_{episode:05d}.jsonl"
        logger = EpisodeLogWriter(log_path, resolved, chash, seed, episode,
                                  "expert", "expert", seg_names,
                                  env.start_state, len(model.waypoints))
        log_paths.append(log_path)
        ep_reward = 0.0
        ep_collisions = 0
        step_i = 0
        done = False
        while not done:
            action = expert_step(model, env.scope, obs, cfg.env.scope,
                                 depth_threshold)
            res = env.step(action)
            logger.step(step_i, env.scope.tip_position, res.s, int(action), 0,
                        res.reward, 0.0, res.report.wall_distance,
                        res.report.collided, model.segment_name_at(res.s),
                        res.waypoint_index)
            ep_reward += res.reward
            ep_collisions += int(res.report.collided)
            step_i += 1
            done = res.terminated or res.truncated
            if not done:
                obs = res.observation
        logger.end(res.terminated, res.truncated, res.reached_terminal,
                   ep_reward, ep_collisions, 0, 0)
        summaries.append({"episode": episode, "steps": step_i,
                          "collisions": ep_collisions,
                          "reached_terminal": res.reached_terminal})
    return TrainResult(out, Path(""), log_paths,
                       {"episode_summaries": summaries})


# ---------------------------------------------------------------------------
# replay verification
# ---------------------------------------------------------------------------

@dataclass
class Divergence:
    step: int
    field: str
    expected: float
    actual: float


@dataclass
class ReplayReport:
    path: Path
    steps_checked: int
    divergence: Divergence | None

    @property
    def ok(self) -> bool:
        return self.divergence is None


def replay(log_path: str | Path, atol: float = 1e-9) -> ReplayReport:
    """Re-execute a log's actions and confirm the environment agrees."""
    log = read_episode_log(log_path)
    resolved = log.header.get("config")
    if resolved is None:
        raise ValueError(f"{log_path}: log has no embedded config")
    if canonical_hash(resolved) != log.header["config_hash"]:
        raise ValueError(f"{log_path}: config hash mismatch; refusing to replay")

    model = resolved_model(resolved)
    env = NavEnv(model, resolved_env_cfg(resolved))
    env.reset(start=log.header["start"])
    penalty = 0.0
    if log.header["algorithm"] == "hi-ppo":
        penalty = float(resolved["hi"]["intervention_penalty"])

    m_prev = 0
    checked = 0
    for st in log.steps:
        if env.done:
            return ReplayReport(Path(log_path), checked,
                                Divergence(st["i"], "episode_end", 0.0, 1.0))
        res = env.step(Action(st["action"]))
        expected_reward = res.reward + \
            (penalty if st["m"] == 1 and m_prev == 0 else 0.0)
        pos = env.scope.tip_position
        fields = [
            ("pos", float(np.max(np.abs(pos - np.asarray(st["pos"]))))),
            ("s", abs(res.s - st["s"])),
            ("wall_distance", abs(res.report.wall_distance - st["wall_distance"])),
            ("reward", abs(expected_reward - st["reward"])),
            ("collided", float(res.report.collided != st["collided"])),
        ]
        for name, diff in fields:
            if diff > atol:
                if name == "pos":
                    got, want = float(np.max(pos)), float(np.max(np.asarray(st["pos"])))
                elif name == "s":
                    got, want = res.s, st["s"]
                elif name == "wall_distance":
                    got, want = res.report.wall_distance, st["wall_distance"]
                elif name == "reward":
                    got, want = expected_reward, st["reward"]
                else:
                    got, want = float(res.report.collided), float(st["collided"])
                return ReplayReport(Path(log_path), checked,
                                    Divergence(st["i"], name, want, got))
        m_prev = st["m"]
        checked += 1
    end = log.end
    if end["collisions"] != sum(1 for st in log.steps if st["collided"]):
        return ReplayReport(Path(log_path), checked,
                            Divergence(checked, "collisions",
                                       float(end["collisions"]), -1.0))
    return ReplayReport(Path(log_path), checked, None)


def replay_all(log_paths, atol: float = 1e-9) -> list:
    return [replay(p, atol) for p in log_paths]
