"""Human-in-the-loop machinery layered on the PPO core.

Three pieces cooperate: an arbitration gate that swaps in the operator action
while an intervention is active, a reward adjustment that charges a penalty
once per intervention onset, and a cross-entropy similarity term that pulls
the policy toward operator actions on the steps they controlled.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import agent
from .agent import Batch, PolicyParams, PPOLossParts, log_softmax
from .scope import Action, expert_step


@dataclass(frozen=True)
class HIConfig:
    """Knobs of the intervention loop."""

    intervention_penalty: float = -1.0   # added once per 0 -> 1 onset
    bc_weight: float = 0.1               # similarity-loss multiplier
    stuck_window: int = 30               # steps of history for stuck detection
    stuck_progress_eps: float = 2.0      # mm of arclength progress required
    human_hold_steps: int = 1            # steps one operator command persists
    proximity_takeover_mm: float = 0.0   # >0: take over when wall gets this close
    expert_depth_threshold: float = 0.3  # scripted operator's "found a target" cut

    def __post_init__(self):
        if self.intervention_penalty > 0:
            raise ValueError("intervention penalty must be <= 0")
        if self.bc_weight < 0:
            raise ValueError("bc_weight must be >= 0")
        if self.stuck_window < 1 or self.human_hold_steps < 1:
            raise ValueError("windows must be >= 1")
        if not 0.0 < self.expert_depth_threshold <= 1.0:
            raise ValueError("expert_depth_threshold must be in (0, 1]")


# ---------------------------------------------------------------------------
# engagement arbitration
# ---------------------------------------------------------------------------

def arbitrate(agent_action: int, human_action: int | None, m: int) -> int:
    """Executed action: the operator's while engaged, the agent's otherwise."""
    if m not in (0, 1):
        raise ValueError("m must be 0 or 1")
    if m == 1:
        if human_action is None:
            raise ValueError("engaged step without an operator action")
        return int(human_action)
    return int(agent_action)


def adjust_reward(reward: float, m: int, m_prev: int, penalty: float) -> float:
    """Charge the penalty exactly on 0 -> 1 transitions of the engagement flag."""
    if m == 1 and m_prev == 0:
        return reward + penalty
    return reward


def onset_count(flags) -> int:
    """Number of 0 -> 1 transitions in an engagement-flag sequence."""
    flags = np.asarray(flags, dtype=int)
    prev = np.concatenate([[0], flags[:-1]])
    return int(np.sum((flags == 1) & (prev == 0)))


# ---------------------------------------------------------------------------
# similarity (behavior-cloning) loss
# ---------------------------------------------------------------------------

def bc_similarity(logits: np.ndarray, expert_actions: np.ndarray, m: np.ndarray):
    """Mean cross-entropy against operator actions over engaged steps.

    Returns (loss, d loss / d logits). Steps with m == 0 contribute nothing;
    an all-zero mask yields a zero loss and zero gradient.
    """
    logits = np.atleast_2d(logits)
    m = np.asarray(m, dtype=int)
    expert_actions = np.asarray(expert_actions, dtype=int)
    engaged = np.flatnonzero(m == 1)
    d = np.zeros_like(logits)
    if len(engaged) == 0:
        return 0.0, d
    if np.any(expert_actions[engaged] < 0):
        raise ValueError("engaged step without a recorded operator action")
    logp = log_softmax(logits[engaged])
    probs = np.exp(logp)
    picked = logp[np.arange(len(engaged)), expert_actions[engaged]]
    loss = -float(np.mean(picked))
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(engaged)), expert_actions[engaged]] = 1.0
    d[engaged] = (probs - onehot) / len(engaged)
    return loss, d


def hi_ppo_loss(params: PolicyParams, batch: Batch, clip_eps: float = 0.2,
                entropy_coef: float = 5e-3, value_coef: float = 0.5,
                bc_weight: float = 0.1, with_grads: bool = False):
    """PPO loss plus the weighted similarity term (actor-only gradient)."""
    out = agent.ppo_loss(params, batch, clip_eps, entropy_coef, value_coef,
                         with_grads=with_grads)
    if not with_grads:
        parts = out
        logits, _ = params.actor.forward(batch.obs)
        bc, _ = bc_similarity(logits, batch.expert_actions, batch.m)
        combined = PPOLossParts(parts.total + bc_weight * bc, parts.policy,
                                parts.value, parts.entropy,
                                parts.clip_fraction, parts.approx_kl)
        return combined, bc
    parts, grads = out
    logits, acts_a = params.actor.forward(batch.obs)
    bc, d_logits_bc = bc_similarity(logits, batch.expert_actions, batch.m)
    if bc_weight != 0.0 and np.any(batch.m == 1):
        gws_bc, gbs_bc = params.actor.backward(acts_a, bc_weight * d_logits_bc)
        gws_a, gbs_a = grads["actor"]
        grads["actor"] = ([a + b for a, b in zip(gws_a, gws_bc)],
                          [a + b for a, b in zip(gbs_a, gbs_bc)])
    combined = PPOLossParts(parts.total + bc_weight * bc, parts.policy,
                            parts.value, parts.entropy,
                            parts.clip_fraction, parts.approx_kl)
    return combined, bc, grads


# ---------------------------------------------------------------------------
# stuck detection
# ---------------------------------------------------------------------------

def detect_stuck(recent_s, collided_now: bool, cfg: HIConfig) -> bool:
    """Stalled: a collision this step, or the arclength gained over the last
    stuck_window steps falls short of stuck_progress_eps."""
    if collided_now:
        return True
    recent = list(recent_s)
    if len(recent) <= cfg.stuck_window:
        return False
    return (recent[-1] - recent[-(cfg.stuck_window + 1)]) < cfg.stuck_progress_eps


class ProgressTracker:
    """Sliding window of arclength positions for stuck detection."""

    def __init__(self, window: int, progress_eps: float):
        self.window = window
        self.progress_eps = progress_eps
        self.history: deque = deque(maxlen=window + 1)

    def reset(self) -> None:
        self.history.clear()

    def push(self, s: float) -> None:
        self.history.append(float(s))

    def stuck(self) -> bool:
        if len(self.history) <= self.window:
            return False
        return (self.history[-1] - self.history[0]) < self.progress_eps


# ---------------------------------------------------------------------------
# intervention sources
# ---------------------------------------------------------------------------

class InterventionSource:
    """Decides when an operator takes over and what they do while engaged.

    begin(...) is consulted on disengaged steps, action(...) on engaged ones.
    action returns None to end the intervention before acting that step.
    """

    def reset(self) -> None:  # pragma: no cover - trivial default
        pass

    def begin(self, env, scope, observation, step_index: int) -> bool:
        raise NotImplementedError

    def action(self, env, scope, observation, step_index: int):
        raise NotImplementedError


class ScriptedExpertSource(InterventionSource):
    """Rule-following operator: engages when the scope stalls, is about to
    scrape a wall, or has collided; steers with the ray-based recovery rule
    until the scope has made fresh progress with clearance."""

    def __init__(self, cfg: HIConfig, depth_threshold: float | None = None):
        self.cfg = cfg
        self.depth_threshold = (cfg.expert_depth_threshold if depth_threshold is None
                                else depth_threshold)
        self.tracker = ProgressTracker(cfg.stuck_window, cfg.stuck_progress_eps)
        self.hold = 0
        self.engage_s = 0.0

    def reset(self) -> None:
        self.tracker.reset()
        self.hold = 0
        self.engage_s = 0.0

    def _proximity_breach(self, env) -> bool:
        lim = self.cfg.proximity_takeover_mm
        if lim <= 0.0 or env.last_report is None:
            return False
        return env.last_report.wall_distance < lim

    def begin(self, env, scope, observation, step_index: int) -> bool:
        collided_now = env.last_report is not None and env.last_report.collided
        self.tracker.push(env.current_s)
        if self.tracker.stuck() or collided_now or self._proximity_breach(env):
            self.hold = 0
            self.engage_s = env.current_s
            self.tracker.reset()
            return True
        return False

    def action(self, env, scope, observation, step_index: int):
        if self.hold >= self.cfg.human_hold_steps:
            progressed = env.current_s - self.engage_s >= self.cfg.stuck_progress_eps
            clear = not self._proximity_breach(env)
            if progressed and clear:
                return None
        self.hold += 1
        return int(expert_step(env.model, scope, observation, env.cfg.scope,
                               self.depth_threshold))


class QueueHumanSource(InterventionSource):
    """Operator actions arriving from outside (the live console).

    engage()/disengage()/push_action() are called by the transport thread.
    The stepping loop samples the slot exactly once per step; a newer command
    overwrites an unconsumed one, and a consumed command repeats for
    human_hold_steps before the takeover auto-ends.
    """

    def __init__(self, cfg: HIConfig):
        self.cfg = cfg
        self.pending: deque = deque(maxlen=1)  # stale commands are discarded
        self.engaged_flag = False
        self.last_action: int | None = None
        self.repeats_left = 0

    def reset(self) -> None:
        self.pending.clear()
        self.engaged_flag = False
        self.last_action = None
        self.repeats_left = 0

    def engage(self) -> None:
        self.engaged_flag = True

    def disengage(self) -> None:
        self.engaged_flag = False

    def push_action(self, action: int) -> None:
        self.pending.append(int(Action(action)))
        self.engaged_flag = True

    def begin(self, env, scope, observation, step_index: int) -> bool:
        return self.engaged_flag and bool(self.pending)

    def action(self, env, scope, observation, step_index: int):
        if not self.engaged_flag:
            return None
        if self.pending:
            self.last_action = self.pending.popleft()
            self.repeats_left = self.cfg.human_hold_steps - 1
            return self.last_action
        if self.last_action is not None and self.repeats_left > 0:
            self.repeats_left -= 1
            return self.last_action
        self.engaged_flag = False  # starved past the hold budget
        return None


class ReplaySource(InterventionSource):
    """Replays a recorded (step_index -> action) engagement schedule."""

    def __init__(self, schedule: dict[int, int]):
        self.schedule = {int(k): int(v) for k, v in schedule.items()}

    def begin(self, env, scope, observation, step_index: int) -> bool:
        return step_index in self.schedule

    def action(self, env, scope, observation, step_index: int):
        if step_index in self.schedule:
            return self.schedule[step_index]
        return None


# ---------------------------------------------------------------------------
# per-episode intervention state machine
# ---------------------------------------------------------------------------

@dataclass
class InterventionState:
    """Engagement flag plus its previous value, advanced once per step."""

    m: int = 0
    m_prev: int = 0
    onsets: int = 0
    engaged_steps: int = 0

    def advance(self, engaged: bool) -> None:
        self.m_prev = self.m
        self.m = 1 if engaged else 0
        if self.m == 1 and self.m_prev == 0:
            self.onsets += 1
        if self.m == 1:
            self.engaged_steps += 1


def resolve_step(source: InterventionSource | None, state: InterventionState,
                 env, scope, observation, step_index: int,
                 agent_action: int):
    """Run one step of the engagement state machine.

    Returns (executed_action, operator_action_or_None, m, m_prev).
    """
    operator_action = None
    if source is not None:
        if state.m == 1:
            operator_action = source.action(env, scope, observation, step_index)
        elif source.begin(env, scope, observation, step_index):
            operator_action = source.action(env, scope, observation, step_index)
    engaged = operator_action is not None
    state.advance(engaged)
    executed = arbitrate(agent_action, operator_action, state.m)
    return executed, operator_action, state.m, state.m_prev
