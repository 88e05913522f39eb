"""Actor-critic MLP with hand-written backprop, GAE, and the clipped PPO update.

Everything is float64 numpy with explicit gradients so training is bit-for-bit
reproducible and every loss term can be checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scope import N_ACTIONS


# ---------------------------------------------------------------------------
# running observation normalizer (Welford)
# ---------------------------------------------------------------------------

VAR_FLOOR = 1e-8


class RunningNorm:
    """Streaming per-component mean/variance with Welford updates."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, VAR_FLOOR)
        return np.maximum(self.m2 / self.count, VAR_FLOOR)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.asarray(x, dtype=float)
        return (x - self.mean) / np.sqrt(self.variance)

    def state(self) -> dict:
        return {"count": self.count, "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load(self, state: dict) -> None:
        self.count = int(state["count"])
        self.mean = np.asarray(state["mean"], dtype=float).copy()
        self.m2 = np.asarray(state["m2"], dtype=float).copy()


# ---------------------------------------------------------------------------
# MLP with explicit gradients
# ---------------------------------------------------------------------------

def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # canonical sign, keeps init deterministic
    if n_in >= n_out:
        w = q
    else:
        w = q.T
    return gain * w[:n_in, :n_out]


class MLP:
    """Tanh MLP; forward keeps activations so backward is a plain replay."""

    def __init__(self, sizes, rng: np.random.Generator, out_gain: float = 1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = out_gain if i == len(sizes) - 2 else 1.0
            self.weights.append(_orthogonal(rng, a, b, gain))
            self.biases.append(np.zeros(b))

    def forward(self, x: np.ndarray):
        acts = [np.atleast_2d(x)]
        h = acts[0]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = np.tanh(z) if i < len(self.weights) - 1 else z
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out: np.ndarray):
        """Gradients of a scalar loss given d loss/d output; returns (dWs, dbs)."""
        dws = [None] * len(self.weights)
        dbs = [None] * len(self.biases)
        grad = d_out
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                grad = grad * (1.0 - acts[i + 1] ** 2)  # through tanh
            dws[i] = acts[i].T @ grad
            dbs[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return dws, dbs

    def params(self):
        return self.weights + self.biases

    def set_params(self, arrays) -> None:
        n = len(self.weights)
        self.weights = [np.asarray(a, dtype=float).copy() for a in arrays[:n]]
        self.biases = [np.asarray(a, dtype=float).copy() for a in arrays[n:]]


@dataclass
class PolicyParams:
    """Actor + critic networks and the observation normalizer."""

    actor: MLP
    critic: MLP
    normalizer: RunningNorm
    obs_dim: int
    normalize_obs: bool = True

    def copy(self) -> "PolicyParams":
        rng = np.random.default_rng(0)
        actor = MLP(self.actor.sizes, rng)
        actor.set_params([p.copy() for p in self.actor.params()])
        critic = MLP(self.critic.sizes, rng)
        critic.set_params([p.copy() for p in self.critic.params()])
        norm = RunningNorm(self.obs_dim)
        norm.load(self.normalizer.state())
        return PolicyParams(actor, critic, norm, self.obs_dim, self.normalize_obs)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.actor.params() + self.critic.params()])

    def load_flat(self, vec: np.ndarray) -> None:
        arrays = []
        ofs = 0
        for p in self.actor.params() + self.critic.params():
            arrays.append(vec[ofs:ofs + p.size].reshape(p.shape))
            ofs += p.size
        n_actor = len(self.actor.params())
        self.actor.set_params(arrays[:n_actor])
        self.critic.set_params(arrays[n_actor:])


def init_params(obs_dim: int, hidden: int = 128, n_layers: int = 2,
                seed=0, normalize_obs: bool = True) -> PolicyParams:
    """seed may be an int or a SeedSequence child."""
    rng = np.random.default_rng(seed)
    sizes_a = [obs_dim] + [hidden] * n_layers + [N_ACTIONS]
    sizes_c = [obs_dim] + [hidden] * n_layers + [1]
    actor = MLP(sizes_a, rng, out_gain=0.01)  # near-uniform initial policy
    critic = MLP(sizes_c, rng, out_gain=1.0)
    return PolicyParams(actor, critic, RunningNorm(obs_dim), obs_dim, normalize_obs)


def forward(params: PolicyParams, obs_vec: np.ndarray):
    """Policy logits and value for one raw observation vector."""
    x = np.asarray(obs_vec, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observation")
    if params.normalize_obs:
        x = params.normalizer.normalize(x)
    logits, _ = params.actor.forward(x)
    value, _ = params.critic.forward(x)
    return logits[0], float(value[0, 0])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF categorical draw (keeps the rng stream explicit)."""
    p = softmax(logits)
    u = rng.random()
    return int(np.searchsorted(np.cumsum(p), u, side="right").clip(0, len(p) - 1))


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------

def gae(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Recursive generalized advantage estimate; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not (len(rewards) == len(values) == len(dones)):
        raise ValueError("gae: input length mismatch")
    n = len(rewards)
    adv = np.zeros(n)
    next_value = bootstrap_value
    acc = 0.0
    for t in reversed(range(n)):
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        acc = delta + gamma * lam * mask * acc
        adv[t] = acc
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# rollout buffer
# ---------------------------------------------------------------------------

@dataclass
class Transition:
    """One step as stored for updates; obs is the normalized acting-time vector."""

    obs: np.ndarray
    executed_action: int
    agent_logits: np.ndarray
    logprob_old: float
    expert_action: int | None
    m: int
    reward: float
    value: float
    done: bool


@dataclass
class Batch:
    """Arrays for one minibatch (or the whole buffer)."""

    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    m: np.ndarray
    expert_actions: np.ndarray  # -1 where absent

    def __len__(self) -> int:
        return len(self.actions)

    def slice(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.logp_old[idx],
                     self.advantages[idx], self.returns[idx], self.m[idx],
                     self.expert_actions[idx])


class RolloutBuffer:
    """Fixed-capacity on-policy store; advantages are computed before updates."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.logits = np.zeros((capacity, N_ACTIONS))
        self.logp_old = np.zeros(capacity)
        self.expert_actions = np.full(capacity, -1, dtype=np.int64)
        self.m = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.ptr = 0
        self.advantages = None
        self.returns = None

    def __len__(self) -> int:
        return self.ptr

    @property
    def full(self) -> bool:
        return self.ptr >= self.capacity

    def add(self, t: Transition) -> None:
        assert self.ptr < self.capacity, "rollout buffer overflow"
        if t.m == 1:
            assert t.expert_action is not None and t.expert_action == t.executed_action
        i = self.ptr
        self.obs[i] = t.obs
        self.actions[i] = t.executed_action
        self.logits[i] = t.agent_logits
        self.logp_old[i] = t.logprob_old
        self.expert_actions[i] = -1 if t.expert_action is None else t.expert_action
        self.m[i] = t.m
        self.rewards[i] = t.reward
        self.values[i] = t.value
        self.dones[i] = t.done
        self.ptr += 1

    def compute_advantages(self, bootstrap_value: float, gamma: float, lam: float,
                           normalize: bool = True) -> None:
        n = self.ptr
        adv, ret = gae(self.rewards[:n], self.values[:n], self.dones[:n],
                       bootstrap_value, gamma, lam)
        if normalize and n > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        self.advantages = adv
        self.returns = ret

    def batch(self) -> Batch:
        assert self.advantages is not None, "compute_advantages before batching"
        n = self.ptr
        return Batch(self.obs[:n], self.actions[:n], self.logp_old[:n],
                     self.advantages, self.returns, self.m[:n], self.expert_actions[:n])

    def clear(self) -> None:
        self.ptr = 0
        self.advantages = None
        self.returns = None


# ---------------------------------------------------------------------------
# PPO loss and gradients
# ---------------------------------------------------------------------------

@dataclass
class PPOLossParts:
    total: float
    policy: float
    value: float
    entropy: float
    clip_fraction: float = 0.0
    approx_kl: float = 0.0


def _policy_terms(logits: np.ndarray, batch: Batch, clip_eps: float):
    """Per-batch clipped-surrogate pieces and d(policy+entropy terms)/d logits."""
    n = len(batch)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp_new = logp_all[np.arange(n), batch.actions]
    ratio = np.exp(logp_new - batch.logp_old)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_obj = ratio * batch.advantages
    clipped_obj = clipped * batch.advantages
    policy_loss = -np.mean(np.minimum(unclipped_obj, clipped_obj))

    entropy = -np.sum(probs * logp_all, axis=1)
    entropy_term = -float(np.mean(entropy))

    clip_fraction = float(np.mean(np.abs(ratio - 1.0) > clip_eps))
    approx_kl = float(np.mean(batch.logp_old - logp_new))

    # gradient of the policy loss wrt logits
    sel = unclipped_obj <= clipped_obj  # gradient flows only through the active branch
    g_ratio = np.where(sel, batch.advantages, 0.0) * (-1.0 / n)
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), batch.actions] = 1.0
    d_logits_policy = (g_ratio * ratio)[:, None] * (onehot - probs)
    # gradient of entropy_term = -mean(H)
    d_logits_entropy = probs * (logp_all + entropy[:, None]) / n
    return (policy_loss, entropy_term, clip_fraction, approx_kl,
            d_logits_policy, d_logits_entropy, probs)


def ppo_loss(params: PolicyParams, batch: Batch, clip_eps: float = 0.2,
             entropy_coef: float = 5e-3, value_coef: float = 0.5,
             with_grads: bool = False):
    """Clipped-surrogate PPO loss on a batch of normalized observations.

    Returns PPOLossParts, or (PPOLossParts, grads) when with_grads is set;
    grads is {"actor": (dWs, dbs), "critic": (dWs, dbs)}.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    logits, acts_a = params.actor.forward(batch.obs)
    values, acts_c = params.critic.forward(batch.obs)
    values = values[:, 0]

    (policy_loss, entropy_term, clip_fraction, approx_kl,
     d_logits_policy, d_logits_entropy, _) = _policy_terms(logits, batch, clip_eps)

    err = values - batch.returns
    value_loss = float(np.mean(err ** 2))
    total = policy_loss + value_coef * value_loss + entropy_coef * entropy_term
    if not np.isfinite(total):
        raise FloatingPointError("non-finite PPO loss")
    parts = PPOLossParts(float(total), float(policy_loss), value_loss,
                         entropy_term, clip_fraction, approx_kl)
    if not with_grads:
        return parts
    d_logits = d_logits_policy + entropy_coef * d_logits_entropy
    d_values = (2.0 * value_coef / len(batch)) * err
    grads_a = params.actor.backward(acts_a, d_logits)
    grads_c = params.critic.backward(acts_c, d_values[:, None])
    return parts, {"actor": grads_a, "critic": grads_c}


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

class Adam:
    """Per-parameter adaptive moments; operates on (dWs, dbs) gradient lists."""

    def __init__(self, param_arrays, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in param_arrays]
        self.v = [np.zeros_like(p) for p in param_arrays]

    def step(self, param_arrays, grad_arrays) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(param_arrays, grad_arrays, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class UpdateConfig:
    """Hyperparameters of one PPO update pass."""

    learning_rate: float = 3e-4
    minibatch_size: int = 64
    epochs: int = 3
    clip_eps: float = 0.2
    entropy_coef: float = 5e-3
    value_coef: float = 0.5


class Trainer:
    """Owns the Adam states across updates so moments persist."""

    def __init__(self, params: PolicyParams, cfg: UpdateConfig):
        self.params = params
        self.cfg = cfg
        self.opt_actor = Adam(params.actor.params(), lr=cfg.learning_rate)
        self.opt_critic = Adam(params.critic.params(), lr=cfg.learning_rate)

    def update(self, buffer: RolloutBuffer, rng: np.random.Generator,
               loss_fn=None) -> dict:
        """Shuffled minibatch epochs over a full buffer.

        loss_fn(params, batch, with_grads=True) defaults to plain ppo_loss;
        the human-intervention variant passes its combined loss.
        """
        cfg = self.cfg
        full = buffer.batch()
        n = len(full)
        stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
                 "bc_loss": 0.0, "clip_fraction": 0.0, "approx_kl": 0.0,
                 "minibatches": 0}
        if loss_fn is None:
            def loss_fn(params, batch, with_grads=True):
                parts, grads = ppo_loss(params, batch, cfg.clip_eps,
                                        cfg.entropy_coef, cfg.value_coef,
                                        with_grads=True)
                return parts, 0.0, grads
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for ofs in range(0, n, cfg.minibatch_size):
                idx = order[ofs:ofs + cfg.minibatch_size]
                if len(idx) == 0:
                    continue
                mb = full.slice(idx)
                parts, bc_term, grads = loss_fn(self.params, mb, with_grads=True)
                gws_a, gbs_a = grads["actor"]
                gws_c, gbs_c = grads["critic"]
                self.opt_actor.step(self.params.actor.params(), gws_a + gbs_a)
                self.opt_critic.step(self.params.critic.params(), gws_c + gbs_c)
                stats["policy_loss"] += parts.policy
                stats["value_loss"] += parts.value
                stats["entropy"] += -parts.entropy
                stats["bc_loss"] += bc_term
                stats["clip_fraction"] += parts.clip_fraction
                stats["approx_kl"] += parts.approx_kl
                stats["minibatches"] += 1
        k = max(stats["minibatches"], 1)
        return {key: (val / k if key != "minibatches" else val)
                for key, val in stats.items()}
