"""
PPO for the navigation policy

Actor-critic MLP on the state vector, rollout collection with GAE, clipped
surrogate updates and the greedy success-rate evaluation.
"""

import logging
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from autodiff import Adam, Linear, Module, Tensor, clip, clip_grad_norm, log_softmax, minimum, no_grad
from errors import ContractError, TrainingError
from navsim import NUM_ACTIONS, OBS_DIM, NavEnv
from utils.helpers import create_csv_content, write_text_atomic

logger = logging.getLogger(__name__)

METRICS_HEADERS = [
    "iteration",
    "steps",
    "mean_return",
    "success_rate_100",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
]
SUCCESS_WINDOW = 100


@dataclass
class PpoConfig:
    lr: float = 3e-4
    batch_size: int = 128
    horizon: int = 1024
    total_steps: int = 500_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    hidden: int = 64
    target_kl: Optional[float] = None
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True

    @classmethod
    def from_config(cls, cfg) -> "PpoConfig":
        return cls(
            lr=cfg.PPO_LR,
            batch_size=cfg.PPO_BATCH,
            horizon=cfg.HORIZON,
            total_steps=cfg.TOTAL_STEPS,
            gamma=cfg.GAMMA,
            gae_lambda=cfg.GAE_LAMBDA,
            clip_eps=cfg.CLIP_EPS,
            epochs=cfg.PPO_EPOCHS,
            ent_coef=cfg.ENT_COEF,
            vf_coef=cfg.VF_COEF,
            hidden=cfg.HIDDEN,
            target_kl=cfg.TARGET_KL,
            max_grad_norm=cfg.MAX_GRAD_NORM,
        )


# ======================================================================
# Policy
# ======================================================================


class PolicyNet(Module):
    """Two tanh hidden layers shared by a categorical actor head and a scalar critic head"""

    def __init__(
        self,
        obs_dim: int = OBS_DIM,
        num_actions: int = NUM_ACTIONS,
        hidden: int = 64,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.num_actions = num_actions
        self.fc1 = Linear(obs_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.actor = Linear(hidden, num_actions, rng)
        self.critic = Linear(hidden, 1, rng)
        # near-uniform initial policy
        self.actor.weight.data = self.actor.weight.data * 0.01
        self.actor.bias.data = np.zeros_like(self.actor.bias.data)

    def forward(self, obs: Tensor) -> Tuple[Tensor, Tensor]:
        if obs.ndim != 2 or obs.shape[1] != self.obs_dim:
            raise ContractError(f"policy expects [B, {self.obs_dim}] observations, got {obs.shape}")
        h = self.fc2(self.fc1(obs).tanh()).tanh()
        return self.actor(h), self.critic(h).reshape(obs.shape[0])

    def distribution(self, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Action probabilities [B, a] and values [B] without recording a graph"""
        with no_grad():
            logits, values = self(Tensor(np.atleast_2d(obs)))
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        return probs, values.data

    def act(
        self, obs: np.ndarray, rng: Optional[np.random.Generator] = None, greedy: bool = False
    ) -> Tuple[int, float, float]:
        """(action, log probability, value) for a single observation"""
        probs, values = self.distribution(obs)
        p = probs[0]
        if greedy or rng is None:
            action = int(np.argmax(p))
        else:
            action = sample_categorical(p, rng)
        return action, float(np.log(max(p[action], 1e-12))), float(values[0])


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(index, len(probs) - 1)


# ======================================================================
# Rollouts
# ======================================================================


def compute_gae(
    rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_value: float, gamma: float, lam: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns; dones[t] ends the episode after step t"""
    count = len(rewards)
    advantages = np.zeros(count)
    gae = 0.0
    for t in reversed(range(count)):
        next_value = last_value if t == count - 1 else values[t + 1]
        not_done = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        gae = delta + gamma * lam * not_done * gae
        advantages[t] = gae
    return advantages, advantages + values


@dataclass
class EpisodeSummary:
    episode_return: float
    length: int
    success: bool


class RolloutBuffer:
    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.log_probs = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.advantages: Optional[np.ndarray] = None
        self.returns: Optional[np.ndarray] = None
        self.episodes: List[EpisodeSummary] = []
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(self, obs: np.ndarray, action: int, reward: float, done: bool, log_prob: float, value: float) -> None:
        if self.full:
            raise ContractError(f"rollout buffer is full ({self.capacity} transitions)")
        i = self.size
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.log_probs[i] = log_prob
        self.values[i] = value
        self.size += 1

    def compute_advantages(self, last_value: float, gamma: float, lam: float) -> None:
        if not self.full:
            raise ContractError(f"advantages need a full buffer, have {self.size}/{self.capacity}")
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, last_value, gamma, lam)

    def normalized_advantages(self) -> np.ndarray:
        if self.advantages is None:
            raise ContractError("compute_advantages() has not been called")
        if len(self.advantages) < 2:
            return self.advantages.copy()
        return (self.advantages - self.advantages.mean()) / (self.advantages.std() + 1e-8)


def collect_rollout(
    env: NavEnv,
    policy: PolicyNet,
    horizon: int,
    rng: np.random.Generator,
    gamma: float = 0.99,
    lam: float = 0.95,
    greedy: bool = False,
) -> RolloutBuffer:
    """Run the policy for `horizon` steps, continuing the env's current episode if one is open"""
    buffer = RolloutBuffer(horizon, policy.obs_dim)
    if env.state is None or env.state.done or env.observation is None:
        env.reset()
    obs = env.observation.state_vector  # type: ignore[union-attr]

    for _ in range(horizon):
        action, log_prob, value = policy.act(obs, rng, greedy=greedy)
        result = env.step(action)
        buffer.add(obs, action, result.reward, result.done, log_prob, value)
        if result.done:
            summary = EpisodeSummary(env.episode_return, result.state.step_count, result.events.reached_goal)
            buffer.episodes.append(summary)
            obs = env.reset().state_vector
        else:
            obs = result.observation.state_vector

    last_value = 0.0 if buffer.dones[-1] else policy.distribution(obs)[1][0]
    buffer.compute_advantages(float(last_value), gamma, lam)
    return buffer


# ======================================================================
# Update
# ======================================================================


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    approx_kl: float = 0.0
    minibatches: int = 0
    stopped_early: bool = False


def ppo_loss(
    policy: PolicyNet,
    obs: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> Tuple[Tensor, Dict[str, float]]:
    """Clipped surrogate + vf_coef * value MSE - ent_coef * entropy, with per-batch diagnostics"""
    logits, values = policy(Tensor(obs))
    log_probs_all = log_softmax(logits, axis=1)
    onehot = np.eye(policy.num_actions)[actions]
    log_probs = (log_probs_all * onehot).sum(axis=1)
    ratio = (log_probs - old_log_probs).exp()
    unclipped = ratio * advantages
    clipped = clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
    policy_loss = -minimum(unclipped, clipped).mean()

    value_error = values - returns
    value_loss = (value_error * value_error).mean()
    entropy = -(log_probs_all.exp() * log_probs_all).sum(axis=1).mean()
    loss = policy_loss + value_loss * cfg.vf_coef - entropy * cfg.ent_coef

    r = ratio.data
    stats = {
        "policy_loss": policy_loss.item(),
        "value_loss": value_loss.item(),
        "entropy": entropy.item(),
        "clip_fraction": float(np.mean(np.abs(r - 1.0) > cfg.clip_eps)),
        "approx_kl": float(np.mean((r - 1.0) - np.log(r))),
    }
    return loss, stats


def approx_kl(policy: PolicyNet, obs: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray) -> float:
    probs, _ = policy.distribution(obs)
    new_log_probs = np.log(np.maximum(probs[np.arange(len(actions)), actions], 1e-12))
    r = np.exp(new_log_probs - old_log_probs)
    return float(np.mean((r - 1.0) - np.log(r)))


def ppo_update(
    policy: PolicyNet,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    optimizer: Optional[Adam] = None,
    rng: Optional[np.random.Generator] = None,
) -> UpdateStats:
    """cfg.epochs passes of shuffled minibatches; with target_kl set, the step that crosses it is undone"""
    if buffer.advantages is None or buffer.returns is None:
        raise ContractError("buffer has no advantages; call compute_advantages() first")
    optimizer = optimizer or Adam(policy.parameters(), lr=cfg.lr)
    rng = rng if rng is not None else np.random.default_rng(0)
    advantages = buffer.normalized_advantages() if cfg.normalize_advantages else buffer.advantages
    count = len(buffer)
    totals: Dict[str, float] = {}
    stats = UpdateStats()

    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        for start in range(0, count, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, batch_stats = ppo_loss(
                policy,
                buffer.obs[idx],
                buffer.actions[idx],
                buffer.log_probs[idx],
                advantages[idx],
                buffer.returns[idx],
                cfg,
            )
            snapshot = optimizer.snapshot() if cfg.target_kl is not None else None
            optimizer.zero_grad()
            loss.backward()
            clip_grad_norm(policy.parameters(), cfg.max_grad_norm)
            optimizer.step()

            if snapshot is not None:
                kl = approx_kl(policy, buffer.obs, buffer.actions, buffer.log_probs)
                if kl > cfg.target_kl:  # type: ignore[operator]
                    optimizer.restore(snapshot)
                    stats.stopped_early = True
                    logger.debug(f"early stop at epoch {epoch}: approx_kl {kl:.5f} > {cfg.target_kl}")
                    break

            for key, value in batch_stats.items():
                totals[key] = totals.get(key, 0.0) + value
            stats.minibatches += 1
        if stats.stopped_early:
            break

    if stats.minibatches:
        for key, value in totals.items():
            setattr(stats, key, value / stats.minibatches)
    return stats


# ======================================================================
# Training and evaluation
# ======================================================================


@dataclass
class PolicyTrainResult:
    policy: PolicyNet
    rows: List[List[object]] = field(default_factory=list)
    success_rate: float = 0.0


def train_policy(
    env_factory: Callable[[int], NavEnv],
    cfg: PpoConfig,
    seed: int = 0,
    out_dir: Optional[str] = None,
    progress: bool = False,
    policy: Optional[PolicyNet] = None,
) -> PolicyTrainResult:
    """Alternate collect/update for total_steps // horizon iterations, logging one metrics row each"""
    iterations = cfg.total_steps // cfg.horizon
    if iterations < 1:
        raise ContractError(f"total_steps {cfg.total_steps} is smaller than one horizon ({cfg.horizon})")
    env = env_factory(seed)
    policy = policy or PolicyNet(hidden=cfg.hidden, rng=np.random.default_rng(seed))
    optimizer = Adam(policy.parameters(), lr=cfg.lr)
    rng = np.random.default_rng([seed, 1])
    recent_success: Deque[bool] = deque(maxlen=SUCCESS_WINDOW)
    recent_returns: Deque[float] = deque(maxlen=SUCCESS_WINDOW)
    rows: List[List[object]] = []

    for iteration in tqdm(range(1, iterations + 1), desc="ppo", disable=not progress):
        buffer = collect_rollout(env, policy, cfg.horizon, rng, cfg.gamma, cfg.gae_lambda)
        for episode in buffer.episodes:
            recent_success.append(episode.success)
            recent_returns.append(episode.episode_return)
        stats = ppo_update(policy, buffer, cfg, optimizer, rng)
        mean_return = float(np.mean(recent_returns)) if recent_returns else 0.0
        success_rate = float(np.mean(recent_success)) if recent_success else 0.0
        rows.append(
            [
                iteration,
                iteration * cfg.horizon,
                mean_return,
                success_rate,
                stats.policy_loss,
                stats.value_loss,
                stats.entropy,
                stats.clip_fraction,
                stats.approx_kl,
            ]
        )
        logger.info(
            f"iteration {iteration}/{iterations}: return {mean_return:.3f} success {success_rate:.2f} "
            f"kl {stats.approx_kl:.5f}"
        )
        if not math.isfinite(stats.policy_loss + stats.value_loss):
            raise TrainingError("non-finite PPO loss", epoch=iteration)
        if out_dir:
            write_text_atomic(os.path.join(out_dir, "ppo_metrics.csv"), create_csv_content(METRICS_HEADERS, rows))

    final_rate = float(np.mean(recent_success)) if recent_success else 0.0
    return PolicyTrainResult(policy, rows, final_rate)


def run_episode(
    env: NavEnv, policy, seed, greedy: bool = True, rng: Optional[np.random.Generator] = None
) -> EpisodeSummary:
    obs = env.reset(seed=seed).state_vector
    total, length = 0.0, 0
    while True:
        action, _, _ = policy.act(obs, rng, greedy=greedy)
        result = env.step(action)
        total += result.reward
        length += 1
        if result.done:
            return EpisodeSummary(total, length, result.events.reached_goal)
        obs = result.observation.state_vector


def eval_success_rate(env: NavEnv, policy, episodes: int = 100, seed: int = 0) -> float:
    """Fraction of greedy episodes ending at the goal; episode k uses layout seed (seed, k)"""
    if episodes < 1:
        raise ContractError("episodes must be positive")
    successes = sum(run_episode(env, policy, (seed, k)).success for k in range(episodes))
    rate = successes / episodes
    logger.info(f"success rate over {episodes} episodes: {rate:.3f}")
    return rate
