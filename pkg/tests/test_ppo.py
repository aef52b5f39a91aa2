"""
Unit tests for the PPO policy, advantage estimation and updates
"""

import os

import numpy as np
import pytest

from autodiff import Tensor, log_softmax
from errors import ContractError
from navsim import NUM_ACTIONS, OBS_DIM, NavConfig, NavEnv
from ppo import (
    METRICS_HEADERS,
    PolicyNet,
    PpoConfig,
    RolloutBuffer,
    collect_rollout,
    compute_gae,
    eval_success_rate,
    ppo_loss,
    ppo_update,
    sample_categorical,
    train_policy,
)
from utils.helpers import read_csv_rows


def _short_env(seed: int = 0) -> NavEnv:
    return NavEnv(NavConfig(max_steps=20), seed=seed)


def _rollout(horizon: int = 24, seed: int = 0):
    policy = PolicyNet(hidden=16, rng=np.random.default_rng(seed))
    buffer = collect_rollout(_short_env(seed), policy, horizon, np.random.default_rng(seed))
    return policy, buffer


class TestGae:
    """Test advantage and return computation against hand-worked values"""

    def test_three_step_episode(self):
        """gamma 0.9, lambda 0.8, terminal last step ignores the bootstrap"""
        advantages, returns = compute_gae(
            np.array([1.0, 0.0, 2.0]),
            np.array([0.5, 0.4, 0.3]),
            np.array([False, False, True]),
            last_value=9.0,
            gamma=0.9,
            lam=0.8,
        )
        np.testing.assert_allclose(advantages, [1.64768, 1.094, 1.7])
        np.testing.assert_allclose(returns, [2.14768, 1.494, 2.0])

    def test_episode_boundary_cuts_propagation(self):
        """Nothing flows back across a done flag; the open tail bootstraps"""
        advantages, _ = compute_gae(
            np.array([1.0, 1.0]), np.zeros(2), np.array([True, False]), last_value=5.0, gamma=1.0, lam=1.0
        )
        np.testing.assert_allclose(advantages, [1.0, 6.0])


class TestRolloutBuffer:
    """Test transition storage"""

    def test_capacity(self):
        """Adding past capacity is refused"""
        buffer = RolloutBuffer(1)
        buffer.add(np.zeros(OBS_DIM), 0, 1.0, False, -1.0, 0.0)
        assert buffer.full and len(buffer) == 1
        with pytest.raises(ContractError):
            buffer.add(np.zeros(OBS_DIM), 0, 1.0, False, -1.0, 0.0)

    def test_advantages_need_full_buffer(self):
        """Partial buffers cannot be finalized"""
        buffer = RolloutBuffer(2)
        buffer.add(np.zeros(OBS_DIM), 0, 1.0, False, -1.0, 0.0)
        with pytest.raises(ContractError):
            buffer.compute_advantages(0.0, 0.99, 0.95)
        with pytest.raises(ContractError):
            buffer.normalized_advantages()

    def test_normalized_advantages(self):
        """Zero mean, unit variance"""
        _, buffer = _rollout()
        adv = buffer.normalized_advantages()
        assert abs(adv.mean()) < 1e-9
        assert adv.std() == pytest.approx(1.0, abs=1e-6)

    def test_rollout_contents(self):
        """horizon transitions with valid actions and episode summaries on done"""
        _, buffer = _rollout(horizon=48)
        assert len(buffer) == 48
        assert set(buffer.actions.tolist()) <= set(range(NUM_ACTIONS))
        assert np.all(buffer.log_probs <= 0.0)
        assert len(buffer.episodes) == int(buffer.dones.sum())
        assert all(e.length <= 20 for e in buffer.episodes)


class TestPolicy:
    """Test the actor-critic network"""

    def test_initial_policy_is_near_uniform(self):
        """Small actor weights start every action near 1/3"""
        policy = PolicyNet(rng=np.random.default_rng(0))
        probs, values = policy.distribution(np.random.default_rng(1).standard_normal((5, OBS_DIM)))
        assert probs.shape == (5, 3) and values.shape == (5,)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)
        assert np.all(np.abs(probs - 1 / 3) < 0.05)

    def test_rejects_wrong_observation_width(self):
        """Observation width is fixed"""
        with pytest.raises(ContractError):
            PolicyNet()(Tensor(np.zeros((1, OBS_DIM + 1))))

    def test_greedy_act_is_argmax(self):
        """Greedy picks the most probable action"""
        policy = PolicyNet(rng=np.random.default_rng(0))
        obs = np.random.default_rng(2).standard_normal(OBS_DIM)
        probs, _ = policy.distribution(obs)
        action, log_prob, _ = policy.act(obs, greedy=True)
        assert action == int(np.argmax(probs[0]))
        assert log_prob == pytest.approx(np.log(probs[0, action]))

    def test_sample_categorical(self):
        """Degenerate distributions always give their single action"""
        rng = np.random.default_rng(0)
        assert {sample_categorical(np.array([0.0, 1.0, 0.0]), rng) for _ in range(20)} == {1}


class TestPpoUpdate:
    """Test the clipped objective and the update loop"""

    def _batch(self, policy, rng):
        obs = rng.standard_normal((8, OBS_DIM))
        actions = rng.integers(0, NUM_ACTIONS, 8)
        probs, _ = policy.distribution(obs)
        log_probs = np.log(probs[np.arange(8), actions])
        return obs, actions, log_probs, rng.standard_normal(8), rng.standard_normal(8)

    def test_unchanged_policy_has_unit_ratio(self):
        """ratio 1: no clipping, no KL, surrogate is -mean(advantage)"""
        policy = PolicyNet(rng=np.random.default_rng(0))
        obs, actions, log_probs, adv, returns = self._batch(policy, np.random.default_rng(1))
        _, stats = ppo_loss(policy, obs, actions, log_probs, adv, returns, PpoConfig())
        assert stats["clip_fraction"] == 0.0
        assert stats["approx_kl"] == pytest.approx(0.0, abs=1e-12)
        assert stats["policy_loss"] == pytest.approx(-adv.mean())
        assert stats["entropy"] == pytest.approx(np.log(3), abs=0.01)

    def test_large_ratio_is_clipped(self):
        """Every ratio of e lies outside [0.8, 1.2]"""
        policy = PolicyNet(rng=np.random.default_rng(0))
        obs, actions, log_probs, adv, returns = self._batch(policy, np.random.default_rng(1))
        _, stats = ppo_loss(policy, obs, actions, log_probs - 1.0, adv, returns, PpoConfig())
        assert stats["clip_fraction"] == 1.0
        assert stats["approx_kl"] > 0.0

    def _policy_gradient(self, policy, loss):
        policy.zero_grad()
        loss.backward()
        params = [p for name, p in policy.named_parameters() if not name.startswith("critic")]
        return np.concatenate([(p.grad if p.grad is not None else np.zeros_like(p.data)).ravel() for p in params])

    def test_unbounded_clip_matches_vanilla_policy_gradient(self):
        """With clip_eps -> inf one transition's update points along A * grad log pi"""
        policy = PolicyNet(hidden=16, rng=np.random.default_rng(3))
        rng = np.random.default_rng(4)
        obs = rng.standard_normal((1, OBS_DIM))
        actions = np.array([2])
        advantages = np.array([1.7])
        probs, _ = policy.distribution(obs)
        stale = np.log(probs[:, 2]) - 0.4
        unclipped = PpoConfig(clip_eps=1e9, vf_coef=0.0, ent_coef=0.0)

        loss, stats = ppo_loss(policy, obs, actions, stale, advantages, np.zeros(1), unclipped)
        assert stats["clip_fraction"] == 0.0
        descent = -self._policy_gradient(policy, loss)

        logits, _ = policy(Tensor(obs))
        log_pi = (log_softmax(logits, axis=1) * np.eye(NUM_ACTIONS)[actions]).sum()
        vanilla = self._policy_gradient(policy, log_pi * advantages[0])

        cosine = descent @ vanilla / (np.linalg.norm(descent) * np.linalg.norm(vanilla))
        assert cosine > 0.999

    def test_clipped_ratio_stops_the_policy_gradient(self):
        """Positive advantage with the ratio above 1 + eps gives no policy gradient"""
        policy = PolicyNet(hidden=16, rng=np.random.default_rng(3))
        obs = np.random.default_rng(4).standard_normal((1, OBS_DIM))
        probs, _ = policy.distribution(obs)
        stale = np.log(probs[:, 2]) - 0.4
        cfg = PpoConfig(vf_coef=0.0, ent_coef=0.0)
        loss, stats = ppo_loss(policy, obs, np.array([2]), stale, np.array([1.7]), np.zeros(1), cfg)
        assert stats["clip_fraction"] == 1.0
        np.testing.assert_allclose(self._policy_gradient(policy, loss), 0.0, atol=1e-15)

    def test_update_changes_policy(self):
        """epochs x minibatches steps are taken"""
        policy, buffer = _rollout(horizon=24)
        before = policy.state_dict()
        stats = ppo_update(policy, buffer, PpoConfig(batch_size=8, epochs=2, lr=1e-2))
        assert stats.minibatches == 6
        assert not stats.stopped_early
        after = policy.state_dict()
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_target_kl_undoes_crossing_step(self):
        """The step that exceeds target_kl is reverted and the update stops"""
        policy, buffer = _rollout(horizon=24)
        before = policy.state_dict()
        stats = ppo_update(policy, buffer, PpoConfig(batch_size=8, epochs=2, lr=0.1, target_kl=1e-12))
        assert stats.stopped_early
        assert stats.minibatches == 0
        after = policy.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_update_needs_advantages(self):
        """A raw buffer cannot be trained on"""
        buffer = RolloutBuffer(1)
        buffer.add(np.zeros(OBS_DIM), 0, 0.0, True, -1.0, 0.0)
        with pytest.raises(ContractError):
            ppo_update(PolicyNet(), buffer, PpoConfig())


class TestTrainPolicy:
    """Test the training loop and evaluation"""

    def _cfg(self) -> PpoConfig:
        return PpoConfig(horizon=32, total_steps=64, batch_size=16, epochs=1, hidden=16)

    def test_writes_metrics(self, tmp_path):
        """One CSV row per iteration"""
        out_dir = str(tmp_path / "ppo")
        result = train_policy(_short_env, self._cfg(), seed=1, out_dir=out_dir)
        assert len(result.rows) == 2
        rows = read_csv_rows(os.path.join(out_dir, "ppo_metrics.csv"))
        assert list(rows[0].keys()) == METRICS_HEADERS
        assert [int(r["steps"]) for r in rows] == [32, 64]
        assert 0.0 <= result.success_rate <= 1.0

    def test_deterministic(self):
        """Same seed, same metrics"""
        a = train_policy(_short_env, self._cfg(), seed=2)
        b = train_policy(_short_env, self._cfg(), seed=2)
        assert a.rows == b.rows

    def test_too_few_steps(self):
        """At least one horizon"""
        with pytest.raises(ContractError):
            train_policy(_short_env, PpoConfig(horizon=32, total_steps=16))

    def test_eval_success_rate(self):
        """Greedy evaluation is a reproducible fraction"""
        policy = PolicyNet(hidden=16, rng=np.random.default_rng(0))
        rate = eval_success_rate(_short_env(), policy, episodes=3, seed=4)
        assert 0.0 <= rate <= 1.0
        assert rate == eval_success_rate(_short_env(), policy, episodes=3, seed=4)
        with pytest.raises(ContractError):
            eval_success_rate(_short_env(), policy, episodes=0)
