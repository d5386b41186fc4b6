"""Minimal PPO trainer for continuous-control voxel robot environments.

Environments follow a small protocol: `obs_dim`, `act_dim`, `reset(seed)`
returning an observation array, and `step(action)` returning
(obs, reward, done, info). Training uses the clipped surrogate objective
with GAE, an entropy bonus, value-loss weighting, gradient clipping, and a
linearly decayed learning rate. Fitness is the cumulative reward of one
deterministic evaluation episode after training.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from torch import nn

from evogym_adapter.config import PPOConfig

logger = logging.getLogger(__name__)


class ActorCritic(nn.Module):
    def __init__(self, obs_dim: int, act_dim: int, hidden_sizes=(64, 64)):
        super().__init__()

        def mlp(out_dim):
            layers = []
            last = obs_dim
            for h in hidden_sizes:
                layers += [nn.Linear(last, h), nn.Tanh()]
                last = h
            layers.append(nn.Linear(last, out_dim))
            return nn.Sequential(*layers)

        self.policy = mlp(act_dim)
        self.value = mlp(1)
        self.log_std = nn.Parameter(torch.zeros(act_dim))

    def distribution(self, obs: torch.Tensor) -> torch.distributions.Normal:
        mean = self.policy(obs)
        return torch.distributions.Normal(mean, torch.exp(self.log_std))

    def act(self, obs: torch.Tensor):
        dist = self.distribution(obs)
        action = dist.sample()
        logp = dist.log_prob(action).sum(-1)
        value = self.value(obs).squeeze(-1)
        return action, logp, value

    def evaluate_actions(self, obs: torch.Tensor, actions: torch.Tensor):
        dist = self.distribution(obs)
        logp = dist.log_prob(actions).sum(-1)
        entropy = dist.entropy().sum(-1)
        value = self.value(obs).squeeze(-1)
        return logp, entropy, value


def _gae(rewards, values, dones, last_values, gamma, lam):
    n_steps, n_envs = rewards.shape
    advantages = np.zeros_like(rewards)
    last_adv = np.zeros(n_envs)
    for t in reversed(range(n_steps)):
        next_values = last_values if t == n_steps - 1 else values[t + 1]
        non_terminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * non_terminal - values[t]
        last_adv = delta + gamma * lam * non_terminal * last_adv
        advantages[t] = last_adv
    return advantages


def train_controller(env_factory, config: PPOConfig, seed: int,
                     total_steps: int | None = None) -> float:
    """Train a PPO controller and return the final evaluation reward."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    budget = total_steps if total_steps is not None else config.total_steps

    envs = [env_factory() for _ in range(config.n_envs)]
    obs = np.stack([env.reset(seed=seed + i) for i, env in enumerate(envs)])
    model = ActorCritic(envs[0].obs_dim, envs[0].act_dim, tuple(config.hidden_sizes))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    steps_per_update = config.n_envs * config.n_steps
    n_updates = max(1, budget // steps_per_update)

    for update in range(n_updates):
        if config.lr_linear_decay:
            frac = 1.0 - update / n_updates
            for group in optimizer.param_groups:
                group["lr"] = config.learning_rate * frac

        obs_buf = np.zeros((config.n_steps, config.n_envs, envs[0].obs_dim), dtype=np.float32)
        act_buf = np.zeros((config.n_steps, config.n_envs, envs[0].act_dim), dtype=np.float32)
        logp_buf = np.zeros((config.n_steps, config.n_envs), dtype=np.float32)
        rew_buf = np.zeros((config.n_steps, config.n_envs), dtype=np.float32)
        done_buf = np.zeros((config.n_steps, config.n_envs), dtype=np.float32)
        val_buf = np.zeros((config.n_steps, config.n_envs), dtype=np.float32)

        for t in range(config.n_steps):
            with torch.no_grad():
                tensor_obs = torch.as_tensor(obs, dtype=torch.float32)
                actions, logp, values = model.act(tensor_obs)
            actions_np = actions.numpy()
            obs_buf[t] = obs
            act_buf[t] = actions_np
            logp_buf[t] = logp.numpy()
            val_buf[t] = values.numpy()
            for i, env in enumerate(envs):
                next_obs, reward, done, _ = env.step(actions_np[i])
                rew_buf[t, i] = reward
                done_buf[t, i] = float(done)
                if done:
                    next_obs = env.reset(seed=int(rng.integers(2**31)))
                obs[i] = next_obs

        with torch.no_grad():
            last_values = model.value(torch.as_tensor(obs, dtype=torch.float32)).squeeze(-1).numpy()
        advantages = _gae(rew_buf, val_buf, done_buf, last_values,
                          config.gamma, config.gae_lambda)
        returns = advantages + val_buf

        flat_obs = torch.as_tensor(obs_buf.reshape(-1, envs[0].obs_dim))
        flat_act = torch.as_tensor(act_buf.reshape(-1, envs[0].act_dim))
        flat_logp = torch.as_tensor(logp_buf.reshape(-1))
        flat_adv = torch.as_tensor(advantages.reshape(-1))
        flat_ret = torch.as_tensor(returns.reshape(-1))
        flat_adv = (flat_adv - flat_adv.mean()) / (flat_adv.std() + 1e-8)

        n_samples = flat_obs.shape[0]
        for _ in range(config.epochs):
            order = torch.as_tensor(rng.permutation(n_samples))
            for start in range(0, n_samples, config.batch_size):
                idx = order[start : start + config.batch_size]
                logp, entropy, value = model.evaluate_actions(flat_obs[idx], flat_act[idx])
                ratio = torch.exp(logp - flat_logp[idx])
                clipped = torch.clamp(ratio, 1 - config.clip_range, 1 + config.clip_range)
                policy_loss = -torch.min(ratio * flat_adv[idx], clipped * flat_adv[idx]).mean()
                value_loss = ((value - flat_ret[idx]) ** 2).mean()
                loss = (
                    policy_loss
                    + config.vf_coef * value_loss
                    - config.ent_coef * entropy.mean()
                )
                optimizer.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(model.parameters(), config.max_grad_norm)
                optimizer.step()

        if (update + 1) % config.log_interval_updates == 0:
            logger.info(
                "update %d/%d mean_reward=%.4f",
                update + 1, n_updates, float(rew_buf.mean()),
            )

    fitness = evaluate_controller(env_factory, model, seed=seed + 1_000_003)
    for env in envs:
        close = getattr(env, "close", None)
        if close:
            close()
    return fitness


def evaluate_controller(env_factory, model: ActorCritic, seed: int,
                        max_steps: int = 10_000) -> float:
    """One deterministic (mean-action) episode; returns cumulative reward."""
    env = env_factory()
    obs = env.reset(seed=seed)
    total = 0.0
    for _ in range(max_steps):
        with torch.no_grad():
            mean = model.policy(torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0))
        obs, reward, done, _ = env.step(mean.squeeze(0).numpy())
        total += float(reward)
        if done:
            break
    close = getattr(env, "close", None)
    if close:
        close()
    return total
