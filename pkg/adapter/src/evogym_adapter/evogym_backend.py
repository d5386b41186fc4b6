"""EvoGym environment construction, imported lazily so the protocol server
works (and reports clean per-request errors) on hosts without the simulator."""

from __future__ import annotations

import numpy as np


class EvogymUnavailable(RuntimeError):
    pass


class _GymnasiumEnvAdapter:
    """Adapts gymnasium's 5-tuple step API to the trainer's 4-tuple protocol."""

    def __init__(self, env):
        self._env = env
        self.obs_dim = int(np.prod(env.observation_space.shape))
        self.act_dim = int(np.prod(env.action_space.shape))
        self._act_low = np.asarray(env.action_space.low, dtype=np.float32)
        self._act_high = np.asarray(env.action_space.high, dtype=np.float32)

    def reset(self, seed=None):
        out = self._env.reset(seed=seed)
        obs = out[0] if isinstance(out, tuple) else out
        return np.asarray(obs, dtype=np.float32).reshape(-1)

    def step(self, action):
        action = np.clip(np.asarray(action, dtype=np.float32), self._act_low, self._act_high)
        out = self._env.step(action)
        if len(out) == 5:
            obs, reward, terminated, truncated, info = out
            done = bool(terminated) or bool(truncated)
        else:
            obs, reward, done, info = out
        return np.asarray(obs, dtype=np.float32).reshape(-1), float(reward), bool(done), info

    def close(self):
        self._env.close()


def make_env_factory(env_id: str, body_rows):
    """Factory of EvoGym environments for one robot body."""
    try:
        import gymnasium as gym
        import evogym.envs  # noqa: F401  (registers the environments)
        from evogym import get_full_connectivity
    except ImportError as exc:
        raise EvogymUnavailable(
            f"evogym/gymnasium not installed on this host: {exc}"
        ) from exc

    body = np.asarray(body_rows, dtype=np.int64)
    connections = get_full_connectivity(body)

    def factory():
        env = gym.make(env_id, body=body, connections=connections)
        return _GymnasiumEnvAdapter(env)

    return factory
