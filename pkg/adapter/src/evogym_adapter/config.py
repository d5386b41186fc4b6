"""Adapter configuration: environment-id mapping and PPO defaults."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

# (task base name, scale) -> environment id
DEFAULT_ENV_IDS = {
    ("Walker", 5): "Walker-v0",
    ("Walker", 10): "Walker-v0-10x10",
    ("BridgeWalker", 5): "BridgeWalker-v0",
    ("BridgeWalker", 10): "BridgeWalker-v0-10x10",
    ("Balancer", 5): "Balancer-v0",
    ("Balancer", 10): "Balancer-v0-10x10",
    ("Carrier", 5): "Carrier-v0",
    ("Carrier", 10): "Carrier-v0-10x10",
    ("Climber", 5): "Climber-v0",
    ("Climber", 10): "Climber-v0-10x10",
    ("Jumper", 5): "Jumper-v0",
    ("Jumper", 10): "Jumper-v0-10x10",
    ("Pusher", 5): "Pusher-v0",
    ("Pusher", 10): "Pusher-v0-10x10",
}


@dataclass
class PPOConfig:
    total_steps: int = 512_000
    n_envs: int = 4
    n_steps: int = 128
    epochs: int = 4
    batch_size: int = 128
    learning_rate: float = 2.5e-4
    lr_linear_decay: bool = True
    clip_range: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    log_interval_updates: int = 50
    # EvoGym reference controllers are small MLPs; layer sizes follow the
    # common reference default since none are mandated.
    hidden_sizes: tuple = (64, 64)


@dataclass
class AdapterConfig:
    env_ids: dict = field(default_factory=lambda: dict(DEFAULT_ENV_IDS))
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def served_tasks(self) -> list:
        return sorted(self.env_ids.values())

    def env_id_for(self, task: str, scale: int) -> str | None:
        # requests may carry either the env id itself or a (task, scale) pair
        if task in self.env_ids.values():
            return task
        return self.env_ids.get((task, scale))

    @classmethod
    def load(cls, path) -> "AdapterConfig":
        doc = json.loads(Path(path).read_text())
        cfg = cls()
        if "env_ids" in doc:
            cfg.env_ids = {
                (entry["task"], int(entry["scale"])): entry["env_id"]
                for entry in doc["env_ids"]
            }
        for key, value in doc.get("ppo", {}).items():
            if hasattr(cfg.ppo, key):
                setattr(cfg.ppo, key, value)
        return cfg

    def dump(self) -> dict:
        return {
            "env_ids": [
                {"task": t, "scale": s, "env_id": e}
                for (t, s), e in sorted(self.env_ids.items())
            ],
            "ppo": asdict(self.ppo),
        }
