"""External fitness evaluator: builds voxel robot environments, trains PPO
controllers, and serves scalar fitness over the morphoskill-eval protocol."""

from evogym_adapter.config import AdapterConfig, PPOConfig

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "PPOConfig"]
