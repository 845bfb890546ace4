"""
Config - Network architecture, training settings and default presets.
"""

from .train_config import ArchitectureConfig, TrainConfig

__all__ = ["ArchitectureConfig", "TrainConfig"]
