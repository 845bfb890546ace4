"""
Hub Configuration - Load runtime settings from environment variables.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import torch

PRECISIONS = {"f64": torch.float64, "f32": torch.float32}


@dataclass
class HubConfig:
    """
    Runtime configuration shared by every command.

    Loads from environment variables with sensible defaults.

    Environment Variables:
        VOXFUSE_HUB_DIR: Local directory for run metrics (default: ./.voxfuse_hub)
        VOXFUSE_PRECISION: Floating point precision, f64 or f32 (default: f64)
        VOXFUSE_THREADS: Worker thread cap, 0 keeps the torch default (default: 0)
        VOXFUSE_SEED: Default random seed (default: 0)
    """

    local_dir: Path = field(default_factory=lambda: Path(os.getenv("VOXFUSE_HUB_DIR", "./.voxfuse_hub")))
    precision: str = field(default_factory=lambda: os.getenv("VOXFUSE_PRECISION", "f64"))
    threads: int = field(default_factory=lambda: int(os.getenv("VOXFUSE_THREADS", "0")))
    seed: int = field(default_factory=lambda: int(os.getenv("VOXFUSE_SEED", "0")))

    metrics_subdir: str = "metrics"

    def __post_init__(self):
        """Validate configuration."""
        if self.precision not in PRECISIONS:
            raise ValueError(f"VOXFUSE_PRECISION must be one of {sorted(PRECISIONS)}, got {self.precision!r}")
        if self.threads < 0:
            raise ValueError(f"VOXFUSE_THREADS must be >= 0, got {self.threads}")
        self.local_dir = Path(self.local_dir)

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    @property
    def local_metrics_dir(self) -> Path:
        path = self.local_dir / self.metrics_subdir
        path.mkdir(parents=True, exist_ok=True)
        return path

    def apply(self) -> None:
        """Apply thread and precision settings to torch."""
        if self.threads:
            torch.set_num_threads(self.threads)
        torch.set_default_dtype(self.dtype)


# Global config instance (can be overridden)
_config: HubConfig | None = None


def get_config() -> HubConfig:
    """Get or create the global hub configuration."""
    global _config
    if _config is None:
        _config = HubConfig()
    return _config


def set_config(config: HubConfig) -> None:
    """Override the global hub configuration."""
    global _config
    _config = config
