"""
Run Hub - Runtime settings, run identifiers and metrics export.

Provides local storage for:
- Runtime configuration (precision, threads, seed)
- Metrics export (loss curves, PSNR trajectories, fusion timing)
"""

from .config import HubConfig, get_config, set_config
from .metrics import MetricsExporter
from .session import ensure_output_dir, generate_run_id

__all__ = [
    "HubConfig",
    "get_config",
    "set_config",
    "MetricsExporter",
    "ensure_output_dir",
    "generate_run_id",
]
