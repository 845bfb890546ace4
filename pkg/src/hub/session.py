"""
Run Sessions - Run identifiers and output directories.
"""

from datetime import datetime
from pathlib import Path


def generate_run_id(run_name: str) -> str:
    """Generate a unique run ID with timestamp."""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    return f"{run_name}_{timestamp}"


def ensure_output_dir(path: str | Path) -> Path:
    """Create an output directory (and parents) and return it."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
