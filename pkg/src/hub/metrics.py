"""
Metrics Export - Save run metrics to local storage.

One JSON document per run under <hub>/metrics/<date>/<run_id>.json with
three sections:
    timing  wall-clock figures (seconds), per-frame fusion records
    stats   scalar results (voxel counts, final loss, parameter count)
    custom  series appended during the run (loss curve, PSNR trajectory, topology)
"""

import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any

from .config import get_config

SECTIONS = ("timing", "stats", "custom")


def _summarize(document: dict[str, Any]) -> None:
    """Derive headline numbers from the recorded series."""
    custom, stats, timing = document["custom"], document["stats"], document["timing"]
    losses = [p["loss"] for p in custom.get("loss_curve", []) if math.isfinite(p["loss"])]
    if losses:
        stats.setdefault("final_loss", losses[-1])
        stats["min_loss"] = min(losses)
    trajectory = custom.get("psnr_trajectory", [])
    if trajectory:
        stats["best_psnr"] = max(p["psnr"] for p in trajectory)
    frames = timing.get("fusion_frames", [])
    if frames:
        seconds = [f["seconds"] for f in frames]
        timing.setdefault("mean_frame_seconds", sum(seconds) / len(seconds))
        timing["max_frame_seconds"] = max(seconds)


class MetricsExporter:
    """
    Collect and export the metrics of one training or reconstruction run.

    Usage:
        exporter = MetricsExporter(run_name="train-local", run_id=generate_run_id("train-local"))
        exporter.set_stats("active_voxels", 5120)
        exporter.append("loss_curve", {"iteration": 10, "loss": 0.02})
        exporter.export()  # <hub>/metrics/2024-12-15/train-local_20241215_101010.json
    """

    def __init__(self, run_name: str, run_id: str, stage: str | None = None):
        self.run_name = run_name
        self.run_id = run_id
        self.stage = stage
        self.config = get_config()
        self.started = datetime.now()
        self.sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}

    def _section(self, category: str) -> dict[str, Any]:
        if category not in self.sections:
            raise ValueError(f"unknown metrics section {category!r}; choose from {SECTIONS}")
        return self.sections[category]

    def set_timing(self, key: str, seconds: float) -> None:
        self.sections["timing"][key] = seconds

    def set_stats(self, key: str, value: Any) -> None:
        self.sections["stats"][key] = value

    def append(self, key: str, value: Any, category: str = "custom") -> None:
        """Append to a list-valued metric (loss curves, trajectories, per-frame records)."""
        self._section(category).setdefault(key, []).append(value)

    def get(self, key: str, category: str = "custom", default: Any = None) -> Any:
        return self._section(category).get(key, default)

    def to_dict(self) -> dict[str, Any]:
        completed = datetime.now()
        document = {
            "run_name": self.run_name,
            "run_id": self.run_id,
            "stage": self.stage,
            "precision": self.config.precision,
            "seed": self.config.seed,
            "started_at": self.started.isoformat(),
            "completed_at": completed.isoformat(),
            **{name: dict(values) for name, values in self.sections.items()},
        }
        document["timing"]["total_runtime_seconds"] = (completed - self.started).total_seconds()
        _summarize(document)
        return document

    def export(self, directory: Path | None = None) -> Path:
        """
        Write the run document.

        Args:
            directory: Override the hub metrics directory

        Returns:
            Path of the written JSON file
        """
        document = self.to_dict()
        date_dir = (directory or self.config.local_metrics_dir) / self.started.strftime("%Y-%m-%d")
        date_dir.mkdir(parents=True, exist_ok=True)

        path = date_dir / f"{self.run_id}.json"
        path.write_text(json.dumps(document, indent=2, default=str))
        return path
