"""
Metrics Hook - Record pipeline events into a MetricsExporter.
"""

from strands.hooks import HookProvider, HookRegistry

from hub import MetricsExporter

from .events import EvaluationEvent, FrameFusedEvent, IterationEvent, TopologyEvent


class MetricsHook(HookProvider):
    """
    Hook that collects loss curves, PSNR trajectories and fusion timing.

    Usage:
        exporter = MetricsExporter(run_name="finetune", run_id=run_id)
        trainer = Trainer(..., hooks=[MetricsHook(exporter)])
        exporter.export()
    """

    def __init__(self, exporter: MetricsExporter, loss_every: int = 1):
        self.exporter = exporter
        self.loss_every = max(1, loss_every)

    def register_hooks(self, registry: HookRegistry) -> None:
        registry.add_callback(IterationEvent, self.on_iteration)
        registry.add_callback(EvaluationEvent, self.on_evaluation)
        registry.add_callback(TopologyEvent, self.on_topology)
        registry.add_callback(FrameFusedEvent, self.on_frame)

    def on_iteration(self, event: IterationEvent) -> None:
        if event.iteration % self.loss_every == 0:
            self.exporter.append("loss_curve", {"iteration": event.iteration, "loss": event.loss})
        self.exporter.set_stats("iterations", event.iteration + 1)

    def on_evaluation(self, event: EvaluationEvent) -> None:
        self.exporter.append(
            "psnr_trajectory",
            {"iteration": event.iteration, "split": event.split, "psnr": event.psnr},
        )

    def on_topology(self, event: TopologyEvent) -> None:
        self.exporter.append(
            "topology",
            {
                "kind": event.kind,
                "iteration": event.iteration,
                "voxels_before": event.voxels_before,
                "voxels_after": event.voxels_after,
            },
        )

    def on_frame(self, event: FrameFusedEvent) -> None:
        self.exporter.append(
            "fusion_frames",
            {
                "frame": event.frame,
                "local_voxels": event.local_voxels,
                "global_voxels": event.global_voxels,
                "pruned": event.pruned,
                "seconds": event.seconds,
            },
            category="timing",
        )
