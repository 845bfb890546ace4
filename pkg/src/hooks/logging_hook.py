"""
Logging Hook - Print training progress, topology changes and fusion timing.
"""

from strands.hooks import HookProvider, HookRegistry

from .events import EvaluationEvent, FrameFusedEvent, IterationEvent, TopologyEvent


class LoggingHook(HookProvider):
    """
    Hook that prints pipeline progress as it happens.

    Usage:
        trainer = Trainer(..., hooks=[LoggingHook(every=100)])
    """

    def __init__(self, verbose: bool = True, every: int = 100):
        """
        Initialize the logging hook.

        Args:
            verbose: If True, print every event kind. If False, only evaluations and topology changes.
            every: Print one iteration line per this many optimizer steps.
        """
        self.iterations = 0
        self.verbose = verbose
        self.every = max(1, every)

    def register_hooks(self, registry: HookRegistry) -> None:
        registry.add_callback(IterationEvent, self.log_iteration)
        registry.add_callback(EvaluationEvent, self.log_evaluation)
        registry.add_callback(TopologyEvent, self.log_topology)
        registry.add_callback(FrameFusedEvent, self.log_frame)

    def log_iteration(self, event: IterationEvent) -> None:
        self.iterations += 1
        if not self.verbose or event.iteration % self.every:
            return
        frame = f" frame={event.frame}" if event.frame is not None else ""
        print(f"[{event.stage}] iter {event.iteration:>6} loss={event.loss:.6f}{frame}")

    def log_evaluation(self, event: EvaluationEvent) -> None:
        print("=" * 60)
        print(f"EVALUATION [{event.stage}] iter {event.iteration}")
        print(f"  {event.split} PSNR: {event.psnr:.3f} dB")
        print("=" * 60)

    def log_topology(self, event: TopologyEvent) -> None:
        print("=" * 60)
        print(f"{event.kind.upper()} at iter {event.iteration}")
        print(f"  voxels: {event.voxels_before} -> {event.voxels_after}")
        print("=" * 60)

    def log_frame(self, event: FrameFusedEvent) -> None:
        if not self.verbose:
            return
        print(
            f"[fuse] frame {event.frame:>4} local={event.local_voxels} "
            f"global={event.global_voxels} pruned={event.pruned} {event.seconds * 1000:.1f} ms"
        )
