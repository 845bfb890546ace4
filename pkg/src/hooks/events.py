"""
Hook Events - Typed events emitted by training, fusion and fine-tuning.

Events are strands hook events, so any `strands.hooks.HookProvider` can
observe a run:

    class MyHook(HookProvider):
        def register_hooks(self, registry: HookRegistry) -> None:
            registry.add_callback(IterationEvent, self.on_iteration)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

from strands.hooks import BaseHookEvent, HookProvider, HookRegistry


@dataclass
class IterationEvent(BaseHookEvent):
    """One optimizer step finished."""

    stage: str
    iteration: int
    loss: float
    frame: int | None = None


@dataclass
class EvaluationEvent(BaseHookEvent):
    """Held-out (or train) views were rendered and scored."""

    stage: str
    iteration: int
    psnr: float
    split: str = "heldout"


@dataclass
class TopologyEvent(BaseHookEvent):
    """The global volume changed its active set (prune or subdivide)."""

    kind: Literal["prune", "subdivide"]
    iteration: int
    voxels_before: int
    voxels_after: int


@dataclass
class FrameFusedEvent(BaseHookEvent):
    """A frame's local volume was fused into the global volume."""

    frame: int
    local_voxels: int
    global_voxels: int
    pruned: int
    seconds: float


class PipelineHooks(HookRegistry):
    """HookRegistry built from the provider list a stage or CLI command receives."""

    @classmethod
    def from_providers(cls, providers: list[HookProvider] | None) -> "PipelineHooks":
        registry = cls()
        for provider in providers or []:
            registry.add_hook(provider)
        return registry
