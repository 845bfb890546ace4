"""
Hooks - Pipeline events, the hook registry and built-in observers.
"""

from strands.hooks import HookProvider, HookRegistry

from .events import (
    EvaluationEvent,
    FrameFusedEvent,
    IterationEvent,
    PipelineHooks,
    TopologyEvent,
)
from .logging_hook import LoggingHook
from .metrics_hook import MetricsHook

__all__ = [
    "EvaluationEvent",
    "FrameFusedEvent",
    "HookProvider",
    "HookRegistry",
    "IterationEvent",
    "PipelineHooks",
    "TopologyEvent",
    "LoggingHook",
    "MetricsHook",
]
