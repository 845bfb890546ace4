"""
Autodiff Tape - Record the primitive operations of a forward pass.

Gradients come from torch.autograd; the tape keeps the ordered list of
named operations that produced each tensor so a backward pass can check
that its loss belongs to the recorded computation, and so runs can report
what they executed.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping

import torch


class NonScalarLossError(ValueError):
    """backward() was asked to differentiate a tensor with more than one element."""


@dataclass(frozen=True)
class TapeNode:
    index: int
    op: str
    inputs: tuple[int, ...]  # indices of earlier nodes, -1 for untracked tensors
    shape: tuple[int, ...]


@dataclass
class Tape:
    """
    Ordered record of named operations.

    Usage:
        tape = Tape()
        x = tape.watch("x", torch.tensor(3.0))
        loss = tape.record("square", x * x, x)
        grads = backward(tape, loss)   # {"x": tensor(6.)}
    """

    nodes: list[TapeNode] = field(default_factory=list)
    watched: dict[str, torch.Tensor] = field(default_factory=dict)
    _outputs: dict[int, tuple[int, torch.Tensor]] = field(default_factory=dict, repr=False)

    def watch(self, name: str, tensor: torch.Tensor) -> torch.Tensor:
        """Register a leaf whose gradient backward() should return."""
        if not tensor.requires_grad:
            tensor = tensor.detach().requires_grad_(True)
        self.watched[name] = tensor
        self._push("leaf:" + name, tensor, ())
        return tensor

    def record(self, op: str, output: torch.Tensor, *inputs: torch.Tensor) -> torch.Tensor:
        self._push(op, output, inputs)
        return output

    def _push(self, op: str, output: torch.Tensor, inputs) -> None:
        refs = tuple(self._outputs.get(id(t), (-1, None))[0] for t in inputs if torch.is_tensor(t))
        node = TapeNode(len(self.nodes), op, refs, tuple(output.shape))
        self.nodes.append(node)
        self._outputs[id(output)] = (node.index, output)

    def contains(self, tensor: torch.Tensor) -> bool:
        entry = self._outputs.get(id(tensor))
        return entry is not None and entry[1] is tensor

    def op_counts(self) -> Counter:
        return Counter(node.op for node in self.nodes)

    def clear(self) -> None:
        self.nodes.clear()
        self.watched.clear()
        self._outputs.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def record(tape: Tape | None, op: str, output: torch.Tensor, *inputs: torch.Tensor) -> torch.Tensor:
    """Record on `tape` when one is given; a no-op otherwise."""
    if tape is not None:
        tape.record(op, output, *inputs)
    return output


def backward(
    tape: Tape,
    loss: torch.Tensor,
    sources: Mapping[str, torch.Tensor] | None = None,
    retain_graph: bool = False,
) -> dict[str, torch.Tensor]:
    """
    Reverse-mode gradients of a scalar loss.

    Args:
        tape: Tape the loss was recorded on
        loss: Single-element tensor
        sources: Named tensors to differentiate against (default: the tape's
            watched leaves). Sources the loss does not depend on get zeros.
        retain_graph: Keep the autograd graph for a second backward pass

    Returns:
        Gradient per source name, shaped like the source
    """
    if loss.numel() != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not tape.contains(loss):
        raise ValueError("loss was not recorded on this tape")
    sources = dict(sources if sources is not None else tape.watched)
    names = [name for name, t in sources.items() if t.requires_grad]
    grads: dict[str, torch.Tensor] = {name: torch.zeros_like(t) for name, t in sources.items()}
    if not names or not loss.requires_grad:
        return grads

    computed = torch.autograd.grad(
        loss.reshape(()),
        [sources[name] for name in names],
        allow_unused=True,
        retain_graph=retain_graph,
    )
    for name, grad in zip(names, computed):
        if grad is not None:
            grads[name] = grad
    return grads
