"""
Optimizer - Adam over named parameters with finite-gradient checks.
"""

from __future__ import annotations

import logging
from typing import Mapping

import torch

logger = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    """A gradient passed to adam_step contains NaN or inf."""

    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"non-finite gradients for: {', '.join(names)}")


class AdamState:
    """
    Adam moments for a set of named tensors.

    Wraps torch.optim.Adam (bias-corrected, beta1=0.9, beta2=0.999,
    eps=1e-8 by default) and keeps the name -> tensor binding so moments can
    be exported, restored, or reset when a tensor is replaced.

    Usage:
        state = AdamState(store.group("R."), lr=0.003)
        adam_step(state, grads)
    """

    def __init__(
        self,
        params: Mapping[str, torch.Tensor],
        lr: float = 0.003,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.params: dict[str, torch.Tensor] = dict(params)
        self.optimizer = torch.optim.Adam(
            list(self.params.values()), lr=lr, betas=betas, eps=eps, foreach=False
        )
        self.steps = 0

    def names(self) -> list[str]:
        return list(self.params)

    def moments(self, name: str) -> dict[str, torch.Tensor]:
        """exp_avg, exp_avg_sq and per-tensor step, or empty before the first step."""
        state = self.optimizer.state.get(self.params[name], {})
        return {k: (v.detach().clone() if torch.is_tensor(v) else torch.tensor(float(v))) for k, v in state.items()}

    def rebind(self, name: str, tensor: torch.Tensor) -> None:
        """Point `name` at a new tensor and drop its moments (topology changed)."""
        old = self.params[name]
        self.optimizer.state.pop(old, None)
        group = self.optimizer.param_groups[0]
        group["params"] = [tensor if p is old else p for p in group["params"]]
        self.params[name] = tensor

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict[str, torch.Tensor]:
        """Flat tensor table: '<name>/exp_avg', '<name>/exp_avg_sq', '<name>/step', plus 'steps'."""
        table: dict[str, torch.Tensor] = {"steps": torch.tensor([self.steps], dtype=torch.int64)}
        for name in self.params:
            for key, value in self.moments(name).items():
                table[f"{name}/{key}"] = value.reshape(-1) if key == "step" else value
        return table

    def load_state_dict(self, table: Mapping[str, torch.Tensor]) -> None:
        self.steps = int(table["steps"].reshape(-1)[0]) if "steps" in table else 0
        for name, tensor in self.params.items():
            if f"{name}/exp_avg" not in table:
                self.optimizer.state.pop(tensor, None)
                continue
            exp_avg = table[f"{name}/exp_avg"]
            if exp_avg.shape != tensor.shape:
                raise ValueError(f"moment shape for {name!r} is {tuple(exp_avg.shape)}, expected {tuple(tensor.shape)}")
            step = table[f"{name}/step"].reshape(())
            self.optimizer.state[tensor] = {
                "step": step.clone(),
                "exp_avg": exp_avg.clone().to(tensor.dtype),
                "exp_avg_sq": table[f"{name}/exp_avg_sq"].clone().to(tensor.dtype),
            }


def adam_step(state: AdamState, grads: Mapping[str, torch.Tensor]) -> None:
    """
    Apply one Adam update.

    Names missing from `grads` are treated as zero gradients so every
    bound tensor advances its step counter.

    Raises:
        NonFiniteGradientError: any gradient holds NaN or inf (nothing is updated)
        ValueError: a gradient's shape differs from its parameter
    """
    bad = [name for name, g in grads.items() if name in state.params and not bool(torch.isfinite(g).all())]
    if bad:
        raise NonFiniteGradientError(bad)
    for name, tensor in state.params.items():
        grad = grads.get(name)
        if grad is None:
            grad = torch.zeros_like(tensor)
        elif grad.shape != tensor.shape:
            raise ValueError(f"gradient for {name!r} has shape {tuple(grad.shape)}, expected {tuple(tensor.shape)}")
        tensor.grad = grad.detach().to(tensor.dtype)
    state.optimizer.step()
    for tensor in state.params.values():
        tensor.grad = None
    state.steps += 1
    logger.debug("adam step %d over %d tensors", state.steps, len(state.params))
