"""
Parameter Store - Named, seeded learnable tensors for every network.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator, Protocol

import torch


class LayerSpec(Protocol):
    def parameter_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(suffix, shape, fan_in) per tensor; fan_in == 0 marks a bias."""
        ...


class ParameterStore:
    """
    Ordered collection of named leaf tensors.

    Weights are drawn fan-in-scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    from a generator seeded once per store, biases start at zero. Tensors are
    created in registration order, so the same seed and the same sequence
    of register() calls reproduce identical values.

    Usage:
        store = ParameterStore(seed=0)
        store.register("G", MLPSpec((3, 16, 16)))
        store["G.0.weight"]       # (3, 16)
        store.group("R.")         # every decoder tensor
    """

    def __init__(self, seed: int = 0, dtype: torch.dtype | None = None):
        self.seed = seed
        self.dtype = dtype or torch.get_default_dtype()
        self._generator = torch.Generator().manual_seed(seed)
        self._params: OrderedDict[str, torch.Tensor] = OrderedDict()

    def register(self, prefix: str, spec: LayerSpec) -> None:
        for suffix, shape, fan_in in spec.parameter_shapes():
            name = f"{prefix}.{suffix}"
            if fan_in:
                bound = 1.0 / math.sqrt(fan_in)
                value = torch.rand(shape, generator=self._generator, dtype=self.dtype) * (2 * bound) - bound
            else:
                value = torch.zeros(shape, dtype=self.dtype)
            self.add(name, value)

    def add(self, name: str, value: torch.Tensor) -> torch.Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        if not bool(torch.isfinite(value).all()):
            raise ValueError(f"parameter {name!r} has non-finite values")
        tensor = value.detach().clone().to(self.dtype).requires_grad_(True)
        self._params[name] = tensor
        return tensor

    # -- access -------------------------------------------------------------

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def group(self, *prefixes: str) -> dict[str, torch.Tensor]:
        """Tensors whose names start with any prefix, in registration order."""
        return {name: t for name, t in self._params.items() if name.startswith(prefixes)}

    def numel(self) -> int:
        return sum(t.numel() for t in self._params.values())

    # -- mutation -----------------------------------------------------------

    @torch.no_grad()
    def fill_(self, value: float, *prefixes: str) -> None:
        """Overwrite every matching tensor with a constant (test and ablation helper)."""
        for tensor in self.group(*prefixes).values():
            tensor.fill_(value)

    @torch.no_grad()
    def assign(self, name: str, value: torch.Tensor) -> None:
        target = self[name]
        if tuple(value.shape) != tuple(target.shape):
            raise ValueError(f"shape of {name!r} is {tuple(target.shape)}, got {tuple(value.shape)}")
        target.copy_(value)

    def substitute(self, overrides: dict[str, torch.Tensor]) -> "ParameterStore":
        """
        Shallow copy whose named entries are the given tensors, autograd history kept.

        Lets a caller differentiate a forward pass with respect to tensors it
        owns (gradient checks, functional evaluation) without touching self.
        """
        view = ParameterStore(seed=self.seed, dtype=self.dtype)
        view._params = OrderedDict(self._params)
        for name, value in overrides.items():
            target = self[name]
            if tuple(value.shape) != tuple(target.shape):
                raise ValueError(f"shape of {name!r} is {tuple(target.shape)}, got {tuple(value.shape)}")
            view._params[name] = value
        return view

    def check_finite(self) -> list[str]:
        """Names of tensors holding NaN or inf."""
        return [name for name, t in self._params.items() if not bool(torch.isfinite(t).all())]

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> OrderedDict[str, torch.Tensor]:
        return OrderedDict((name, t.detach().clone()) for name, t in self._params.items())

    def load_state_dict(self, state: dict[str, torch.Tensor]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, value in state.items():
            self.assign(name, value)

    @classmethod
    def from_state_dict(cls, state: dict[str, torch.Tensor], seed: int = 0) -> "ParameterStore":
        dtype = next(iter(state.values())).dtype if state else None
        store = cls(seed=seed, dtype=dtype)
        for name, value in state.items():
            store.add(name, value)
        return store
