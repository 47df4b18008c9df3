"""Parameter container and the module base class.

Every layer implements ``forward`` and ``backward`` as a pair. ``forward``
caches whatever ``backward`` needs; ``backward`` receives the upstream
gradient, accumulates into the ``grad`` of each owned :class:`Param` and
returns the gradient with respect to the layer input.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np


class Param:
    """A learnable tensor and its gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Param(shape={self.value.shape}, dtype={self.value.dtype})"


class Module:
    """Base class: parameter discovery by attribute walk."""

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(attr, Param):
                yield full, attr
            elif isinstance(attr, Module):
                yield from attr.named_params(full + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{full}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{full}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for name, attr in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(attr, Module):
                yield from attr.modules()
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Module):
                        yield from item.modules()

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from ..errors import CheckpointError

        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.value.shape:
                raise CheckpointError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs model {p.value.shape}"
                )
            p.value = arr.astype(p.value.dtype, copy=True)
            p.grad = np.zeros_like(p.value)

    def zero_grad(self) -> None:
        for p in self.params():
            p.zero_grad()

    def num_params(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def cast(self, dtype) -> None:
        """Cast every parameter (and grad buffer) in place."""
        for p in self.params():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)

    def set_rng(self, rng: np.random.Generator | None) -> None:
        """Hand a generator to every dropout site below this module."""
        for m in self.modules():
            if hasattr(m, "rng"):
                m.rng = rng


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)
