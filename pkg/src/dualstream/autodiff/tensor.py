"""Reverse-mode autodiff core: a float64 array that remembers how it was made."""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.shape != self.values.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.values.shape}")
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None) -> None:
        """Propagate ``grad`` (default 1 for scalars) to every requires_grad leaf.

        Intermediate gradients are released once consumed; leaf gradients
        accumulate across calls until :meth:`zero_grad`.
        """
        if grad is None:
            if self.values.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.values)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream gradient shape {grad.shape} != output shape {self.shape}")
        order = _topological(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            node.grad = None


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def make_result(values: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op output; attaches the graph only if some parent needs gradients."""
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
