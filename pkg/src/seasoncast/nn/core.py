"""Tiny reverse-mode engine over numpy arrays.

Operations record a graph while gradients are enabled; ``backward`` walks the
recorded graph once in reverse topological order and accumulates gradients
into every reachable leaf.  Everything is deterministic: identical inputs
rebuild an identical graph and produce bitwise-identical gradients.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import GraphStateError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording, e.g. for validation and inference passes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A value in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A named persistent leaf; optimizers update ``.data`` in place."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def make_node(data, parents, backward_fn) -> Tensor:
    """Create an op output, recording the edge only if gradients are on and
    some parent needs them."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def accumulate_grad(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor):
    """Populate ``.grad`` of every leaf reachable from ``loss``.

    ``loss`` must be a scalar produced by recorded operations.
    """
    if loss._backward_fn is None:
        raise GraphStateError("backward() called on a tensor with no recorded forward pass")
    if loss.data.size != 1:
        raise GraphStateError(f"backward() needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._backward_fn is not None and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        node._backward_fn(node.grad)
