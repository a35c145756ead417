"""Define-by-run reverse-mode tensor engine.

Every operation is a :class:`Function` subclass working on raw numpy arrays.
Applying a function records a node on the output tensor; :meth:`Tensor.backward`
walks those nodes in reverse topological order.
"""
from __future__ import annotations

import contextlib
from typing import Any, Iterator, Optional, Sequence

import numpy as np

_DEBUG = False
_GRAD_ENABLED = True


def set_debug(flag: bool) -> None:
    """When on, every forward result is checked for NaN/Inf."""
    global _DEBUG
    _DEBUG = bool(flag)


def is_debug() -> bool:
    return _DEBUG


@contextlib.contextmanager
def debug_mode(flag: bool = True) -> Iterator[None]:
    prev = _DEBUG
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_float_array(data: Any, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward(*arrays, **kwargs)`` returning an ndarray and
    ``backward(grad)`` returning one gradient (or ``None``) per input tensor.
    State needed by ``backward`` is stashed on ``self`` during ``forward``.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if _DEBUG and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{cls.__name__} produced non-finite values")
        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, _node=fn if requires_grad else None)


class Tensor:
    """N-dimensional float array with optional gradient accumulation.

    Image tensors use the ``[B, C, H, W]`` layout throughout the package.
    """

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None, _node: Optional[Function] = None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node = _node

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autograd ---------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate ``.grad`` on every leaf reachable from this tensor.

        Only scalar tensors may be differentiated without an explicit seed
        gradient. Repeated calls accumulate into existing ``.grad`` arrays.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for t in reversed(order):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            if t._node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            in_grads = t._node.backward(g)
            for inp, ig in zip(t._node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if ig.shape != inp.shape:
                    raise RuntimeError(
                        f"{type(t._node).__name__} returned grad of shape {ig.shape} for input {inp.shape}"
                    )
                key = id(inp)
                pending[key] = ig if key not in pending else pending[key] + ig

    # -- operator sugar (implemented in ops) -------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scalar_mul(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum(self)

    def mean(self):
        from . import ops
        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Inputs-before-outputs ordering of every tensor that needs a gradient."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def as_tensor(x: Any, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
