"""
Dense tensor with reverse-mode automatic differentiation.

A Tensor wraps a C-ordered numpy array. Operations in `mttrack.compute.ops`
return new tensors that remember their parents and a backward closure; calling
`backward()` on a scalar result walks the recorded graph in reverse
topological order.
"""
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from mttrack.core.exceptions import ContractError

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        name: Optional[str] = None,
    ):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls(data)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Populate `.grad` on every reachable tensor that requires grad"""
        if self.data.size != 1:
            raise ContractError(
                user_message=f"backward() needs a scalar loss, got shape {self.shape}.",
                details={"shape": list(self.shape)},
            )
        if not self.requires_grad:
            return

        upstream = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                upstream[key] = pg if key not in upstream else upstream[key] + pg

    # operator sugar, implemented in ops
    def __add__(self, other):
        from mttrack.compute import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from mttrack.compute import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from mttrack.compute import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from mttrack.compute import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from mttrack.compute import ops
        return ops.div(self, other)

    def __neg__(self):
        from mttrack.compute import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from mttrack.compute import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from mttrack.compute import ops
        return ops.getitem(self, index)

    def sum(self, axis=None):
        from mttrack.compute import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from mttrack.compute import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from mttrack.compute import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from mttrack.compute import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)
