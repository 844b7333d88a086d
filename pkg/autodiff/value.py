from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from helpers.errors import ContractError, DimensionError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Value:
    """
    Dense float64 array that records how it was produced.

    Values are immutable once built. Calling `backward` on a scalar walks the
    recorded op graph in reverse topological order and fills `grad` on every
    upstream value that requires it.
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'parents', 'backward_fn', 'op', '__weakref__')

    def __init__(self,
                 data,
                 parents: Tuple['Value', ...] = (),
                 backward_fn: Optional[BackwardFn] = None,
                 op: str = '',
                 requires_grad: bool = False):
        array = np.array(data, dtype=np.float64, order='C')
        array.setflags(write=False)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on value of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, op={self.op or 'leaf'})"


class Parameter(Value):
    """Trainable leaf value with a stable name (used as the optimizer key)"""

    __slots__ = ('name',)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def constant(data) -> Value:
    """Leaf value that never receives a gradient"""
    return Value(data)


def _topological_order(root: Value) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Value, parameters: Optional[Iterable[Value]] = None) -> None:
    """
    Populate gradients of every value upstream of a scalar loss

    Args:
        loss (Value): Scalar output of the computation graph
        parameters (Iterable[Value]): Parameters that must end up with a grad
            buffer; those not reachable from the loss get zeros

    Raises:
        ContractError: If the loss is not a scalar
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    if parameters is not None:
        for param in parameters:
            param.grad = np.zeros_like(param.data)

    order = _topological_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)

    # Reverse topological order: each op record is visited exactly once
    for node in reversed(order):
        if node.backward_fn is None or not node.requires_grad:
            continue
        parent_grads = node.backward_fn(node.grad)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent.grad += parent_grad
