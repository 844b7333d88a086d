from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from autodiff.value import Value
from helpers.errors import ContractError, DimensionError, EmptyGraphError

ACTIVATIONS = ('leaky_relu', 'relu', 'tanh', 'elu', 'sigmoid')
DEFAULT_LEAKY_SLOPE = 0.2


@dataclass
class FlopCounter:
    """Forward-pass floating point operation tally, by op name"""
    total: int = 0
    by_op: Dict[str, int] = field(default_factory=dict)

    def add(self, op: str, flops: int) -> None:
        self.total += int(flops)
        self.by_op[op] = self.by_op.get(op, 0) + int(flops)


_active_counter: ContextVar[Optional[FlopCounter]] = ContextVar('active_flop_counter', default=None)


@contextmanager
def count_flops() -> Iterator[FlopCounter]:
    """Count forward FLOPs of every op built inside the context"""
    counter = FlopCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def _tally(op: str, flops: int) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(op, flops)


@dataclass(frozen=True)
class SegmentIndex:
    """Segment id per row plus the number of segments (rows grouped by destination node)"""
    ids: np.ndarray
    count: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            raise ContractError(f"segment ids must lie in [0, {self.count})")
        object.__setattr__(self, 'ids', ids)

    def __len__(self) -> int:
        return int(self.ids.size)


def _check_2d(x: Value, name: str) -> None:
    if x.data.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")


def matmul(a: Value, b: Value) -> Value:
    """[m×k]·[k×n] -> [m×n]"""
    _check_2d(a, 'matmul lhs')
    _check_2d(b, 'matmul rhs')
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} · {b.shape}")
    m, k = a.shape
    n = b.shape[1]
    _tally('matmul', 2 * m * k * n)

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return Value(a.data @ b.data, (a, b), _backward, 'matmul')


def add(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes differ: {a.shape} vs {b.shape}")
    _tally('add', a.size)
    return Value(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def add_bias(x: Value, bias: Value) -> Value:
    """Row-vector bias addition, the only broadcast the engine supports"""
    _check_2d(x, 'add_bias input')
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise DimensionError(f"bias of shape {bias.shape} does not fit {x.shape}")
    _tally('add', x.size)
    return Value(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)), 'add_bias')


def mul(a: Value, b: Value) -> Value:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes differ: {a.shape} vs {b.shape}")
    _tally('mul', a.size)
    return Value(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), 'mul')


def scale(x: Value, factor: float) -> Value:
    _tally('mul', x.size)
    return Value(x.data * factor, (x,), lambda g: (g * factor,), 'scale')


def scale_rows(x: Value, weights: Value) -> Value:
    """Multiply row i of an [N×d] value by weights[i]"""
    _check_2d(x, 'scale_rows input')
    if weights.data.ndim != 1 or weights.shape[0] != x.shape[0]:
        raise DimensionError(f"row weights of shape {weights.shape} do not fit {x.shape}")
    _tally('mul', x.size)
    w = weights.data[:, None]

    def _backward(g):
        return g * w, (g * x.data).sum(axis=1)

    return Value(x.data * w, (x, weights), _backward, 'scale_rows')


def div_scalar(x: Value, s: Value) -> Value:
    """x / s for a scalar value s"""
    if s.size != 1:
        raise DimensionError(f"div_scalar divisor must be scalar, got {s.shape}")
    _tally('div', x.size)
    denom = s.data.reshape(())

    def _backward(g):
        return g / denom, np.reshape(-(g * x.data).sum() / (denom * denom), s.shape)

    return Value(x.data / denom, (x, s), _backward, 'div_scalar')


def gather_rows(x: Value, index) -> Value:
    """Select rows (or elements of a vector) by integer index; repeats allowed"""
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"gather index out of range for {x.shape[0]} rows")

    def _backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return Value(x.data[idx], (x,), _backward, 'gather')


def reshape(x: Value, shape: Tuple[int, ...]) -> Value:
    original = x.shape
    return Value(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),), 'reshape')


def concat(parts: Sequence[Value], axis: int = 0) -> Value:
    """Concatenate values in argument order along one axis"""
    if not parts:
        raise DimensionError("concat needs at least one part")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].data.ndim
    for part in parts:
        if part.data.ndim != ndim:
            raise DimensionError("concat parts differ in rank")
        other = [d for i, d in enumerate(part.shape) if i != axis]
        first = [d for i, d in enumerate(parts[0].shape) if i != axis]
        if other != first:
            raise DimensionError(f"concat non-axis dimensions differ: {part.shape} vs {parts[0].shape}")
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Value(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), _backward, 'concat')


def activation(x: Value, kind: str, slope: float = DEFAULT_LEAKY_SLOPE) -> Value:
    """Elementwise nonlinearity; relu-style kinks take the subgradient 1 at 0"""
    if kind not in ACTIVATIONS:
        raise ContractError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")
    _tally(kind, x.size)
    data = x.data

    if kind == 'relu':
        out = np.where(data >= 0, data, 0.0)
        local = np.where(data >= 0, 1.0, 0.0)
    elif kind == 'leaky_relu':
        out = np.where(data >= 0, data, slope * data)
        local = np.where(data >= 0, 1.0, slope)
    elif kind == 'tanh':
        out = np.tanh(data)
        local = 1.0 - out * out
    elif kind == 'elu':
        neg = np.expm1(np.minimum(data, 0.0))
        out = np.where(data > 0, data, neg)
        local = np.where(data > 0, 1.0, neg + 1.0)
    else:
        out = 0.5 * (1.0 + np.tanh(0.5 * data))
        local = out * (1.0 - out)

    return Value(out, (x,), lambda g: (g * local,), kind)


def segment_softmax(scores: Value, segments: SegmentIndex) -> Value:
    """Softmax of a score vector computed independently within each segment"""
    if scores.data.ndim != 1 or scores.shape[0] != len(segments):
        raise DimensionError(f"scores of shape {scores.shape} do not match {len(segments)} segment ids")
    ids = segments.ids
    _tally('segment_softmax', 4 * scores.size)

    seg_max = np.full(segments.count, -np.inf)
    np.maximum.at(seg_max, ids, scores.data)
    shifted = np.exp(scores.data - seg_max[ids])
    denom = np.zeros(segments.count)
    np.add.at(denom, ids, shifted)
    out = shifted / denom[ids]

    def _backward(g):
        weighted = np.zeros(segments.count)
        np.add.at(weighted, ids, g * out)
        return (out * (g - weighted[ids]),)

    return Value(out, (scores,), _backward, 'segment_softmax')


def segment_sum(values: Value, segments: SegmentIndex) -> Value:
    """Sum rows that share a segment id; empty segments give zero rows"""
    if values.shape[0] != len(segments):
        raise DimensionError(f"values with {values.shape[0]} rows do not match {len(segments)} segment ids")
    ids = segments.ids
    _tally('segment_sum', values.size)
    out = np.zeros((segments.count,) + values.shape[1:])
    np.add.at(out, ids, values.data)
    return Value(out, (values,), lambda g: (g[ids],), 'segment_sum')


def reduce(x: Value, kind: str) -> Value:
    """Column-wise mean or max over rows; max routes gradient to the first maximal row"""
    _check_2d(x, 'reduce input')
    n = x.shape[0]
    if n == 0:
        raise EmptyGraphError("cannot reduce over zero rows")
    _tally(f"reduce_{kind}", x.size)

    if kind == 'mean':
        def _backward(g):
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return Value(x.data.mean(axis=0), (x,), _backward, 'reduce_mean')

    if kind == 'max':
        winners = np.argmax(x.data, axis=0)
        columns = np.arange(x.shape[1])

        def _backward(g):
            grad = np.zeros_like(x.data)
            grad[winners, columns] = g
            return (grad,)
        return Value(x.data[winners, columns], (x,), _backward, 'reduce_max')

    raise ContractError(f"unknown reduction '{kind}'")


def total(x: Value) -> Value:
    """Sum of all elements as a scalar"""
    _tally('sum', x.size)
    return Value(x.data.sum(), (x,), lambda g: (np.full(x.shape, float(g)),), 'sum')


def log_softmax(x: Value) -> Value:
    if x.data.ndim != 1:
        raise DimensionError(f"log_softmax expects a vector, got {x.shape}")
    _tally('log_softmax', 4 * x.size)
    shifted = x.data - x.data.max()
    out = shifted - np.log(np.exp(shifted).sum())
    probs = np.exp(out)
    return Value(out, (x,), lambda g: (g - probs * g.sum(),), 'log_softmax')


def l2_norm(x: Value) -> Value:
    _tally('l2_norm', 2 * x.size)
    norm = float(np.sqrt((x.data * x.data).sum()))

    def _backward(g):
        if norm == 0.0:
            return (np.zeros_like(x.data),)
        return (float(g) * x.data / norm,)

    return Value(norm, (x,), _backward, 'l2_norm')
