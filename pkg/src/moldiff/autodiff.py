"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is built eagerly: every op computes its value at construction time
and remembers how to push a cotangent back to its parents.  Calling
``backward()`` on a scalar node fills ``.grad`` on every tracked node that
feeds it.  Only nodes with ``track=True`` (parameters, or anything downstream
of one) participate in the backward walk; plain data stays cheap.

All values are ``float64``.  Inputs of any other dtype are converted on entry
and never converted back.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AdamState",
    "ShapeMismatchError",
    "Tensor",
    "adam_step",
    "add",
    "concat",
    "constant",
    "div",
    "exp",
    "gather",
    "grad_check",
    "load_checkpoint",
    "log",
    "logsigmoid",
    "matmul",
    "mean",
    "mul",
    "parameter",
    "relu",
    "reshape",
    "save_checkpoint",
    "scatter_add",
    "sigmoid",
    "sqrt",
    "sub",
    "tensor_sum",
    "transpose",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes cannot be combined."""


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """One node of the differentiation DAG.

    Parameters
    ----------
    value : array_like
        Forward value, converted to float64 and cached.
    parents : tuple[Tensor, ...]
        Graph predecessors.
    vjp : callable or None
        Maps the cotangent of this node to a tuple of parent cotangents,
        aligned with ``parents``.  ``None`` for leaves.
    track : bool
        Request gradient accumulation on this leaf.  Interior nodes track
        automatically whenever any parent does.
    """

    __slots__ = ("value", "grad", "track", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None, track=False):
        self.value = _as_f64(value)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._vjp = vjp
        self.track = bool(track) or any(p.track for p in self._parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        """Reverse sweep from a scalar output.

        Fills ``.grad`` on every tracked node reachable from ``self``;
        accumulation order is the reverse of a deterministic depth-first
        topological order, so repeated runs on the same graph are bitwise
        reproducible.
        """
        if self.value.shape != ():
            raise ShapeMismatchError(
                f"backward() needs a scalar output, got shape {self.value.shape}"
            )
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.track:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else _as_f64(g)
                else:
                    parent.grad = parent.grad + g

    # arithmetic sugar; plain arrays/scalars become untracked constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, track={self.track})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Leaf that never accumulates a gradient."""
    return Tensor(x)


def parameter(x) -> Tensor:
    """Leaf that accumulates a gradient on backward()."""
    return Tensor(x, track=True)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; only tracked nodes matter for the backward sweep
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.track:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.track and id(p) not in seen:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# primitive ops


def _check_broadcast(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    return Tensor(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise division; a zero anywhere in the denominator is an error."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    if np.any(b.value == 0.0):
        raise ZeroDivisionError("div: denominator contains zero")
    return Tensor(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(
            f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: inner dimensions differ, {a.shape} vs {b.shape}"
        )
    return Tensor(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy() / count,)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy() / count,)

    return Tensor(a.value.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def concat(parts: list[Tensor] | tuple[Tensor, ...], axis: int = 0) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``a`` selected along axis 0 by an integer index array."""
    a = _wrap(a)
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(
            f"gather: index out of range for axis of length {a.shape[0]}"
        )

    def vjp(g):
        out = np.zeros(a.shape, dtype=np.float64)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(a.value[index], (a,), vjp)


def scatter_add(a: Tensor, index: np.ndarray, size: int) -> Tensor:
    """Sum rows of ``a`` into ``size`` bins given by ``index`` along axis 0."""
    a = _wrap(a)
    index = np.asarray(index)
    if index.shape != (a.shape[0],):
        raise ShapeMismatchError(
            f"scatter_add: index shape {index.shape} does not match leading axis {a.shape[0]}"
        )
    if index.size and (index.min() < 0 or index.max() >= size):
        raise IndexError(f"scatter_add: index out of range for {size} bins")
    out = np.zeros((size,) + a.shape[1:], dtype=np.float64)
    np.add.at(out, index, a.value)
    return Tensor(out, (a,), lambda g: (g[index],))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    inverse = np.argsort(axes)
    return Tensor(
        np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),)
    )


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    keep = a.value > 0
    return Tensor(np.where(keep, a.value, 0.0), (a,), lambda g: (g * keep,))


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    # piecewise form avoids overflow for large |x|
    y = _expit(a.value)
    return Tensor(y, (a,), lambda g: (g * y * (1.0 - y),))


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.value)
    return Tensor(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    if np.any(a.value <= 0.0):
        raise ValueError("log: input must be strictly positive")
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    if np.any(a.value < 0.0):
        raise ValueError("sqrt: input must be nonnegative")
    y = np.sqrt(a.value)
    return Tensor(y, (a,), lambda g: (g * 0.5 / y,))


def logsigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)), computed without overflow for large |x|."""
    a = _wrap(a)
    y = -np.logaddexp(0.0, -a.value)
    return Tensor(y, (a,), lambda g: (g * _expit(-a.value),))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, args: list[np.ndarray], step: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor.  Every argument is
    treated as a parameter.  The relative error of one gradient entry is
    ``|ad - fd| / max(|ad|, |fd|, 1)``.
    """
    leaves = [parameter(a) for a in args]
    out = fn(leaves)
    out.backward()
    worst = 0.0
    for k, leaf in enumerate(leaves):
        ad = leaf.grad
        if ad is None:
            ad = np.zeros(leaf.shape)
        flat = args[k].astype(np.float64).ravel()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            bumped = [a.astype(np.float64).copy() for a in args]
            bumped[k].ravel()[i] = flat[i] + step
            hi = fn([constant(b) if j != k else parameter(bumped[k]) for j, b in enumerate(bumped)]).item()
            bumped[k].ravel()[i] = flat[i] - step
            lo = fn([constant(b) if j != k else parameter(bumped[k]) for j, b in enumerate(bumped)]).item()
            fd[i] = (hi - lo) / (2.0 * step)
        fd = fd.reshape(leaf.shape)
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1.0)
        worst = max(worst, float(np.max(np.abs(ad - fd) / denom)))
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Moment buffers and step counter for Adam."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction, in place on ``params``.

    Parameters missing from ``grads`` are left untouched (their moments stay
    zero).  A NaN anywhere in a gradient aborts with an error naming the
    parameter; nothing is partially applied.
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"adam_step: gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeMismatchError(
                f"adam_step: '{name}' gradient shape {g.shape} != parameter shape {params[name].shape}"
            )
        if np.isnan(g).any():
            raise ValueError(f"adam_step: NaN gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            state.m[name] = m
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"MSDE1"


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    """Write named arrays to ``path`` in a fixed little-endian binary layout.

    Layout: magic ``MSDE1``, then per array (in dict order): name length and
    UTF-8 name, rank, shape dims as signed 64-bit little-endian integers,
    then the values as little-endian float64.  Round-trips bit-exactly.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        for name, arr in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<q", len(raw)))
            fh.write(raw)
            a = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<q", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<q", d))
            fh.write(a.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"checkpoint {path}: bad magic {blob[:len(_MAGIC)]!r}")
    out: dict[str, np.ndarray] = {}
    pos = len(_MAGIC)

    def read_i64() -> int:
        nonlocal pos
        (val,) = struct.unpack_from("<q", blob, pos)
        pos += 8
        return val

    while pos < len(blob):
        nlen = read_i64()
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rank = read_i64()
        shape = tuple(read_i64() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        out[name] = arr.astype(np.float64).copy()
    return out
