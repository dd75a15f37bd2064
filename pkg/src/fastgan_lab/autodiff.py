"""Dense reverse-mode automatic differentiation over float64 numpy arrays.

Backward rules are written with the same differentiable primitives as the
forward pass, so a gradient computed with ``create_graph=True`` is itself a
graph node and can be differentiated again (Hessian-vector products, mixed
second derivatives, gradients of gradient norms).
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "tensor",
    "constant",
    "no_grad",
    "grad",
    "hvp",
    "mixed_hvp",
    "finite_diff_grad",
    "flatten",
    "unflatten",
    "forward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the op signature."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str, path: str):
        self.op = op
        self.path = path
        super().__init__(f"non-finite value produced by {op} (node path: {path})")


class GraphError(RuntimeError):
    """Misuse of the differentiation API (non-scalar output, missing graph)."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording parents."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus the op that produced it.

    Identity semantics: ``==`` is not overloaded, tensors hash by object id.
    """

    __slots__ = ("data", "requires_grad", "parents", "op", "backward_fn", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, parents=(), op: str = "leaf", backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self.backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}, op={self.op}{tag})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(data) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data)


def _path(parents: Sequence[Tensor], depth: int = 4) -> str:
    names = []
    node = parents[0] if parents else None
    while node is not None and depth > 0:
        names.append(node.op)
        node = node.parents[0] if node.parents else None
        depth -= 1
    return " <- ".join(names) if names else "<input>"


def _make(value: np.ndarray, parents: tuple[Tensor, ...], op: str, backward_fn) -> Tensor:
    # the sum is non-finite iff some element is (or the sum overflows, itself a failure)
    if not math.isfinite(value.sum()):
        raise NonFiniteError(op, f"{op} <- {_path(parents)}")
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=parents, op=op, backward_fn=backward_fn)
    return Tensor(value, op=op)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    if a.data.shape == b.data.shape:
        return a.data.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# shape plumbing


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to ``shape``."""
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, n in enumerate(shape) if n == 1 and x.shape[i + lead] != 1
    )
    value = x.data.sum(axis=axes, keepdims=True)
    value = value.reshape(shape)
    in_shape = x.shape
    return _make(value, (x,), "sum_to", lambda g: (broadcast_to(g, in_shape),))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == tuple(shape):
        return x
    in_shape = x.shape
    value = np.broadcast_to(x.data, shape).copy()
    return _make(value, (x,), "broadcast_to", lambda g: (sum_to(g, in_shape),))


def reshape(x: Tensor, shape) -> Tensor:
    in_shape = x.shape
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", in_shape, tuple(shape)) from None
    return _make(value, (x,), "reshape", lambda g: (reshape(g, in_shape),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose", x.shape)
    return _make(x.data.T, (x,), "transpose", lambda g: (transpose(g),))


def index(x: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing; backward scatters with accumulation."""
    in_shape = x.shape
    value = np.array(x.data[idx], dtype=np.float64)
    return _make(value, (x,), "index", lambda g: (scatter(g, idx, in_shape),))


def scatter(g: Tensor, idx, shape: tuple[int, ...]) -> Tensor:
    value = np.zeros(shape)
    np.add.at(value, idx, g.data)
    return _make(value, (g,), "scatter", lambda gg: (index(gg, idx),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [constant(x) for x in xs]
    try:
        value = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(x.shape for x in xs)) from None
    ax = axis % value.ndim
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def backward(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(lo), int(hi))
            out.append(index(g, tuple(sl)))
        return tuple(out)

    return _make(value, tuple(xs), "concat", backward)


def embedding(weight: Tensor, labels) -> Tensor:
    """Row lookup ``weight[labels]``; with an identity weight this is one-hot encoding."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= weight.shape[0]):
        raise ShapeError("embedding", weight.shape, labels.shape)
    return index(weight, labels)


def one_hot(labels, num_classes: int) -> Tensor:
    return embedding(Tensor(np.eye(num_classes)), labels)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), "add", lambda g: (sum_to(g, sa), sum_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.data - b.data, (a, b), "sub", lambda g: (sum_to(g, sa), sum_to(scale(g, -1.0), sb))
    )


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    sa, sb = a.shape, b.shape
    return _make(
        a.data * b.data, (a, b), "mul", lambda g: (sum_to(mul(g, b), sa), sum_to(mul(g, a), sb))
    )


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("div", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = div(g, b)
        gb = scale(div(mul(ga, a), b), -1.0)
        return sum_to(ga, sa), sum_to(gb, sb)

    with np.errstate(divide="ignore", invalid="ignore"):
        value = a.data / b.data
    return _make(value, (a, b), "div", backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), "scale", lambda g: (scale(g, c),))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        if a.ndim == 1 and b.ndim == 2 and a.shape[0] == b.shape[0]:
            return reshape(matmul(reshape(a, (1, -1)), b), (b.shape[1],))
        if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
            return reshape(matmul(a, reshape(b, (-1, 1))), (a.shape[0],))
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(
        a.data @ b.data,
        (a, b),
        "matmul",
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = x.shape
    kept_shape = np.sum(x.data, axis=axis, keepdims=True).shape
    value = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        return (broadcast_to(reshape(g, kept_shape), in_shape),)

    return _make(value, (x,), "sum", backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def squared_norm(x: Tensor) -> Tensor:
    return _make(np.sum(x.data * x.data), (x,), "squared_norm", lambda g: (mul(scale(g, 2.0), x),))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(np.float64)
    return _make(x.data * mask, (x,), "relu", lambda g: (mul(g, mask),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * factor, (x,), "leaky_relu", lambda g: (mul(g, factor),))


def tanh(x: Tensor) -> Tensor:
    out_holder: list[Tensor] = []

    def backward(g):
        t = out_holder[0]
        return (mul(g, sub(1.0, mul(t, t))),)

    out = _make(np.tanh(x.data), (x,), "tanh", backward)
    out_holder.append(out)
    return out


def exp(x: Tensor) -> Tensor:
    out_holder: list[Tensor] = []
    out = _make(np.exp(x.data), (x,), "exp", lambda g: (mul(g, out_holder[0]),))
    out_holder.append(out)
    return out


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(x.data)
    return _make(value, (x,), "log", lambda g: (div(g, x),))


def sqrt(x: Tensor) -> Tensor:
    out_holder: list[Tensor] = []
    with np.errstate(invalid="ignore"):
        value = np.sqrt(x.data)
    out = _make(value, (x,), "sqrt", lambda g: (div(scale(g, 0.5), out_holder[0]),))
    out_holder.append(out)
    return out


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out_holder: list[Tensor] = []

    def backward(g):
        s = out_holder[0]
        return (mul(g, mul(s, sub(1.0, s))),)

    out = _make(_sigmoid_np(x.data), (x,), "sigmoid", backward)
    out_holder.append(out)
    return out


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) without forming sigmoid(x); finite for every finite x."""
    v = x.data
    value = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return _make(value, (x,), "log_sigmoid", lambda g: (mul(g, sigmoid(scale(x, -1.0))),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    v = x.data
    shifted = v - v.max(axis=axis, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_holder: list[Tensor] = []

    def backward(g):
        p = exp(out_holder[0])
        return (sub(g, mul(p, sum_(g, axis=axis, keepdims=True))),)

    out = _make(value, (x,), "log_softmax", backward)
    out_holder.append(out)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return exp(log_softmax(x, axis=axis))


# ---------------------------------------------------------------------------
# differentiation


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> tuple[Tensor, ...]:
    """Gradients of a scalar ``output`` with respect to every tensor in ``wrt``.

    One reverse sweep serves all requested tensors. Tensors that do not
    influence ``output`` get zero gradients. With ``create_graph=True`` the
    returned gradients are differentiable graph nodes.
    """
    if output.size != 1:
        raise GraphError(f"grad: output must be a scalar, got shape {output.shape}")
    wrt = list(wrt)
    if not output.requires_grad:
        return tuple(Tensor(np.zeros_like(w.data)) for w in wrt)
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    with ctx:
        for node in reversed(_toposort(output)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if not parent.requires_grad or pg is None:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)
    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(Tensor(np.zeros_like(w.data)) if g is None else g)
    return tuple(out)


def flatten(tensors: Iterable[Tensor]) -> Tensor:
    return concat([reshape(t, (-1,)) for t in tensors], axis=0)


def unflatten(vector, like: Sequence[Tensor]) -> list[np.ndarray]:
    vector = vector.data if isinstance(vector, Tensor) else np.asarray(vector, dtype=np.float64)
    out, offset = [], 0
    for t in like:
        out.append(vector[offset : offset + t.size].reshape(t.shape))
        offset += t.size
    if offset != vector.size:
        raise ShapeError("unflatten", vector.shape, (offset,))
    return out


def _vector(v, n: int, op: str) -> np.ndarray:
    v = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    v = v.reshape(-1)
    if v.size != n:
        raise ShapeError(op, (n,), v.shape)
    return v


def mixed_hvp(output: Tensor, wrt_outer: Sequence[Tensor], wrt_inner: Sequence[Tensor], v) -> Tensor:
    """Return (d^2 output / d outer d inner) @ v as a flat vector over ``wrt_outer``.

    ``v`` is flat over ``wrt_inner``. Differentiates <grad_inner(output), v>.
    """
    if not output.requires_grad:
        raise GraphError("mixed_hvp: output carries no graph to differentiate twice")
    wrt_inner, wrt_outer = list(wrt_inner), list(wrt_outer)
    n_inner = sum(t.size for t in wrt_inner)
    v = _vector(v, n_inner, "mixed_hvp")
    g_inner = grad(output, wrt_inner, create_graph=True)
    dot = sum_(mul(flatten(g_inner), Tensor(v)))
    return Tensor(flatten(grad(dot, wrt_outer)).data)


def hvp(output: Tensor, params: Sequence[Tensor], v) -> Tensor:
    """Hessian-vector product via double backward."""
    return mixed_hvp(output, params, params, v)


def forward(fn: Callable[..., dict | Tensor], inputs: dict[str, object]) -> dict[str, Tensor]:
    """Bind named inputs to ``fn`` and return its named outputs."""
    bound = {k: v if isinstance(v, Tensor) else tensor(v) for k, v in inputs.items()}
    out = fn(**bound)
    if isinstance(out, Tensor):
        return {"output": out}
    return dict(out)


def finite_diff_grad(f: Callable[[np.ndarray], float], point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a black-box scalar function."""
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)
