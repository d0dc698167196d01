"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable operation appends a node to the graph of the current
thread.  ``backward`` walks that graph once in reverse append order, routes
gradients to the leaves and then releases the tape.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

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

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)


class Node:
    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: GradFn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn

    @property
    def input_ids(self) -> list[int | None]:
        return [t._node for t in self.inputs]


class Graph:
    """Append-only operation record; append order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: GradFn) -> None:
        output._node = len(self.nodes)
        self.nodes.append(Node(kind, inputs, output, backward_fn))

    def release(self) -> None:
        for node in self.nodes:
            node.output._node = None
            node.output.requires_grad = False
        self.nodes = []


_local = threading.local()


def current_graph() -> Graph:
    graph = getattr(_local, "graph", None)
    if graph is None:
        graph = _local.graph = Graph()
    return graph


def reset_graph() -> None:
    """Drop any pending tape without computing gradients."""
    current_graph().release()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    previous = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = previous


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(kind: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: GradFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        current_graph().record(kind, inputs, out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every leaf reachable from a scalar ``loss``.

    Leaf gradients are summed into any existing ``grad`` so a parameter used
    on several paths (or across several backward calls) receives the total.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, np.ones_like(loss.data))
        return
    graph = current_graph()
    nodes = graph.nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss._node] = np.ones_like(loss.data)
    for idx in range(loss._node, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        grads[idx] = None
        node = nodes[idx]
        for tensor, tg in zip(node.inputs, node.backward_fn(g)):
            if tg is None or not tensor.requires_grad:
                continue
            if tensor._node is None:
                _accumulate_leaf(tensor, tg)
            elif grads[tensor._node] is None:
                grads[tensor._node] = tg
            else:
                grads[tensor._node] = grads[tensor._node] + tg
    graph.release()


def _accumulate_leaf(tensor: Tensor, g: np.ndarray) -> None:
    if g.shape != tensor.data.shape:
        g = _unbroadcast(g, tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        tensor.grad = tensor.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise binary ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def bias_add(x, bias) -> Tensor:
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"bias_add: incompatible shapes {x.shape} and {bias.shape}")
    return _result("bias_add", x.data + bias.data, (x, bias),
                   lambda g: (g, g.reshape(-1, g.shape[-1]).sum(axis=0)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def grad(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _result("mul", ad * bd, (a, b), grad)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# matrix products ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result("matmul", ad @ bd, (a, b), grad)


def linear(x, weight, bias, activation: str | None = None) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (n, in) and ``weight`` (in, out).

    ``activation="relu"`` fuses a ReLU into the same node, which saves two
    passes over large activations.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: incompatible shapes {weight.shape} and {bias.shape}")
    if activation not in (None, "relu"):
        raise ValueError(f"linear: unsupported activation {activation!r}")
    xd, wd = x.data, weight.data
    out = xd @ wd
    out += bias.data
    if activation == "relu":
        np.maximum(out, 0.0, out=out)

    def grad(g):
        if activation == "relu":
            g = g * (out > 0)
        return (g @ wd.T if x.requires_grad else None,
                xd.T @ g if weight.requires_grad else None,
                g.sum(axis=0))

    return _result("linear" if activation is None else "linear_relu", out, (x, weight, bias), grad)


def mlp(x, layers: Sequence[tuple[Tensor, Tensor]], chunk: int = 2048) -> Tensor:
    """Fused ReLU MLP (no activation after the last layer) as a single node.

    Rows are processed in cache-sized chunks and each chunk's activations
    are kept for the backward pass.
    """
    x = as_tensor(x)
    weights = [w for w, _ in layers]
    biases = [b for _, b in layers]
    width = x.shape[1] if x.data.ndim == 2 else None
    for w, b in layers:
        if w.data.ndim != 2 or w.shape[0] != width or b.shape != (w.shape[1],):
            raise ShapeError(f"mlp: incompatible shapes {x.shape} and {w.shape}")
        width = w.shape[1]
    last = len(layers) - 1

    def run(rows: np.ndarray, keep: bool):
        acts = [rows]
        h = rows
        for i, (w, b) in enumerate(zip(weights, biases)):
            h = h @ w.data
            h += b.data
            if i < last:
                np.maximum(h, 0.0, out=h)
            if keep:
                acts.append(h)
        return acts if keep else h

    xd = x.data
    out = np.empty((xd.shape[0], width))
    keep = grad_enabled() and (x.requires_grad or any(t.requires_grad for t in weights + biases))
    stored = []
    for s in range(0, xd.shape[0], chunk):
        if keep:
            acts = run(xd[s:s + chunk], keep=True)
            stored.append(acts)
            out[s:s + chunk] = acts[-1]
        else:
            out[s:s + chunk] = run(xd[s:s + chunk], keep=False)

    def grad(g):
        gws = [np.zeros_like(w.data) for w in weights]
        gbs = [np.zeros_like(b.data) for b in biases]
        gx = np.empty_like(xd) if x.requires_grad else None
        for n, s in enumerate(range(0, xd.shape[0], chunk)):
            acts = stored[n]
            gc = g[s:s + chunk]
            for i in range(last, -1, -1):
                if i < last:
                    gc = np.where(acts[i + 1] > 0, gc, 0.0)
                gws[i] += acts[i].T @ gc
                gbs[i] += gc.sum(axis=0)
                if i > 0 or gx is not None:
                    gc = gc @ weights[i].data.T
            if gx is not None:
                gx[s:s + chunk] = gc
        return (gx, *gws, *gbs)

    return _result("mlp", out, (x, *weights, *biases), grad)


def rigid_transform(points, poses) -> Tensor:
    """Batched SE(2) action ``R(alpha_k) p + t_k``.

    points: (K, M, 2) constant array; poses: (K, 3) Tensor ``(tx, ty, alpha)``.
    """
    poses = as_tensor(poses)
    pts = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    if pts.ndim != 3 or pts.shape[2] != 2 or poses.shape != (pts.shape[0], 3):
        raise ShapeError(f"rigid_transform: incompatible shapes {pts.shape} and {poses.shape}")
    c = np.cos(poses.data[:, 2])[:, None]
    s = np.sin(poses.data[:, 2])[:, None]
    px, py = pts[:, :, 0], pts[:, :, 1]
    out = np.empty_like(pts)
    out[:, :, 0] = c * px - s * py + poses.data[:, 0:1]
    out[:, :, 1] = s * px + c * py + poses.data[:, 1:2]

    def grad(g):
        gx, gy = g[:, :, 0], g[:, :, 1]
        # d/dalpha of (c px - s py, s px + c py) = (-(s px + c py), c px - s py)
        rx = out[:, :, 0] - poses.data[:, 0:1]
        ry = out[:, :, 1] - poses.data[:, 1:2]
        galpha = np.sum(gy * rx - gx * ry, axis=1)
        return (np.stack([gx.sum(axis=1), gy.sum(axis=1), galpha], axis=1),)

    return _result("rigid_transform", out, (poses,), grad)


def conv1d(x, weight, bias, dilation: int = 1, padding: int | None = None,
           activation: str | None = None) -> Tensor:
    """Dilated 1D convolution with zero padding, channels-last layout.

    x: (batch, length, c_in); weight: (kernel, c_in, c_out); bias: (c_out,).
    ``padding`` defaults to ``dilation``, which keeps the length for kernel 3.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if padding is None:
        padding = dilation
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    if bias.shape != (weight.shape[2],):
        raise ShapeError(f"conv1d: incompatible shapes {weight.shape} and {bias.shape}")
    if activation not in (None, "relu"):
        raise ValueError(f"conv1d: unsupported activation {activation!r}")
    batch, length, c_in = x.shape
    kernel, _, c_out = weight.shape
    out_len = length + 2 * padding - dilation * (kernel - 1)
    if out_len < 1:
        raise ShapeError(f"conv1d: input length {length} too short for kernel {kernel}")
    padded = np.zeros((batch, length + 2 * padding, c_in))
    padded[:, padding:padding + length] = x.data
    # cols[b, t, j * c_in + c] = padded[b, t + j * dilation, c]
    cols = np.concatenate([padded[:, j * dilation:j * dilation + out_len] for j in range(kernel)], axis=2)
    cols = cols.reshape(batch * out_len, kernel * c_in)
    wmat = weight.data.reshape(kernel * c_in, c_out)
    out = cols @ wmat
    out += bias.data
    if activation == "relu":
        np.maximum(out, 0.0, out=out)
    out = out.reshape(batch, out_len, c_out)

    def grad(g):
        if activation == "relu":
            g = g * (out > 0)
        gmat = g.reshape(batch * out_len, c_out)
        gw = (cols.T @ gmat).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat @ wmat.T).reshape(batch, out_len, kernel, c_in)
            gpad = np.zeros_like(padded)
            for j in range(kernel):
                gpad[:, j * dilation:j * dilation + out_len] += gcols[:, :, j]
            gx = gpad[:, padding:padding + length]
        return gx, gw, gmat.sum(axis=0)

    return _result("conv1d" if activation is None else "conv1d_relu", out, (x, weight, bias), grad)


# elementwise unary ----------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    expm = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, alpha * expm)
    slope = np.where(pos, 1.0, alpha * (expm + 1.0))
    return _result("elu", out, (x,), lambda g: (g * slope,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # two-branch form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def sin(x) -> Tensor:
    x = as_tensor(x)
    return _result("sin", np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x) -> Tensor:
    x = as_tensor(x)
    return _result("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp(x, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _result("clamp", np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _result("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def norm(x) -> Tensor:
    """Euclidean norm over the last axis; the subgradient at 0 is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=-1))

    def grad(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (x.data * scale[..., None],)

    return _result("norm", out, (x,), grad)


# reductions and shape ops ---------------------------------------------------


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape

    def grad(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result("sum", np.asarray(x.data.sum(axis=axis)), (x,), grad)


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    count = x.data.size if axis is None else shape[axis]

    def grad(g):
        if axis is None:
            return (np.full(shape, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, shape).copy(),)

    return _result("mean", np.asarray(x.data.mean(axis=axis)), (x,), grad)


def max(x, axis: int = -1) -> Tensor:  # noqa: A001
    """Max over one axis; ties route the gradient to the first maximum."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    arg = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def grad(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result("max", out, (x,), grad)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {original} as {tuple(shape)}") from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(original),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def index_select(x, index) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic_index(index)

    def grad(g):
        gx = np.zeros(shape)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return _result("index", np.array(x.data[index]), (x,), grad)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    return _result("stack", out, tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))
