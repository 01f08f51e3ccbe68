"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a fresh :class:`Tensor` that remembers its parents and
a closure mapping the upstream gradient to the parents' gradients. Calling
:func:`backward` on a scalar walks that graph in reverse topological order.

Leading axes broadcast the numpy way, so the same model code runs on a single
image ``(H, W, C)`` or on a batch ``(B, H, W, C)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Gradient",
    "ShapeError",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "conv2d",
    "relu",
    "softplus",
    "softmax",
    "mean",
    "sum",
    "reshape",
    "transpose",
    "patchify",
    "unpatchify",
    "upsample_nearest",
    "backward",
    "finite_diff_grad",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """Immutable dense array node in a computation graph."""

    __slots__ = ("data", "_parents", "_backward", "op")

    def __init__(self, data, _parents: tuple = (), _backward: BackwardFn | None = None, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(frozen=True)
class Gradient:
    """Derivative of a scalar output with respect to one tensor.

    ``connected`` is False when ``wrt`` does not feed the output; ``values``
    is then all zeros.
    """

    wrt: Tensor
    values: np.ndarray
    connected: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("add", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("sub", a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("mul", a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, (a, b), grad_fn, "mul")


def neg(a) -> Tensor:
    a = tensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need at least 2 dims, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor(out, (a, b), grad_fn, "matmul")


def conv2d(x, weight, bias=None) -> Tensor:
    """Stride-1, zero-padded ("same") 2-D convolution in channels-last layout.

    x: (..., H, W, C_in); weight: (k, k, C_in, C_out) with odd k; bias: (C_out,).
    """
    x, weight = tensor(x), tensor(weight)
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1] or weight.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: weight must be (k, k, C_in, C_out) with odd k, got {weight.shape}")
    if x.ndim < 3 or x.shape[-1] != weight.shape[2]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    k = weight.shape[0]
    r = k // 2
    h, w = x.shape[-3], x.shape[-2]
    pad = [(0, 0)] * (x.ndim - 3) + [(r, r), (r, r), (0, 0)]
    xp = np.pad(x.data, pad)
    out = np.zeros((*x.shape[:-1], weight.shape[3]))
    for i in range(k):
        for j in range(k):
            out += xp[..., i:i + h, j:j + w, :] @ weight.data[i, j]

    parents = [x, weight]
    if bias is not None:
        bias = tensor(bias)
        if bias.shape != (weight.shape[3],):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match C_out={weight.shape[3]}")
        out += bias.data
        parents.append(bias)

    def grad_fn(g):
        c_in = x.shape[-1]
        g2 = g.reshape(-1, g.shape[-1])
        gw = np.empty(weight.shape)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gw[i, j] = xp[..., i:i + h, j:j + w, :].reshape(-1, c_in).T @ g2
                gxp[..., i:i + h, j:j + w, :] += g @ weight.data[i, j].T
        grads = [gxp[..., r:r + h, r:r + w, :], gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return Tensor(out, tuple(parents), grad_fn, "conv2d")


def relu(x) -> Tensor:
    """Rectifier; the subgradient at exactly 0 is taken as 0."""
    x = tensor(x)
    active = x.data > 0
    return Tensor(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,), "relu")


def softplus(x) -> Tensor:
    x = tensor(x)
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(out, (x,), lambda g: (g * sig,), "softplus")


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor(s, (x,), grad_fn, "softmax")


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)

    return Tensor(out, (x,), grad_fn, "sum")


def mean(x, axis=None) -> Tensor:
    x = tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: reduction over empty axes of shape {x.shape}")
    out = x.data.mean(axis=axes)

    def grad_fn(g):
        return (np.broadcast_to(np.expand_dims(g, axes) / count, x.shape).copy(),)

    return Tensor(out, (x,), grad_fn, "mean")


def reshape(x, shape) -> Tensor:
    x = tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return Tensor(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes) -> Tensor:
    x = tensor(x)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {tuple(axes)} invalid for shape {x.shape}")
    inverse = np.argsort([a % x.ndim for a in axes])
    return Tensor(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def _check_patch(op: str, h: int, w: int, p: int):
    if p < 1 or h % p or w % p:
        raise ShapeError(f"{op}: patch size {p} does not divide spatial shape ({h}, {w})")


def patchify(x, p: int) -> Tensor:
    """(..., H, W, C) -> (..., n, p*p*C) with patches in row-major grid order."""
    x = tensor(x)
    if x.ndim < 3:
        raise ShapeError(f"patchify: expected (..., H, W, C), got {x.shape}")
    *lead, h, w, c = x.shape
    _check_patch("patchify", h, w, p)
    nd = len(lead)
    t = reshape(x, (*lead, h // p, p, w // p, p, c))
    t = transpose(t, (*range(nd), nd, nd + 2, nd + 1, nd + 3, nd + 4))
    return reshape(t, (*lead, (h // p) * (w // p), p * p * c))


def unpatchify(x, p: int, h: int, w: int, c: int = 1) -> Tensor:
    """Inverse of :func:`patchify`; with ``c == 1`` the channel axis is dropped."""
    x = tensor(x)
    _check_patch("unpatchify", h, w, p)
    *lead, n, d = x.shape
    if n != (h // p) * (w // p) or d != p * p * c:
        raise ShapeError(f"unpatchify: shape {x.shape} does not match grid {h}x{w}, p={p}, c={c}")
    nd = len(lead)
    t = reshape(x, (*lead, h // p, w // p, p, p, c))
    t = transpose(t, (*range(nd), nd, nd + 2, nd + 1, nd + 3, nd + 4))
    return reshape(t, (*lead, h, w) if c == 1 else (*lead, h, w, c))


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by an integer factor."""
    x = tensor(x)
    if x.ndim < 2 or factor < 1:
        raise ShapeError(f"upsample_nearest: bad input shape {x.shape} or factor {factor}")
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    *lead, h, w = x.shape

    def grad_fn(g):
        return (g.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1)),)

    return Tensor(out, (x,), grad_fn, "upsample_nearest")


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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, wrt: Tensor | Sequence[Tensor]):
    """Gradient of a scalar ``output`` with respect to ``wrt``.

    Returns a :class:`Gradient`, or a list of them when ``wrt`` is a sequence.
    Tensors that do not feed ``output`` get a zero gradient, flagged
    ``connected=False``, and a :class:`RuntimeWarning`.
    """
    if output.size != 1:
        raise ShapeError(f"backward: output must be scalar, got shape {output.shape}")
    targets = [wrt] if isinstance(wrt, Tensor) else list(wrt)
    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape)}
    for node in reversed(_topological(output)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = []
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            warnings.warn("backward: tensor is not an ancestor of the output; gradient is zero", RuntimeWarning)
            result.append(Gradient(t, np.zeros(t.shape), connected=False))
        else:
            result.append(Gradient(t, np.asarray(g, dtype=np.float64).reshape(t.shape)))
    return result[0] if isinstance(wrt, Tensor) else result


def finite_diff_grad(f, x, h: float = 1e-5, *, batched: bool = False, chunk: int = 256) -> np.ndarray:
    """Central-difference gradient of scalar function ``f`` at ``x``.

    ``f`` takes an ndarray shaped like ``x``. With ``batched=True`` it instead
    takes a stack ``(B, *x.shape)`` and returns ``B`` values, which lets the
    perturbed points be evaluated ``chunk`` coordinates at a time.
    """
    if h <= 0:
        raise ValueError(f"finite_diff_grad: step must be positive, got {h}")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.empty(flat.size)
    if not batched:
        for i in range(flat.size):
            xp = flat.copy()
            xm = flat.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (float(f(xp.reshape(x0.shape))) - float(f(xm.reshape(x0.shape)))) / (2 * h)
        return grad.reshape(x0.shape)
    for start in range(0, flat.size, chunk):
        idx = np.arange(start, min(start + chunk, flat.size))
        stack = np.repeat(flat[None, :], 2 * idx.size, axis=0)
        rows = np.arange(idx.size)
        stack[rows, idx] += h
        stack[rows + idx.size, idx] -= h
        vals = np.asarray(f(stack.reshape(-1, *x0.shape)), dtype=np.float64).reshape(-1)
        grad[idx] = (vals[: idx.size] - vals[idx.size:]) / (2 * h)
    return grad.reshape(x0.shape)
