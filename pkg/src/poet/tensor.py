"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation returns a new :class:`Tensor` that remembers its
inputs and a backward rule. :func:`backward` orders the reachable graph
topologically (the :class:`Tape`) and propagates gradients in reverse.

Broadcasting follows numpy semantics restricted to two cases: leading
dimensions (bias-style) and size-1 dimensions of equal rank. Anything else
must be reshaped explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AxisError, ContractError, DimensionError, InputError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise InputError(f"unsupported dtype {dtype}; use float64 or float32")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # --- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- operator sugar ---------------------------------------------------
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# --- tape ---------------------------------------------------------------------


@dataclass(frozen=True)
class TapeEntry:
    inputs: tuple[int, ...]
    output: int
    rule: Callable


class Tape:
    """Topologically ordered record of the operations that produced a tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
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
        return cls(order)

    @property
    def entries(self) -> list[TapeEntry]:
        return [
            TapeEntry(tuple(id(p) for p in n._parents), id(n), n._backward)
            for n in self.nodes
            if n._backward is not None
        ]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not g.flags.writeable:
            g = g.copy()
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


# --- broadcasting helpers -----------------------------------------------------


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim:
        short, long_ = (a.shape, b.shape) if a.ndim < b.ndim else (b.shape, a.shape)
        if long_[len(long_) - len(short):] == short:
            return
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} need an explicit reshape")
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise AxisError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


# --- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), rule)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), rule)


# --- elementwise nonlinearities -----------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,))


def arccos(x, eps: float = 0.0) -> Tensor:
    """arccos with the argument clamped to [-1 + eps, 1 - eps].

    Inside the clamp range the derivative is the usual -1/sqrt(1 - x^2); at or
    outside the bounds the clamp passes a zero gradient, so the result is
    finite everywhere when eps > 0.
    """
    x = as_tensor(x)
    lo, hi = -1.0 + eps, 1.0 - eps
    c = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def rule(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(inside, -1.0 / np.sqrt(1.0 - c * c), 0.0)
        return (g * d,)

    return _make(np.arccos(c), (x,), rule)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layernorm(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean and unit variance along ``axis`` (no affine)."""
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def rule(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, (x,), rule)


def norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the subgradient at the origin is taken as zero."""
    x = as_tensor(x)
    axis = _check_axis(x, axis)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    out = n if keepdims else np.squeeze(n, axis=axis)

    def rule(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n > 0, gk / n, 0.0)
        return (x.data * scale,)

    return _make(out, (x,), rule)


# --- reductions and shape ops -------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_check_axis(x, a) for a in axes)
    else:
        axes = tuple(range(x.ndim))
    shape = x.shape

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), rule)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    s = tsum(x, axis, keepdims)
    count = x.size // max(s.size, 1) if x.size else 1
    return mul(s, 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {orig} as {tuple(shape)}") from exc
    return _make(y, (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, np.integer, slice)) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(index)

    def rule(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise InputError("concat of an empty sequence")
    axis = _check_axis(ts[0], axis)
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def rule(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _make(data, ts, rule)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise InputError("stack of an empty sequence")
    try:
        data = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: incompatible shapes {[t.shape for t in ts]}") from exc
    ax = axis % data.ndim
    return _make(data, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts))))


# --- sampling ---------------------------------------------------------------


def _bilinear_setup(pts: np.ndarray, height: int, width: int):
    x = pts[..., 0] * width - 0.5
    y = pts[..., 1] * height - 0.5
    xc = np.clip(x, 0.0, width - 1.0)
    yc = np.clip(y, 0.0, height - 1.0)
    x0 = np.minimum(np.floor(xc).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xc - x0
    fy = yc - y0
    # clamped coordinates do not move the sample
    gx = ((x > 0.0) & (x < width - 1.0)) * float(width)
    gy = ((y > 0.0) & (y < height - 1.0)) * float(height)
    return x0, x1, y0, y1, fx, fy, gx, gy


def grouped_bilinear_sample(maps, points) -> Tensor:
    """Sample ``maps[g]`` at ``points[g]`` for every group ``g``.

    maps: Tensor[G, C, H, W]; points: Tensor[G, P, 2] with normalized (x, y).
    Returns Tensor[G, P, C]. Pixel centers sit at ((j + 0.5) / W, (i + 0.5) / H);
    points beyond the outermost centers are clamped to the border.
    """
    maps, points = as_tensor(maps), as_tensor(points)
    if maps.ndim != 4 or maps.size == 0:
        raise DimensionError(f"sample map must be non-empty [G, C, H, W], got {maps.shape}")
    if points.ndim != 3 or points.shape[-1] != 2 or points.shape[0] != maps.shape[0]:
        raise DimensionError(f"points shape {points.shape} does not match maps {maps.shape}")
    if not np.all(np.isfinite(points.data)):
        raise InputError("sample points must be finite")
    G, C, H, W = maps.shape
    P = points.shape[1]
    x0, x1, y0, y1, fx, fy, gx, gy = _bilinear_setup(points.data, H, W)
    mt = np.ascontiguousarray(maps.data.transpose(0, 2, 3, 1)).reshape(G * H * W, C)
    base = (np.arange(G) * (H * W))[:, None]
    i00 = base + y0 * W + x0
    i01 = base + y0 * W + x1
    i10 = base + y1 * W + x0
    i11 = base + y1 * W + x1
    v00, v01, v10, v11 = mt[i00], mt[i01], mt[i10], mt[i11]
    w00 = ((1 - fx) * (1 - fy))[..., None]
    w01 = (fx * (1 - fy))[..., None]
    w10 = ((1 - fx) * fy)[..., None]
    w11 = (fx * fy)[..., None]
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def rule(g):
        gm = gp = None
        if maps.requires_grad:
            # scatter-add through one flat bincount; much faster than np.add.at
            idx = np.stack([i00, i01, i10, i11])[..., None] * C + np.arange(C)
            vals = np.stack([w00 * g, w01 * g, w10 * g, w11 * g])
            acc = np.bincount(idx.ravel(), vals.ravel(), minlength=G * H * W * C)
            gm = acc.reshape(G, H, W, C).transpose(0, 3, 1, 2)
        if points.requires_grad:
            fxe, fye = fx[..., None], fy[..., None]
            dvdx = (1 - fye) * (v01 - v00) + fye * (v11 - v10)
            dvdy = (1 - fxe) * (v10 - v00) + fxe * (v11 - v01)
            gp = np.stack(
                [(g * dvdx).sum(-1) * gx, (g * dvdy).sum(-1) * gy], axis=-1
            )
        return gm, gp

    return _make(out, (maps, points), rule)


def bilinear_sample(fmap, points) -> Tensor:
    """Bilinear lookup of a [C, H, W] map at normalized points [P, 2] -> [P, C]."""
    fmap, points = as_tensor(fmap), as_tensor(points)
    if fmap.ndim != 3 or fmap.size == 0:
        raise DimensionError(f"feature map must be non-empty [C, H, W], got {fmap.shape}")
    if points.ndim != 2 or points.shape[-1] != 2:
        raise DimensionError(f"points must be [P, 2], got {points.shape}")
    out = grouped_bilinear_sample(reshape(fmap, (1,) + fmap.shape), reshape(points, (1,) + points.shape))
    return reshape(out, out.shape[1:])


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution of a single image x[C, H, W] with weight[O, C, k, k]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    C, H, W = x.shape
    O, _, k, _ = weight.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :Ho, :Wo]  # C, Ho, Wo, k, k
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(C * k * k, Ho * Wo)
    wmat = weight.data.reshape(O, C * k * k)
    out = (wmat @ cols).reshape(O, Ho, Wo)
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None, None]
        parents.append(bias)

    def rule(g):
        g2 = g.reshape(O, Ho * Wo)
        gx = gw = None
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(C, k, k, Ho, Wo)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[:, i, j]
            gx = dxp[:, padding : padding + H, padding : padding + W]
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=1))
        return tuple(grads)

    return _make(out, parents, rule)


# --- helpers for tests and training ------------------------------------------


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
