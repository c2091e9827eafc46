"""Reverse-mode automatic differentiation over numpy arrays.

Each op returns a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to parent gradients. ``Tensor.backward`` walks the
graph in reverse topological order and accumulates into ``.grad`` of every
tensor that requires gradients.

Broadcasting follows numpy for elementwise ops; gradients are summed back
to the operand shape. ``matmul`` follows ``np.matmul`` (batched over
leading dimensions).
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents, backward) -> "Tensor":
        """Graph node built from ``parents``; ``backward(g)`` returns one gradient (or None) per parent."""
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # --- basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{', name=' + self.name if self.name else ''})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # --- backward ------------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    pg = _unbroadcast(pg, p.shape)
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
        return self

    # --- operators -----------------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype if like is not None else None))


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a: Tensor, p: float) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; the gradient goes to ``a`` where it is selected."""
    mask = a.data >= floor
    return Tensor.from_op(np.where(mask, a.data, floor).astype(a.dtype), (a,), lambda g: (g * mask,))


# --- reductions ----------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return Tensor.from_op(out, (a,), lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),))


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(out.size, 1)
    return Tensor.from_op(out, (a,), lambda g: (np.array(_expand(g, a.shape, axis, keepdims)) / count,))


def l2_norm(a: Tensor, axis=-1, keepdims=False, eps: float = 0.0) -> Tensor:
    sq = np.sum(a.data * a.data, axis=axis, keepdims=True)
    nrm = np.sqrt(sq + eps)
    out = nrm if keepdims else np.squeeze(nrm, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(nrm > 0, nrm, 1.0)
        return (gk * a.data / safe,)

    return Tensor.from_op(out, (a,), back)


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        d = a.shape[-1]
        gx = g * gain.data
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        del d
        return ga, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(out, (a, gain, bias), back)


# --- shape ops -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), back)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return Tensor.from_op(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor.from_op(out, tuple(tensors), back)


def index(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor.from_op(out, (a,), back)


def gather(a: Tensor, idx: np.ndarray, axis: int = -2) -> Tensor:
    """Select rows along ``axis`` per leading batch entry (``np.take_along_axis`` semantics).

    ``a``: (..., N, d), ``idx``: (..., H) -> (..., H, d) for ``axis=-2``.
    """
    idx = np.asarray(idx)
    if axis not in (-2, a.ndim - 2):
        raise ShapeError("gather supports row selection (axis=-2) only")
    exp_idx = np.broadcast_to(idx[..., None], idx.shape + (a.shape[-1],))
    out = np.take_along_axis(a.data, exp_idx, axis=-2)

    def back(g):
        full = np.zeros_like(a.data)
        # rows may repeat; accumulate per batch
        flat_full = full.reshape(-1, a.shape[-2], a.shape[-1])
        flat_idx = np.broadcast_to(idx, a.shape[:-2] + idx.shape[-1:]).reshape(-1, idx.shape[-1])
        flat_g = g.reshape(-1, idx.shape[-1], a.shape[-1])
        for b in range(flat_full.shape[0]):
            np.add.at(flat_full[b], flat_idx[b], flat_g[b])
        return (full,)

    return Tensor.from_op(out, (a,), back)


# --- linear algebra ------------------------------------------------------------------


def procrustes_rotation(H: Tensor) -> Tensor:
    """Rotation maximizing ``trace(R^T H)`` for (..., 3, 3) cross-covariances ``H``.

    ``H = U S V^T`` gives ``R = U diag(1, 1, det(U V^T)) V^T``. The backward
    rule differentiates the special polar factor: with ``M = U'^T G V``,
    ``dL/dH = U' K V^T`` and ``K_ij = (M_ij - M_ji) / (s_i + s_j)`` where
    ``U' = U diag(1, 1, d)`` and ``s = diag(1, 1, d) S``.
    """
    U, S, Vt = np.linalg.svd(H.data)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.ones(S.shape)
    D[..., -1] = d
    Up = U * D[..., None, :]
    sp = S * D
    R = Up @ Vt

    def back(g):
        V = np.swapaxes(Vt, -1, -2)
        M = np.swapaxes(Up, -1, -2) @ g @ V
        denom = sp[..., :, None] + sp[..., None, :]
        denom = np.where(np.abs(denom) < 1e-12, np.inf, denom)
        K = (M - np.swapaxes(M, -1, -2)) / denom
        return (Up @ K @ Vt,)

    return Tensor.from_op(R.astype(H.dtype), (H,), back)
