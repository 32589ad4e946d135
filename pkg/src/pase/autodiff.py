"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray; every op built here records its inputs and a
vector-Jacobian closure on the output node. `backward()` on a scalar walks
the recorded graph once in reverse topological order, accumulates gradients
into leaf tensors that asked for them, and then frees the tape.

Compute defaults to float32; building tensors from float64 arrays keeps
float64, which is what the finite-difference checks rely on.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NotScalar, ShapeMismatch

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / extraction)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            self.data = np.asarray(data)  # numpy scalar: keep its precision
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjp = _vjp

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._vjp is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    # -- backward ----------------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.data.shape}")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g.astype(node.data.dtype, copy=False)
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = np.asarray(pg)
                else:
                    # not in-place: pg may alias another node's grad buffer,
                    # and numpy scalars would silently drop the update
                    grads[id(parent)] = acc + pg
        # tape is per-pass: drop recorded closures so intermediates can be freed
        for node in order:
            if not node.is_leaf:
                node._parents = ()
                node._vjp = None


class Parameter(Tensor):
    """Trainable leaf tensor with a checkpoint name."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.asarray(data, dtype=np.float32), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _from_op(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise arithmetic ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _from_op(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(out, (a, b), vjp)


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-x.data))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _from_op(s, (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _from_op(t, (x,), vjp)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """PReLU with one slope per channel; channels live on axis 1."""
    if x.ndim < 2 or alpha.data.shape != (x.shape[1],):
        raise ShapeMismatch(f"prelu: alpha {alpha.data.shape} vs input {x.shape}")
    a = alpha.data.reshape((1, x.shape[1]) + (1,) * (x.ndim - 2))
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def vjp(g):
        dx = np.where(neg, a * g, g)
        da_full = np.where(neg, g * x.data, 0.0)
        axes = (0,) + tuple(range(2, x.ndim))
        return dx, da_full.sum(axis=axes)

    return _from_op(out, (x, alpha), vjp)


# --- reductions / shaping ------------------------------------------------------


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    denom = x.data.size if axis is None else np.prod(
        [x.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype) / denom,)

    return _from_op(out, (x,), vjp)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype).copy(),)

    return _from_op(out, (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(old),)

    return _from_op(out, (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return _from_op(out, (x,), vjp)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(out, tuple(tensors), vjp)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return _from_op(out, (x,), vjp)


def subsample_time(x: Tensor, step: int) -> Tensor:
    """Strided selection x[:, :, ::step] used by skip-path downsampling."""
    out = np.ascontiguousarray(x.data[:, :, ::step])

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[:, :, ::step] = g
        return (dx,)

    return _from_op(out, (x,), vjp)


def pad1d(x: Tensor, left: int, right: int) -> Tensor:
    out = np.pad(x.data, ((0, 0), (0, 0), (left, right)))

    def vjp(g):
        return (g[:, :, left : left + x.data.shape[2]],)

    return _from_op(out, (x,), vjp)


def gather_frames(x: Tensor, batch_idx: np.ndarray, time_idx: np.ndarray) -> Tensor:
    """Pick frames out of a (B, C, T) tensor -> (N, C)."""
    xt = x.data.transpose(0, 2, 1)
    out = np.ascontiguousarray(xt[batch_idx, time_idx])

    def vjp(g):
        dxt = np.zeros_like(xt)
        np.add.at(dxt, (batch_idx, time_idx), g)
        return (dxt.transpose(0, 2, 1),)

    return _from_op(out, (x,), vjp)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a (N, C) tensor -> (M, C), with scatter-add backward."""
    out = np.ascontiguousarray(x.data[idx])

    def vjp(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _from_op(out, (x,), vjp)


# --- dense / convolutional layers ------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x: (N, I), w: (O, I), b: (O,) -> (N, O)."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeMismatch(f"linear: {x.data.shape} @ {w.data.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out += b.data

    def vjp(g):
        dx = g @ w.data if x.requires_grad else None
        dw = g.T @ x.data if w.requires_grad else None
        grads = [dx, dw]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(out, parents, vjp)


# batch block size keeps the im2col buffer around ~32 MB of float32
_COL_BUDGET = 8_000_000


def _col_view(xp: np.ndarray, kernel: int, stride: int):
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)
    return win[:, :, ::stride, :]  # (B, C, T_out, K), still a view


def conv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """1-D cross-correlation. x: (B, C, T), w: (O, C, K) -> (B, O, T')."""
    B, C, T = x.data.shape
    O, C2, K = w.data.shape
    if C != C2:
        raise ShapeMismatch(f"conv1d: input C={C} vs weight C={C2}")
    if K > T + 2 * padding:
        raise ShapeMismatch(f"conv1d: kernel {K} longer than padded input {T + 2 * padding}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    t_out = (xp.shape[2] - K) // stride + 1
    wm = w.data.reshape(O, C * K)

    block = max(1, _COL_BUDGET // max(1, t_out * C * K))
    out = np.empty((B, O, t_out), dtype=np.result_type(x.data, w.data))
    for lo in range(0, B, block):
        hi = min(B, lo + block)
        col = _col_view(xp[lo:hi], K, stride)[:, :, :t_out]
        # materialize: BLAS on the overlapping-stride view is far slower
        col = np.ascontiguousarray(col.transpose(0, 2, 1, 3)).reshape(hi - lo, t_out, C * K)
        out[lo:hi] = (col @ wm.T).transpose(0, 2, 1)
    if b is not None:
        out += b.data.reshape(1, O, 1)

    need_dx = x.requires_grad
    need_dw = w.requires_grad

    def vjp(g):
        dw = np.zeros_like(wm) if need_dw else None
        dxp = np.zeros_like(xp) if need_dx else None
        for lo in range(0, B, block):
            hi = min(B, lo + block)
            gt = np.ascontiguousarray(g[lo:hi].transpose(0, 2, 1)).reshape(-1, O)
            if need_dw:
                col = _col_view(xp[lo:hi], K, stride)[:, :, :t_out]
                col = np.ascontiguousarray(col.transpose(0, 2, 1, 3)).reshape(-1, C * K)
                dw += gt.T @ col
            if need_dx:
                dcol = (gt @ wm).reshape(hi - lo, t_out, C, K).transpose(0, 2, 1, 3)
                sl = dxp[lo:hi]
                for k in range(K):
                    sl[:, :, k : k + stride * t_out : stride] += dcol[:, :, :, k]
        dx = None
        if need_dx:
            dx = dxp[:, :, padding : padding + T] if padding else dxp
        grads = [dx, dw.reshape(O, C, K) if need_dw else None]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(out, parents, vjp)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (batch, time) for (B, C, T) inputs.

    Training mode normalizes with batch statistics and updates the running
    buffers in place; eval mode uses the buffers and touches nothing.
    """
    B, C, T = x.data.shape
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeMismatch("batchnorm1d: gamma/beta must be (C,)")
    n = B * T
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        # running update uses the unbiased variance, as is conventional
        unbiased = var * n / max(1, n - 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean
        var = running_var

    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(1, C, 1)) * invstd.reshape(1, C, 1)
    out = gamma.data.reshape(1, C, 1) * xhat + beta.data.reshape(1, C, 1)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        gx = g * gamma.data.reshape(1, C, 1)
        if training:
            s1 = gx.sum(axis=(0, 2), keepdims=True)
            s2 = (gx * xhat).sum(axis=(0, 2), keepdims=True)
            dx = (invstd.reshape(1, C, 1) / n) * (n * gx - s1 - xhat * s2)
        else:
            dx = gx * invstd.reshape(1, C, 1)
        return dx, dgamma, dbeta

    return _from_op(out, (x, gamma, beta), vjp)


def fo_pool(z: Tensor, f: Tensor) -> Tensor:
    """Forget-gated recurrent pooling: c_t = f_t * c_{t-1} + (1 - f_t) * z_t.

    Gates arrive precomputed for every step; only this pooling recurrence is
    sequential. Shapes are (B, H, T).
    """
    if z.data.shape != f.data.shape:
        raise ShapeMismatch("fo_pool: z and f must share a shape")
    zd, fd = z.data, f.data
    c = np.empty_like(zd)
    prev = np.zeros(zd.shape[:2], dtype=zd.dtype)
    for t in range(zd.shape[2]):
        prev = fd[:, :, t] * prev + (1.0 - fd[:, :, t]) * zd[:, :, t]
        c[:, :, t] = prev

    def vjp(g):
        dz = np.empty_like(zd)
        df = np.empty_like(fd)
        dc = np.zeros(zd.shape[:2], dtype=zd.dtype)
        for t in range(zd.shape[2] - 1, -1, -1):
            dc = dc + g[:, :, t]
            c_prev = c[:, :, t - 1] if t > 0 else 0.0
            df[:, :, t] = dc * (c_prev - zd[:, :, t])
            dz[:, :, t] = dc * (1.0 - fd[:, :, t])
            dc = dc * fd[:, :, t]
        return dz, df

    return _from_op(c, (z, f), vjp)


# --- losses --------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch(f"mse_loss: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    out = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def vjp(g):
        scale = 2.0 * g / diff.size
        return scale * diff, -scale * diff

    return _from_op(out, (pred, target), vjp)


def bce_logits_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, computed in log-sum-exp form."""
    z = logits.data
    y = np.asarray(labels, dtype=z.dtype)
    if y.shape != z.shape:
        raise ShapeMismatch(f"bce_logits_loss: {z.shape} vs {y.shape}")
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per.mean(), dtype=z.dtype)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-z))

    def vjp(g):
        return ((sig - y) * (g / z.size),)

    return _from_op(out, (logits,), vjp)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy for integer class labels; logits (N, K)."""
    z = logits.data
    idx = np.asarray(labels, dtype=np.int64)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = z.shape[0]
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    out = np.asarray(-logp[np.arange(n), idx].mean(), dtype=z.dtype)

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), idx] -= 1.0
        return (d * (g / n),)

    return _from_op(out, (logits,), vjp)
