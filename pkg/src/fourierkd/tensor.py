"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and remembers how it was produced.
Every primitive op builds its output via :func:`node`, attaching a closure
that pushes the output gradient back onto the op's parents.  ``backward``
on a scalar tensor walks the recorded graph once in reverse topological
order, so each closure runs exactly once and shared subexpressions
accumulate gradients additively.

All data is float64.  Gradients live in ``Tensor.grad`` as plain ndarrays
(``None`` until something accumulates into them).
"""

from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "node",
    "no_grad",
    "grad_enabled",
    "set_debug_checks",
    "debug_checks_enabled",
    "concat",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "matmul",
    "pick",
    "conv1x1",
    "avg_pool_to",
    "fully_connected",
    "batch_norm_train",
    "batch_norm_eval",
    "softmax_t",
    "log_softmax",
]

_GRAD_ENABLED = True
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle finiteness checks on every op output and gradient.

    Off by default (the checks cost real time on batched feature maps).
    The training loop switches them on to locate the first offending op
    when a loss turns non-finite.
    """
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording (forward only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    # ---- basic introspection ----

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    # ---- graph management ----

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            # materialize our own array: g may be a view or broadcast
            if g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar through the recorded graph.

        One sweep per graph: afterwards the swept nodes are unwired
        (closures and parent links dropped) so the whole graph frees by
        reference count instead of waiting on the cycle collector.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        # iterative DFS; graphs here are deep enough to overflow recursion
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.data))
        try:
            for t in reversed(topo):
                if t._backward is not None:
                    t._backward()
                    if _DEBUG_CHECKS:
                        for p in t._parents:
                            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                                raise FloatingPointError(
                                    f"non-finite gradient flowing into '{p._op}' out of '{t._op}'"
                                )
        finally:
            for t in topo:
                t._backward = None
                t._parents = ()

    # ---- operator sugar ----

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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    """Build an op output wired into the graph.

    ``backward`` is a zero-argument closure that reads ``out.grad`` and
    accumulates into each live parent's ``grad``.  When recording is off or
    no parent participates in a gradient, the closure is dropped and the
    output is a constant.
    """
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze_axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze_axes:
        g = g.sum(axis=squeeze_axes, keepdims=True)
    return g.reshape(shape)


# ---- elementwise arithmetic ----


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward():
        if a.requires_grad or a._backward:
            a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad or b._backward:
            b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))

    out = node(out_data, (a, b), backward, "add")
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward():
        if a.requires_grad or a._backward:
            a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad or b._backward:
            b.accumulate_grad(_unbroadcast(-out.grad, b.data.shape))

    out = node(out_data, (a, b), backward, "sub")
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward():
        if a.requires_grad or a._backward:
            a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad or b._backward:
            b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))

    out = node(out_data, (a, b), backward, "mul")
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def backward():
        if a.requires_grad or a._backward:
            a.accumulate_grad(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad or b._backward:
            b.accumulate_grad(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out = node(out_data, (a, b), backward, "div")
    return out


def neg(a: Tensor) -> Tensor:
    def backward():
        a.accumulate_grad(-out.grad)

    out = node(-a.data, (a,), backward, "neg")
    return out


def pow_const(a: Tensor, p) -> Tensor:
    p = float(p)
    out_data = a.data ** p

    def backward():
        a.accumulate_grad(out.grad * p * a.data ** (p - 1.0))

    out = node(out_data, (a,), backward, "pow")
    return out


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward():
        a.accumulate_grad(out.grad * out_data)

    out = node(out_data, (a,), backward, "exp")
    return out


def log(a: Tensor) -> Tensor:
    def backward():
        a.accumulate_grad(out.grad / a.data)

    out = node(np.log(a.data), (a,), backward, "log")
    return out


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward():
        a.accumulate_grad(out.grad * 0.5 / out_data)

    out = node(out_data, (a,), backward, "sqrt")
    return out


def sin(a: Tensor) -> Tensor:
    def backward():
        a.accumulate_grad(out.grad * np.cos(a.data))

    out = node(np.sin(a.data), (a,), backward, "sin")
    return out


def cos(a: Tensor) -> Tensor:
    def backward():
        a.accumulate_grad(-out.grad * np.sin(a.data))

    out = node(np.cos(a.data), (a,), backward, "cos")
    return out


def relu(a: Tensor) -> Tensor:
    # gradient at exactly zero is zero
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def backward():
        a.accumulate_grad(out.grad * mask)

    out = node(out_data, (a,), backward, "relu")
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # evaluate through exp of a non-positive argument only
    pos = x >= 0
    ex = np.exp(np.where(pos, -x, x))
    out_data = np.where(pos, 1.0 / (1.0 + ex), ex / (1.0 + ex))

    def backward():
        a.accumulate_grad(out.grad * out_data * (1.0 - out_data))

    out = node(out_data, (a,), backward, "sigmoid")
    return out


# ---- shape ops ----


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)

    def backward():
        a.accumulate_grad(out.grad.reshape(a.data.shape))

    out = node(a.data.reshape(shape), (a,), backward, "reshape")
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(int(x) for x in axes)
    inv = np.argsort(axes)

    def backward():
        a.accumulate_grad(out.grad.transpose(inv))

    out = node(a.data.transpose(axes), (a,), backward, "transpose")
    return out


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def backward():
        g = np.zeros_like(a.data)
        # add.at accumulates correctly even when an index repeats
        np.add.at(g, idx, out.grad)
        a.accumulate_grad(g)

    out = node(np.array(out_data, dtype=np.float64, copy=True), (a,), backward, "getitem")
    return out


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat needs at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad or p._backward:
                sl = [slice(None)] * out_data.ndim
                sl[axis] = slice(int(lo), int(hi))
                p.accumulate_grad(out.grad[tuple(sl)])

    out = node(out_data, tuple(parts), backward, "concat")
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % a.data.ndim for ax in axes)
            shape = [1 if i in axes else n for i, n in enumerate(a.data.shape)]
            g = g.reshape(shape)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    out = node(np.asarray(out_data, dtype=np.float64), (a,), backward, "sum")
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.data.shape[ax % a.data.ndim] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# ---- linear algebra ----


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects two rank-2 tensors, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner dims differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data @ b.data

    def backward():
        if a.requires_grad or a._backward:
            a.accumulate_grad(out.grad @ b.data.T)
        if b.requires_grad or b._backward:
            b.accumulate_grad(a.data.T @ out.grad)

    out = node(out_data, (a, b), backward, "matmul")
    return out


def pick(a: Tensor, indices: np.ndarray) -> Tensor:
    """Row-wise gather: out[i] = a[i, indices[i]] for a rank-2 tensor."""
    if a.data.ndim != 2:
        raise ValueError(f"pick expects a rank-2 tensor, got shape {a.data.shape}")
    idx = np.asarray(indices)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise ValueError(
            f"pick needs one index per row: tensor {a.data.shape}, indices {idx.shape}"
        )
    if idx.min() < 0 or idx.max() >= a.data.shape[1]:
        raise ValueError(
            f"pick index out of range [0, {a.data.shape[1]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    rows = np.arange(a.data.shape[0])
    out_data = a.data[rows, idx]

    def backward():
        g = np.zeros_like(a.data)
        np.add.at(g, (rows, idx), out.grad)
        a.accumulate_grad(g)

    out = node(out_data, (a,), backward, "pick")
    return out


# ---- network building blocks ----


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """Pointwise convolution: channel mixing at every spatial site.

    ``x`` is [C_in, H, W] or [B, C_in, H, W]; ``w`` is [C_out, C_in].
    """
    if w.data.ndim != 2:
        raise ValueError(f"conv1x1 weight must be rank 2 [C_out, C_in], got {w.data.shape}")
    if x.data.ndim not in (3, 4):
        raise ValueError(f"conv1x1 input must be rank 3 or 4, got {x.data.shape}")
    cin_axis = x.data.ndim - 3
    if x.data.shape[cin_axis] != w.data.shape[1]:
        raise ValueError(
            f"conv1x1 channel mismatch: input has {x.data.shape[cin_axis]} channels, "
            f"weight expects {w.data.shape[1]}"
        )
    batched = x.data.ndim == 4
    if batched:
        out_data = np.einsum("oc,bchw->bohw", w.data, x.data, optimize=True)
    else:
        out_data = np.einsum("oc,chw->ohw", w.data, x.data, optimize=True)

    def backward():
        g = out.grad
        if x.requires_grad or x._backward:
            if batched:
                x.accumulate_grad(np.einsum("oc,bohw->bchw", w.data, g, optimize=True))
            else:
                x.accumulate_grad(np.einsum("oc,ohw->chw", w.data, g, optimize=True))
        if w.requires_grad or w._backward:
            if batched:
                w.accumulate_grad(np.einsum("bohw,bchw->oc", g, x.data, optimize=True))
            else:
                w.accumulate_grad(np.einsum("ohw,chw->oc", g, x.data, optimize=True))

    out = node(out_data, (x, w), backward, "conv1x1")
    return out


def avg_pool_to(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Average pooling down to an exact target spatial size.

    The input's H and W must be integer multiples of the target sizes.
    """
    if x.data.ndim not in (3, 4):
        raise ValueError(f"avg_pool_to input must be rank 3 or 4, got {x.data.shape}")
    H, W = x.data.shape[-2], x.data.shape[-1]
    h2, w2 = int(out_hw[0]), int(out_hw[1])
    if h2 <= 0 or w2 <= 0 or H % h2 != 0 or W % w2 != 0:
        raise ValueError(
            f"avg_pool_to target {out_hw} does not evenly divide input spatial size {(H, W)}"
        )
    kh, kw = H // h2, W // w2
    lead = x.data.shape[:-2]
    pooled = x.data.reshape(*lead, h2, kh, w2, kw).mean(axis=(-3, -1))

    def backward():
        g = out.grad / (kh * kw)
        g = np.broadcast_to(g[..., :, None, :, None], (*lead, h2, kh, w2, kw))
        x.accumulate_grad(np.ascontiguousarray(g).reshape(x.data.shape))

    out = node(pooled, (x,), backward, "avg_pool_to")
    return out


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: x [K] or [B, K], w [L, K], b [L]."""
    if w.data.ndim != 2:
        raise ValueError(f"fully_connected weight must be rank 2 [L, K], got {w.data.shape}")
    if x.data.ndim not in (1, 2):
        raise ValueError(f"fully_connected input must be rank 1 or 2, got {x.data.shape}")
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(
            f"fully_connected size mismatch: input features {x.data.shape[-1]}, "
            f"weight expects {w.data.shape[1]}"
        )
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ValueError(
            f"fully_connected bias shape {b.data.shape} does not match output size {w.data.shape[0]}"
        )
    out_data = x.data @ w.data.T
    if b is not None:
        out_data = out_data + b.data

    def backward():
        g = out.grad
        if x.requires_grad or x._backward:
            x.accumulate_grad(g @ w.data)
        if w.requires_grad or w._backward:
            if x.data.ndim == 2:
                w.accumulate_grad(g.T @ x.data)
            else:
                w.accumulate_grad(np.outer(g, x.data))
        if b is not None and (b.requires_grad or b._backward):
            b.accumulate_grad(g.sum(axis=0) if g.ndim == 2 else g)

    parents = (x, w) if b is None else (x, w, b)
    out = node(out_data, parents, backward, "fully_connected")
    return out


# ---- batch normalization kernels ----


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float
                     ) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Training-mode batch norm over [B, C, H, W] with the biased variance.

    Fused into one graph node with the classic hand-derived backward.
    Also returns the per-channel batch mean and biased variance as plain
    arrays so the caller can maintain running estimates.
    """
    B, C, H, W = x.data.shape
    axes = (0, 2, 3)
    mu = x.data.mean(axis=axes)
    centered = x.data - mu[None, :, None, None]
    var = np.einsum("bchw,bchw->c", centered, centered) / (B * H * W)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward():
        g = out.grad
        if beta.requires_grad or beta._backward:
            beta.accumulate_grad(g.sum(axis=axes))
        g_xhat_sum = np.einsum("bchw,bchw->c", g, xhat)
        if gamma.requires_grad or gamma._backward:
            gamma.accumulate_grad(g_xhat_sum)
        if x.requires_grad or x._backward:
            n = B * H * W
            gx = g * gamma.data[None, :, None, None]
            m1 = gx.sum(axis=axes) / n
            m2 = np.einsum("bchw,bchw->c", gx, xhat) / n
            dx = (gx - m1[None, :, None, None] - xhat * m2[None, :, None, None])
            dx *= inv[None, :, None, None]
            x.accumulate_grad(dx)

    out = node(out_data, (x, gamma, beta), backward, "batch_norm_train")
    return out, mu, var


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor,
                    running_mean: np.ndarray, running_var: np.ndarray,
                    eps: float) -> Tensor:
    """Eval-mode batch norm using stored running statistics.

    Differentiable in x, gamma, and beta, so gradients pass through
    frozen eval-mode layers.
    """
    inv = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * inv)[None, :, None, None]
    shift = (beta.data - gamma.data * running_mean * inv)[None, :, None, None]
    out_data = x.data * scale + shift

    def backward():
        g = out.grad
        if x.requires_grad or x._backward:
            x.accumulate_grad(g * scale)
        if gamma.requires_grad or gamma._backward:
            gamma.accumulate_grad(
                np.einsum("bchw,bchw->c", g, x.data) * inv
                - g.sum(axis=(0, 2, 3)) * running_mean * inv)
        if beta.requires_grad or beta._backward:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))

    out = node(out_data, (x, gamma, beta), backward, "batch_norm_eval")
    return out


# ---- softmax family ----


def softmax_t(logits: Tensor, tau: float) -> Tensor:
    """Temperature softmax over the last axis.

    Shift-stabilized, so extreme logits do not overflow.  ``tau`` must be
    a positive number.
    """
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"softmax temperature must be positive, got {tau}")
    z = logits.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward():
        g = out.grad
        inner = (g * s).sum(axis=-1, keepdims=True)
        logits.accumulate_grad((s * (g - inner)) / tau)

    out = node(s, (logits,), backward, "softmax_t")
    return out


def log_softmax(logits: Tensor, tau: float = 1.0) -> Tensor:
    """Log of the temperature softmax, computed via a stable log-sum-exp."""
    tau = float(tau)
    if not tau > 0.0:
        raise ValueError(f"softmax temperature must be positive, got {tau}")
    z = logits.data / tau
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    out_data = z - lse
    s = np.exp(out_data)

    def backward():
        g = out.grad
        logits.accumulate_grad((g - s * g.sum(axis=-1, keepdims=True)) / tau)

    out = node(out_data, (logits,), backward, "log_softmax")
    return out
