"""Dense float64 tensors with a dynamic reverse-mode tape.

Every op builds its output eagerly and, when any input requires a gradient,
attaches a closure that pushes the upstream gradient into the parents.
The tape is rebuilt on every forward pass and released by `backward`.
"""
from __future__ import annotations

import contextlib
import contextvars
import itertools
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, DimensionError, DomainError, GraphError, NumericError

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_kink_log = contextvars.ContextVar("kink_log", default=None)
_ids = itertools.count()

NORM_KINDS = ("l1_mean", "l2_mean", "smooth_l1_mean")
HUBER_DELTA = 1.0


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def record_kinks():
    """Collect the branch pattern of every non-smooth op evaluated inside the block."""
    log: list[np.ndarray] = []
    token = _kink_log.set(log)
    try:
        yield log
    finally:
        _kink_log.reset(token)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward", "_released")

    def __init__(self, data, requires_grad: bool = False, *, _copy: bool = True):
        arr = np.array(data, dtype=np.float64) if _copy else data
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor(data, _copy=False)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not agree")

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y = x W^T + b with W stored out x in."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias {bias.shape} does not match weight {weight.shape}")

    def bw(g):
        _accumulate(x, g @ weight.data)
        _accumulate(weight, g.T @ x.data)
        _accumulate(bias, g.sum(axis=0))

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), "linear", bw)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation with zero padding."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    n, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise DimensionError(f"kernel expects {kc} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias {bias.shape} does not match {c_out} output channels")
    p = int(padding)
    if p < 0 or kh > h + 2 * p or kw > w + 2 * p:
        raise DimensionError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {p}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, h', w', kh, kw
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def bw(g):
        if kernel.requires_grad:
            _accumulate(kernel, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + ho, j:j + wo] += np.tensordot(g, kernel.data[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
            _accumulate(x, gxp[:, :, p:p + h, p:p + w])

    return _result(np.ascontiguousarray(out), (x, kernel, bias), "conv2d", bw)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), "add", bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes {a.shape} and {b.shape} differ")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), "sub", bw)


def scale(a: Tensor, s) -> Tensor:
    """Multiply every element of `a` by a scalar tensor (or a plain number)."""
    if not isinstance(s, Tensor):
        c = float(s)
        return _result(a.data * c, (a,), "scale", lambda g: _accumulate(a, g * c))
    if s.size != 1:
        raise DimensionError(f"scale factor must hold a single value, got shape {s.shape}")
    sv = s.data.reshape(())

    def bw(g):
        _accumulate(a, g * sv)
        if s.requires_grad:
            _accumulate(s, np.reshape(np.sum(g * a.data), s.shape))

    return _result(a.data * sv, (a, s), "scale", bw)


def elementwise(op: str, a: Tensor, b) -> Tensor:
    if op == "add":
        return add(a, _as_tensor(b))
    if op == "sub":
        return sub(a, _as_tensor(b))
    if op in ("scale", "scale_by_scalar_tensor"):
        return scale(a, b)
    raise DomainError(f"unknown elementwise op {op!r}")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), "tanh", lambda g: _accumulate(x, g * (1.0 - y * y)))


# ---------------------------------------------------------------- shape / reductions


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _result(x.data.reshape(shape), (x,), "reshape", lambda g: _accumulate(x, g.reshape(x.shape)))


def avg_pool2d(x: Tensor, size: int) -> Tensor:
    n, c, h, w = x.shape
    if h % size or w % size:
        raise DimensionError(f"pool size {size} does not divide {h}x{w}")
    y = x.data.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5))

    def bw(g):
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        _accumulate(x, up)

    return _result(y, (x,), "avg_pool2d", bw)


def sum_all(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), "sum", lambda g: _accumulate(x, np.full(x.shape, float(g))))


def mean_all(x: Tensor) -> Tensor:
    if x.size == 0:
        raise DomainError("mean of an empty tensor")
    n = x.size
    return _result(np.array(x.data.mean()), (x,), "mean", lambda g: _accumulate(x, np.full(x.shape, float(g) / n)))


def reduce_norm(x: Tensor, kind: str = "l1_mean") -> Tensor:
    """Mean-reduced L1, squared-L2 or smooth-L1 (delta 1) penalty of every element."""
    if x.size == 0:
        raise DomainError("norm of an empty tensor")
    n = x.size
    v = x.data
    log = _kink_log.get()
    if kind == "l1_mean":
        if log is not None:
            log.append(np.sign(v))
        val = np.abs(v).mean()
        dfn = lambda: np.sign(v)
    elif kind == "l2_mean":
        val = (v * v).mean()
        dfn = lambda: 2.0 * v
    elif kind == "smooth_l1_mean":
        a = np.abs(v)
        if log is not None:
            log.append(np.where(a < HUBER_DELTA, 0.0, np.sign(v)))
        val = np.where(a < HUBER_DELTA, 0.5 * v * v / HUBER_DELTA, a - 0.5 * HUBER_DELTA).mean()
        dfn = lambda: np.clip(v / HUBER_DELTA, -1.0, 1.0)
    else:
        raise DomainError(f"unknown norm kind {kind!r}")
    return _result(np.array(val), (x,), kind, lambda g: _accumulate(x, float(g) * dfn() / n))


# ---------------------------------------------------------------- classification


def cosine_logits(features: Tensor, prototypes: Tensor, temperature: float) -> Tensor:
    if features.data.ndim != 2 or prototypes.data.ndim != 2 or features.shape[1] != prototypes.shape[1]:
        raise DimensionError(f"cosine_logits shapes {features.shape} and {prototypes.shape} do not agree")
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    fn_ = np.linalg.norm(features.data, axis=1, keepdims=True)
    pn_ = np.linalg.norm(prototypes.data, axis=1, keepdims=True)
    if np.any(fn_ == 0) or np.any(pn_ == 0):
        raise DegenerateInputError("zero-norm row in cosine_logits")
    fu = features.data / fn_
    pu = prototypes.data / pn_
    t = float(temperature)

    def bw(g):
        if features.requires_grad:
            gu = g @ pu / t
            _accumulate(features, (gu - fu * np.sum(gu * fu, axis=1, keepdims=True)) / fn_)
        if prototypes.requires_grad:
            gu = g.T @ fu / t
            _accumulate(prototypes, (gu - pu * np.sum(gu * pu, axis=1, keepdims=True)) / pn_)

    return _result(fu @ pu.T / t, (features, prototypes), "cosine_logits", bw)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not agree")
    b, k = logits.shape
    if b == 0:
        raise DomainError("empty batch")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        _accumulate(logits, float(g) * d / b)

    return _result(np.array(loss), (logits,), "softmax_cross_entropy", bw)


# ---------------------------------------------------------------- backward


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Populate .grad on every requires_grad tensor reachable from a scalar loss."""
    if loss.data.ndim != 0 and loss.size != 1:
        raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._released:
        raise GraphError("graph already released by a previous backward")
    if not loss.requires_grad:
        raise GraphError("loss is not attached to any graph with trainable inputs")
    order = topological_order(loss)
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True
