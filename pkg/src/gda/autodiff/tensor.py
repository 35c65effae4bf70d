"""Dense f64 tensors with a dynamic reverse-mode graph.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back into them. Graphs are rebuilt
on every forward pass; call :meth:`Tensor.backward` on a scalar to fill
``.grad`` on every leaf that requires it.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference, sampling)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs an explicit grad for shape {self.shape}")
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
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    # one reduction instead of a boolean mask: the sum is non-finite iff some entry is
    if not np.isfinite(np.sum(data)) and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def _sigmoid(z):
    s = np.tanh(0.5 * z)
    s += 1.0
    s *= 0.5
    return s


def silu(x):
    s = _sigmoid(x.data)

    def backward(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return _make(x.data * s, (x,), backward, "silu")


# ---------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward, "mean")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x, idx):
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 backward, "concat")


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of the two trailing axes."""
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), backward, "upsample2x")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def _pad_amount(padding, k):
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    return int(padding)


CONV_CHUNK = 1 << 22  # im2col entries per batch chunk; keeps the column buffer cache-sized


def conv2d(x, w, b=None, stride=1, padding="same", groups=1):
    """2-D cross-correlation, NCHW input, weight [O, C/groups, kh, kw].

    im2col + one GEMM per group, done over batch chunks so the column buffer
    stays small; chunking changes no per-sample arithmetic.
    """
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if c != cg * groups or o % groups:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {w.shape} (groups={groups})")
    p = _pad_amount(padding, kh)
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {x.shape} too small for kernel {w.shape}")
    og = o // groups
    wmat = w.data.reshape(groups, og, cg * kh * kw)
    xc = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))  # [C, N, Hp, Wp]
    step = max(1, CONV_CHUNK // (c * kh * kw * ho * wo))
    spans = [(s, min(n, s + step)) for s in range(0, n, step)]

    def im2col(lo, hi):
        cols = np.empty((c, kh, kw, hi - lo, ho, wo))
        for i in range(kh):
            for j in range(kw):
                cols[:, i, j] = xc[:, lo:hi, i : i + stride * (ho - 1) + 1 : stride,
                                   j : j + stride * (wo - 1) + 1 : stride]
        return cols.reshape(groups, cg * kh * kw, (hi - lo) * ho * wo)

    keep = _GRAD_ENABLED and any(t.requires_grad for t in (x, w, b) if t is not None)
    out = np.empty((n, o, ho, wo))
    saved = []
    for lo, hi in spans:
        cols = im2col(lo, hi)
        out[lo:hi] = (wmat @ cols).reshape(o, hi - lo, ho, wo).transpose(1, 0, 2, 3)
        if keep:
            saved.append(cols)
    if b is not None:
        out += b.data.reshape(1, o, 1, 1)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gw = np.zeros((groups, og, cg * kh * kw))
        gxp = np.zeros((c, n, hp, wp)) if x.requires_grad else None
        for (lo, hi), cols in zip(spans, saved):
            gm = g[lo:hi].transpose(1, 0, 2, 3).reshape(groups, og, (hi - lo) * ho * wo)
            gw += gm @ cols.transpose(0, 2, 1)
            if gxp is None:
                continue
            gcols = (wmat.transpose(0, 2, 1) @ gm).reshape(c, kh, kw, hi - lo, ho, wo)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, lo:hi, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += gcols[:, i, j]
        gx = None
        if gxp is not None:
            gx = gxp[:, :, p : hp - p, p : wp - p] if p else gxp
            gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        if b is None:
            return gx, gw.reshape(w.shape)
        return gx, gw.reshape(w.shape), g.sum(axis=(0, 2, 3))

    return _make(out, parents, backward, "conv2d")


# ---------------------------------------------------------------- normalisation / attention helpers

def layer_norm(x, gain, bias, axes=(-1,), eps=1e-5):
    """Normalise over ``axes``; ``gain``/``bias`` broadcast against x."""
    axes = tuple(a % x.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=axes, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=axes, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def embedding(table, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding: index out of range for table {table.shape}")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.data[idx], (table,), backward, "embedding")


# ---------------------------------------------------------------- losses

def mse_loss(pred, target):
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = g * 2.0 * diff / n
        return gp, -gp

    return _make(np.mean(diff * diff), (pred, target), backward, "mse_loss")


def cross_entropy_loss(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy_loss: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError("cross_entropy_loss: label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _make(max(loss, 0.0), (logits,), backward, "cross_entropy")


def scaled_dot_attention(q, k, v):
    """Single-head attention over [N, L, D] queries/keys/values."""
    d = q.shape[-1]
    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)
