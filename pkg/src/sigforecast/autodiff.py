"""Minimal reverse-mode tape over the fixed operation set of this model.

Nodes wrap float64 ndarrays; each op records a vector-Jacobian closure.  The
catalogue is only what the objective needs: arithmetic with broadcasting,
matmul, cos/exp/log/sqrt/sigmoid, reductions, cumulative and geometric scans,
the fractional-differencing convolution, shifts, slicing, concatenation,
diagonal embed/extract, guarded row normalization, and log-Gamma/digamma.

The geometric-scan adjoint is the time-reversed geometric scan plus the decay
sensitivity sum_l ybar_l * y_{l-1}; everything is certified against central
finite differences in the tests.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

from . import arrayops


class Tensor:
    """A value in the computation graph."""

    __slots__ = ("value", "parents", "requires_grad", "grad", "_vjp")

    # make `ndarray <op> Tensor` defer to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self._vjp = vjp
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=False)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` (summed if non-scalar) into .grad."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            # grads are never mutated in place, so sharing views is safe
            parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    return Tensor(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    return Tensor(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def pow_const(a, p) -> Tensor:
    a = wrap(a)
    p = float(p)
    val = a.value**p
    return Tensor(val, (a,), lambda g: (g * p * a.value ** (p - 1.0),))


def matmul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    return Tensor(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


# ---------------------------------------------------------------------------
# elementwise transcendentals
# ---------------------------------------------------------------------------


def exp(a) -> Tensor:
    a = wrap(a)
    val = np.exp(a.value)
    return Tensor(val, (a,), lambda g: (g * val,))


def log(a) -> Tensor:
    a = wrap(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = wrap(a)
    val = np.sqrt(a.value)
    return Tensor(val, (a,), lambda g: (g * 0.5 / val,))


def cos(a) -> Tensor:
    a = wrap(a)
    return Tensor(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def sigmoid(a) -> Tensor:
    a = wrap(a)
    val = _sp.expit(a.value)
    return Tensor(val, (a,), lambda g: (g * val * (1.0 - val),))


def gammaln(a) -> Tensor:
    a = wrap(a)
    return Tensor(_sp.gammaln(a.value), (a,), lambda g: (g * _sp.digamma(a.value),))


def digamma(a) -> Tensor:
    a = wrap(a)
    return Tensor(_sp.digamma(a.value), (a,), lambda g: (g * _sp.polygamma(1, a.value),))


# ---------------------------------------------------------------------------
# shape and reduction ops
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = wrap(a)
    val = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.value.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Tensor(val, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = wrap(a)
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),))


def concat(parts, axis: int = 0) -> Tensor:
    parts = [wrap(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def take(a, idx) -> Tensor:
    """Indexing/slicing; gradients scatter-add back into place."""
    a = wrap(a)
    val = a.value[idx]

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(val, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = wrap(a)
    inv = tuple(np.argsort(axes))
    return Tensor(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def tril_exp_diag(a) -> Tensor:
    """Strict lower triangle kept, diagonal exponentiated (batched over
    leading axes); turns raw Cholesky blocks into valid factors in one node."""
    a = wrap(a)
    v = a.value
    f = v.shape[-1]
    idx = np.arange(f)
    strict = np.tril(np.ones((f, f)), -1)
    out = v * strict
    expd = np.exp(v[..., idx, idx])
    out[..., idx, idx] = expd

    def vjp(g):
        gr = g * strict
        gr[..., idx, idx] = g[..., idx, idx] * expd
        return (gr,)

    return Tensor(out, (a,), vjp)


def batch_diag_part(a) -> Tensor:
    """Diagonals of the trailing square block, shape [..., F]."""
    a = wrap(a)
    idx = np.arange(a.value.shape[-1])

    def vjp(g):
        out = np.zeros_like(a.value)
        out[..., idx, idx] = g
        return (out,)

    return Tensor(a.value[..., idx, idx].copy(), (a,), vjp)


def sumsq(a, axis=None, keepdims: bool = False) -> Tensor:
    """sum(a*a) without materializing the square in the forward pass."""
    a = wrap(a)
    val = np.sum(a.value * a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (2.0 * g * a.value,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (2.0 * gg * a.value,)

    return Tensor(val, (a,), vjp)


def diag_part(a) -> Tensor:
    a = wrap(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.fill_diagonal(out, g)
        return (out,)

    return Tensor(np.diagonal(a.value).copy(), (a,), vjp)


def diag_embed(v) -> Tensor:
    v = wrap(v)

    def vjp(g):
        return (np.diagonal(g).copy(),)

    return Tensor(np.diag(v.value), (v,), vjp)


def cumsum(a, axis: int = 0) -> Tensor:
    a = wrap(a)

    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return Tensor(np.cumsum(a.value, axis=axis), (a,), vjp)


def shift_time(a, m: int = 1) -> Tensor:
    """Shift forward along axis 0 with zero fill (adjoint shifts backward)."""
    a = wrap(a)
    val = np.zeros_like(a.value)
    if m < a.value.shape[0]:
        val[m:] = a.value[:-m]

    def vjp(g):
        out = np.zeros_like(a.value)
        if m < a.value.shape[0]:
            out[:-m] = g[m:]
        return (out,)

    return Tensor(val, (a,), vjp)


# ---------------------------------------------------------------------------
# scan and convolution primitives
# ---------------------------------------------------------------------------


def _scan2d(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return arrayops.geometric_scan(u, lam, axis=0, check_finite=False)


def geometric_scan(u, lam) -> Tensor:
    """Decayed running sum along axis 0 of a [time x channels] tensor.

    Adjoint: the input gradient is the time-reversed scan of the incoming
    gradient; the decay gradient accumulates sum_l gbar-scan_l * y_{l-1}.
    """
    u, lam = wrap(u), wrap(lam)
    lam_v = lam.value
    y = _scan2d(u.value, lam_v)

    def vjp(g):
        s = _scan2d(np.ascontiguousarray(g[::-1]), lam_v)[::-1]
        glam = np.einsum("ld,ld->d", s[1:], y[:-1]) if y.shape[0] > 1 else np.zeros_like(lam_v)
        return (s, glam)

    return Tensor(y, (u, lam), vjp)


def frac_diff(u, w) -> Tensor:
    """Channelwise causal convolution of ``u`` [L x D] with weights [W x D]."""
    u, w = wrap(u), wrap(w)
    uv, wv = u.value, w.value
    L = uv.shape[0]
    W = wv.shape[0]
    val = arrayops._frac_diff_2d(uv, wv)

    def vjp(g):
        gu = wv[0] * g
        for k in range(1, min(W, L)):
            gu[:-k] += wv[k] * g[k:]
        gw = np.empty_like(wv)
        for k in range(min(W, L)):
            gw[k] = np.einsum("ld,ld->d", g[k:], uv[: L - k])
        if W > L:
            gw[L:] = 0.0
        return (gu, gw)

    return Tensor(val, (u, w), vjp)


def safe_normalize_rows(v, eps: float = 1e-12) -> Tensor:
    """Rows scaled to unit norm; rows with norm < eps map to zero."""
    v = wrap(v)
    norms = np.linalg.norm(v.value, axis=1, keepdims=True)
    alive = norms >= eps
    safe = np.where(alive, norms, 1.0)
    out = np.where(alive, v.value / safe, 0.0)

    def vjp(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (np.where(alive, (g - inner * out) / safe, 0.0),)

    return Tensor(out, (v,), vjp)
