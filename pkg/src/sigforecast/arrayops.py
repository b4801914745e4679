"""Vectorized array calculus for the signature feature pipeline.

Pure kernels over dense float64 arrays: slice sums, cumulative and geometric
(exponentially decayed) scans along the time axis, channelwise fractional
differencing, shifts, and Hadamard products.  Layout convention throughout:
channels are the last axis, time is the axis being scanned, and elements read
outside array bounds are zeros (no circular wrap).

The geometric scan ``y_l = lam*y_{l-1} + u_l`` ships in two realizations: a
sequential reference and a fixed-block two-pass parallel scan (numba prange).
The block structure depends only on the sequence length, so results are
bitwise independent of the thread count.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    import numba

    # the bundled TBB is too old on some hosts; omp avoids the startup warning
    numba.config.THREADING_LAYER = "omp"
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap

    prange = range

#: block length of the two-pass scan; fixed so results never depend on threads
SCAN_BLOCK = 1024

#: below this many elements the sequential scan wins (no fixup pass); the
#: streaming recurrence is memory-bound, so the crossover sits high
_PARALLEL_CUTOFF = 1 << 22

#: the direct convolution kernel wins early (W-fold arithmetic per element)
_CONV_CUTOFF = 16384


def set_threads(n: int) -> None:
    """Cap internal parallelism at ``n`` threads (numba thread pool)."""
    if _HAVE_NUMBA:
        numba.set_num_threads(max(1, int(n)))


def configured_threads() -> int:
    """Thread cap currently in effect."""
    if _HAVE_NUMBA:
        return numba.get_num_threads()
    return 1


env_threads = os.environ.get("SIGFORECAST_THREADS")
if env_threads:
    try:
        set_threads(int(env_threads))
    except ValueError:
        pass


@dataclass(frozen=True)
class DecayVector:
    """Channelwise decay factors, each in (0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("decay vector must be 1-D")
        if not np.all((v > 0.0) & (v <= 1.0)):
            raise ValueError("decay factors must lie in (0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FracDiffOrders:
    """Channelwise fractional differencing orders with a finite window.

    Orders outside (0, 1) are allowed (q=0 is the identity, q=1 plain
    differencing); they are test identities, not errors.
    """

    q: np.ndarray
    window: int

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1:
            raise ValueError("fractional orders must be 1-D")
        if not np.all(np.isfinite(q)):
            raise ValueError("fractional orders must be finite")
        if self.window < 1:
            raise ValueError("fractional differencing window must be >= 1")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "window", int(self.window))


def _validate(a, check_finite: bool) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if check_finite and not np.all(np.isfinite(a)):
        raise ValueError("array contains non-finite entries")
    return a


def _check_axis(a: np.ndarray, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} invalid for array of rank {a.ndim}")
    return axis % a.ndim


def slice_sum(a, axis: int, check_finite: bool = True) -> np.ndarray:
    """Sum away one axis (rank drops by one)."""
    a = _validate(a, check_finite)
    axis = _check_axis(a, axis)
    return a.sum(axis=axis)


def cumsum(a, axis: int, check_finite: bool = True) -> np.ndarray:
    """Running sum along ``axis``."""
    a = _validate(a, check_finite)
    axis = _check_axis(a, axis)
    return np.cumsum(a, axis=axis)


def shift(a, m: int, axis: int, check_finite: bool = True) -> np.ndarray:
    """Shift forward by ``m`` along ``axis``; vacated slots become zero."""
    if m < 1:
        raise ValueError("shift amount must be a positive integer")
    a = _validate(a, check_finite)
    axis = _check_axis(a, axis)
    out = np.zeros_like(a)
    if m >= a.shape[axis]:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(0, a.shape[axis] - m)
    dst[axis] = slice(m, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def hadamard(a, b, check_finite: bool = True) -> np.ndarray:
    """Elementwise product of identically shaped arrays."""
    a = _validate(a, check_finite)
    b = _validate(b, check_finite)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a * b


# ---------------------------------------------------------------------------
# geometric scan
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _geoscan_seq(u, lam, out):
        L, D = u.shape
        for k in range(D):
            out[0, k] = u[0, k]
        for l in range(1, L):
            for k in range(D):
                out[l, k] = lam[k] * out[l - 1, k] + u[l, k]

    @njit(cache=True, parallel=True)
    def _geoscan_blocked(u, lam, out, block):
        L, D = u.shape
        nblocks = (L + block - 1) // block
        tails = np.empty((nblocks, D))
        # pass 1: independent local scans per block
        for j in prange(nblocks):
            s = j * block
            e = min(s + block, L)
            for k in range(D):
                out[s, k] = u[s, k]
            for l in range(s + 1, e):
                for k in range(D):
                    out[l, k] = lam[k] * out[l - 1, k] + u[l, k]
            for k in range(D):
                tails[j, k] = out[e - 1, k]
        # pass 2: exclusive carry across blocks (cheap, sequential)
        carries = np.zeros((nblocks, D))
        lam_pow = np.empty(D)
        for k in range(D):
            lam_pow[k] = lam[k] ** block
        for j in range(1, nblocks):
            for k in range(D):
                carries[j, k] = lam_pow[k] * carries[j - 1, k] + tails[j - 1, k]
        # pass 3: propagate carries into each block
        for j in prange(1, nblocks):
            s = j * block
            e = min(s + block, L)
            fac = lam.copy()
            for l in range(s, e):
                for k in range(D):
                    out[l, k] += carries[j, k] * fac[k]
                    fac[k] *= lam[k]

else:  # pragma: no cover

    def _geoscan_seq(u, lam, out):
        out[0] = u[0]
        for l in range(1, u.shape[0]):
            out[l] = lam * out[l - 1] + u[l]

    def _geoscan_blocked(u, lam, out, block):
        _geoscan_seq(u, lam, out)


def _geoscan_dispatch(u2d: np.ndarray, lam: np.ndarray, parallel) -> np.ndarray:
    out = np.empty_like(u2d)
    if u2d.shape[0] == 0:
        return out
    use_par = u2d.size >= _PARALLEL_CUTOFF if parallel is None else parallel
    if use_par:
        _geoscan_blocked(u2d, lam, out, SCAN_BLOCK)
    else:
        _geoscan_seq(u2d, lam, out)
    return out


def geometric_scan(
    a,
    lam,
    axis: int = 0,
    check_finite: bool = True,
    parallel: bool | None = None,
) -> np.ndarray:
    """Channelwise decayed running sum along the time axis.

    ``out[..., l, k] = sum_{kappa<=l} lam[k]^(l-kappa) * a[..., kappa, k]``,
    i.e. the recurrence ``y_l = lam*y_{l-1} + u_l`` per channel.  Channels are
    the last axis and must match ``lam``; ``lam`` identically 1 reduces the
    scan to ``cumsum`` exactly.

    Args:
        a: array whose last axis is channels; ``axis`` selects the time axis.
        lam: decay factors in (0, 1], one per channel (or a DecayVector).
        parallel: force the blocked parallel kernel on/off; default picks by
            size.  Both kernels agree to reassociation roundoff.
    """
    if isinstance(lam, DecayVector):
        lam = lam.values
    lam = np.ascontiguousarray(lam, dtype=np.float64)
    if lam.ndim != 1 or not np.all((lam > 0.0) & (lam <= 1.0)):
        raise ValueError("decay factors must be 1-D and lie in (0, 1]")
    a = _validate(a, check_finite)
    axis = _check_axis(a, axis)
    if axis == a.ndim - 1:
        raise ValueError("scan axis must differ from the channel (last) axis")
    if a.shape[-1] != lam.shape[0]:
        raise ValueError(
            f"channel length {a.shape[-1]} does not match {lam.shape[0]} decays"
        )
    if np.all(lam == 1.0):
        return np.cumsum(a, axis=axis)
    moved = np.moveaxis(a, axis, -2)
    lead = moved.shape[:-2]
    flat = np.ascontiguousarray(moved).reshape((-1,) + moved.shape[-2:])
    res = np.empty_like(flat)
    for i in range(flat.shape[0]):
        res[i] = _geoscan_dispatch(flat[i], lam, parallel)
    return np.moveaxis(res.reshape(lead + moved.shape[-2:]), -2, axis)


def scan_into(u2d: np.ndarray, lam: np.ndarray, out: np.ndarray, parallel=None) -> None:
    """Geometric scan of a 2-D [time x channels] block into ``out``.

    Same kernels and dispatch as :func:`geometric_scan` (bitwise identical),
    minus validation and allocation; internal hot-path helper.
    """
    if np.all(lam == 1.0):
        np.cumsum(u2d, axis=0, out=out)
        return
    use_par = u2d.size >= _PARALLEL_CUTOFF if parallel is None else parallel
    if use_par:
        _geoscan_blocked(u2d, lam, out, SCAN_BLOCK)
    else:
        _geoscan_seq(u2d, lam, out)


def geometric_scan_reference(a, lam, axis: int = 0) -> np.ndarray:
    """Sequential recurrence, kept as the differential-testing reference."""
    if isinstance(lam, DecayVector):
        lam = lam.values
    lam = np.asarray(lam, dtype=np.float64)
    a = _validate(a, True)
    axis = _check_axis(a, axis)
    moved = np.moveaxis(a, axis, -2)
    out = np.empty_like(moved)
    prev = np.zeros(moved.shape[:-2] + moved.shape[-1:])
    for l in range(moved.shape[-2]):
        prev = lam * prev + moved[..., l, :]
        out[..., l, :] = prev
    return np.moveaxis(out, -2, axis)


# ---------------------------------------------------------------------------
# fractional differencing
# ---------------------------------------------------------------------------


def frac_diff_weights(q, window: int) -> np.ndarray:
    """Generalized-binomial filter weights ``w_kappa = (-1)^kappa C(q, kappa)``.

    Built with the stable multiplicative recurrence
    ``w_0 = 1, w_kappa = w_{kappa-1} * (kappa - 1 - q) / kappa`` which equals
    the Gamma-ratio form wherever the latter is defined and has no poles at
    the integer collapse points q=0 (identity) and q=1 (first differences).

    Returns:
        array of shape [window, len(q)].
    """
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    w = np.empty((window, q.shape[0]))
    w[0] = 1.0
    for k in range(1, window):
        w[k] = w[k - 1] * (k - 1 - q) / k
    return w


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _fracconv(u, w, out):
        # accumulate in ascending-lag order with the channel loop innermost
        # (contiguous rows); matches the numpy shifted-add path bit for bit
        L, D = u.shape
        W = w.shape[0]
        for l in prange(L):
            kmax = min(W, l + 1)
            for k in range(D):
                out[l, k] = w[0, k] * u[l, k]
            for kk in range(1, kmax):
                for k in range(D):
                    out[l, k] += w[kk, k] * u[l - kk, k]

else:  # pragma: no cover
    _fracconv = None


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _cos_bias(z, b, out):
        L, D = z.shape
        for l in prange(L):
            for k in range(D):
                out[l, k] = np.cos(z[l, k] + b[k])

    @njit(cache=True, parallel=True)
    def _matmul_cos_bias(x, om, b, out):
        # cos(x @ om + b) in one region; keeps the hot path off the BLAS pool
        L, d = x.shape
        D = om.shape[1]
        for l in prange(L):
            for k in range(D):
                out[l, k] = b[k]
            for j in range(d):
                xv = x[l, j]
                for k in range(D):
                    out[l, k] += xv * om[j, k]
            for k in range(D):
                out[l, k] = np.cos(out[l, k])

else:  # pragma: no cover
    _cos_bias = None
    _matmul_cos_bias = None


def cos_bias(z: np.ndarray, b: np.ndarray) -> np.ndarray:
    """cos(z + b) with the bias broadcast over rows (parallel when large)."""
    if _HAVE_NUMBA and z.size >= _CONV_CUTOFF:
        out = np.empty_like(z)
        _cos_bias(np.ascontiguousarray(z), np.ascontiguousarray(b), out)
        return out
    return np.cos(z + b)


def matmul_cos_bias(x: np.ndarray, om: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fused cos(x @ om + b) for narrow inputs; falls back to BLAS + cos."""
    if _HAVE_NUMBA and x.shape[0] * om.shape[1] >= _CONV_CUTOFF and x.shape[1] <= 64:
        out = np.empty((x.shape[0], om.shape[1]))
        _matmul_cos_bias(
            np.ascontiguousarray(x), np.ascontiguousarray(om), np.ascontiguousarray(b), out
        )
        return out
    return cos_bias(x @ om, b)


def _frac_diff_2d(u2d: np.ndarray, w: np.ndarray) -> np.ndarray:
    if _HAVE_NUMBA and u2d.size >= _CONV_CUTOFF and w.shape[0] > 2:
        out = np.empty_like(u2d)
        _fracconv(np.ascontiguousarray(u2d), np.ascontiguousarray(w), out)
        return out
    out = w[0] * u2d
    for k in range(1, min(w.shape[0], u2d.shape[0])):
        out[k:] += w[k] * u2d[:-k]
    return out


def frac_diff(a, orders: FracDiffOrders, axis: int = 0, check_finite: bool = True) -> np.ndarray:
    """Channelwise fractional difference along the time axis.

    ``out[..., l, k] = sum_{kappa=0}^{W-1} w_kappa(q_k) * a[..., l-kappa, k]``
    with zero padding below the first element.  Orders outside (0, 1) are
    accepted (the weights stay defined); q=1 collapses to first differences
    and q=0 to the identity.
    """
    q = orders.q
    a = _validate(a, check_finite)
    axis = _check_axis(a, axis)
    if axis == a.ndim - 1:
        raise ValueError("time axis must differ from the channel (last) axis")
    if a.shape[-1] != q.shape[0]:
        raise ValueError(
            f"channel length {a.shape[-1]} does not match {q.shape[0]} orders"
        )
    w = frac_diff_weights(q, orders.window)
    moved = np.moveaxis(a, axis, -2)
    lead = moved.shape[:-2]
    flat = np.ascontiguousarray(moved).reshape((-1,) + moved.shape[-2:])
    res = np.empty_like(flat)
    for i in range(flat.shape[0]):
        res[i] = _frac_diff_2d(flat[i], w)
    return np.moveaxis(res.reshape(lead + moved.shape[-2:]), -2, axis)
