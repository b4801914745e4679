"""Random Fourier signature features, with and without forgetting.

Implements the one-pass level recursion over differenced cosine activations:
level 1 is a (geometric) scan of the increments, and each higher level
combines the shifted previous level with the current increments plus the
cascaded repeated-index corrections, then scans.  With decay factors the
scans decay channelwise as lam^m per level; lam = 1 reduces bit-for-bit to
the undecayed map.

The recursion is written once over a tiny ops facade so the training tape and
the plain numpy pipeline share the exact same control flow.
"""

from __future__ import annotations

import threading as _threading
from dataclasses import dataclass

import numpy as np

from . import arrayops
from .arrayops import DecayVector, FracDiffOrders

try:
    from numba import njit, prange

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

NORM_EPS = 1e-12


@dataclass(frozen=True)
class FeatureLevels:
    """Per-time-step feature levels P_1..P_M, each [L x D], unscaled."""

    levels: list

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def shape(self):
        return self.levels[0].shape

    def scaled(self, m: int) -> np.ndarray:
        """Level m with its sqrt(2^m / D) prefactor applied."""
        lvl = self.levels[m - 1]
        return np.sqrt(2.0**m / lvl.shape[1]) * lvl


class _NumpyOps:
    """Array backend for the shared recursion."""

    @staticmethod
    def scan(x, lam_pow):
        if lam_pow is None:
            return np.cumsum(x, axis=0)
        return arrayops.geometric_scan(x, lam_pow, axis=0, check_finite=False)

    @staticmethod
    def shift1(x):
        return arrayops.shift(x, 1, axis=0, check_finite=False)

    @staticmethod
    def power(lam, m):
        return lam**m


def level_recursion(du, lam, ops=_NumpyOps) -> list:
    """Shared one-pass recursion over differenced activations.

    Args:
        du: sequence of M [L x D] arrays (or tape tensors), level p holding
            the differenced activations feeding tuple slot p.
        lam: channelwise decay vector or None for the undecayed map.
        ops: backend providing scan/shift1/power.

    Returns:
        list of M level arrays [L x D] (no sqrt(2^m/D) scaling).
    """
    m_max = len(du)
    p1 = ops.scan(du[0], None if lam is None else lam)
    levels = [p1]
    r_list = [du[0]]
    for m in range(2, m_max + 1):
        shifted = ops.shift1(levels[-1])
        if lam is None:
            pprime = shifted * du[m - 1]
        else:
            pprime = ops.power(lam, m - 1) * shifted * du[m - 1]
        new_r = [pprime]
        for p in range(2, m + 1):
            new_r.append((1.0 / p) * (r_list[p - 2] * du[m - 1]))
        total = new_r[0]
        for term in new_r[1:]:
            total = total + term
        levels.append(ops.scan(total, None if lam is None else ops.power(lam, m)))
        r_list = new_r
    return levels


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _level_update(p_prev, r_buf, du_m, lampow, m, s):
        """One fused pass of the level-m inner update.

        In place: r_buf[p+1] <- 1/(p+2) * r_buf[p] * du (descending p, so old
        entries are read before they are overwritten), r_buf[0] <- the shifted
        previous level times du, then s <- ascending sum of the m entries.
        Arithmetic order matches the unfused recursion exactly.
        """
        L, D = du_m.shape
        for l in prange(L):
            for p_idx in range(m - 2, -1, -1):
                inv = 1.0 / (p_idx + 2)
                for k in range(D):
                    r_buf[p_idx + 1, l, k] = inv * (r_buf[p_idx, l, k] * du_m[l, k])
            for k in range(D):
                prev = p_prev[l - 1, k] if l > 0 else 0.0
                r_buf[0, l, k] = (lampow[k] * prev) * du_m[l, k]
            for k in range(D):
                acc = r_buf[0, l, k]
                for p_idx in range(1, m):
                    acc = acc + r_buf[p_idx, l, k]
                s[l, k] = acc

    @njit(cache=True, parallel=True)
    def _normalize_block(level, scale, eps, out):
        """Write scale*level rows normalized to unit norm into out (zero rows
        below eps stay zero)."""
        L, D = level.shape
        for l in prange(L):
            ss = 0.0
            for k in range(D):
                v = scale * level[l, k]
                out[l, k] = v
                ss += v * v
            norm = np.sqrt(ss)
            if norm >= eps:
                for k in range(D):
                    out[l, k] /= norm
            else:
                for k in range(D):
                    out[l, k] = 0.0

else:  # pragma: no cover
    _level_update = None
    _normalize_block = None


def _fused_levels(du: np.ndarray, lam) -> list:
    """Buffer-reusing variant of :func:`level_recursion` for the hot path."""
    m_max, length, dd = du.shape
    scan = _NumpyOps.scan
    levels = [scan(du[0], None if lam is None else lam)]
    if m_max == 1:
        return levels
    r_buf = np.empty((m_max, length, dd))
    r_buf[0] = du[0]
    s = np.empty((length, dd))
    ones = np.ones(dd)
    for m in range(2, m_max + 1):
        lampow = ones if lam is None else lam ** (m - 1)
        _level_update(levels[-1], r_buf, du[m - 1], lampow, m, s)
        levels.append(scan(s, None if lam is None else lam**m))
    return levels


def _make_levels(du: np.ndarray, lam) -> list:
    if _HAVE_NUMBA and du[0].size >= 4096:
        return _fused_levels(du, lam)
    return level_recursion([du[m] for m in range(du.shape[0])], lam)


def _validate_u(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 3:
        raise ValueError("activations must be [levels x time x channels]")
    if min(u.shape) < 1:
        raise ValueError("empty activation array")
    if not np.all(np.isfinite(u)):
        raise ValueError("activations contain non-finite entries")
    return u


def increments(u, orders: FracDiffOrders) -> np.ndarray:
    """Differenced activations feeding the level recursion, shape [M, L, D].

    The first time step is the path basepoint: it produces no increment of
    its own (row zeroed after differencing), so a constant sequence with
    q = 1 yields identically zero increments and the feature at the first
    step is the empty-path base case.
    """
    u = _validate_u(u)
    du = arrayops.frac_diff(u, orders, axis=1, check_finite=False)
    du[:, 0, :] = 0.0
    return du


def rfsf(u, orders: FracDiffOrders) -> FeatureLevels:
    """Random Fourier signature features for every prefix, one pass.

    Args:
        u: cosine activations [M x L x D] from the random basis.
        orders: channelwise fractional differencing orders and window.
    """
    du = increments(u, orders)
    return FeatureLevels(_make_levels(du, None))


def rfdsf(u, orders: FracDiffOrders, lam) -> FeatureLevels:
    """Decayed variant: channelwise exponential forgetting with factors lam."""
    if isinstance(lam, DecayVector):
        lam = lam.values
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim != 1 or not np.all((lam > 0) & (lam <= 1)):
        raise ValueError("decay factors must be 1-D in (0, 1]")
    if np.asarray(u).shape[-1] != lam.shape[0]:
        raise ValueError("decay vector length must match the channel axis")
    du = increments(u, orders)
    return FeatureLevels(_make_levels(du, lam))


def assemble(levels: FeatureLevels, normalize: bool = True) -> np.ndarray:
    """Full feature matrix [L x (M*D + 1)]: constant 1, then level blocks.

    Each block carries its sqrt(2^m / D) prefactor; with ``normalize`` every
    block row is scaled to unit Euclidean norm, and rows whose norm falls
    below 1e-12 (the empty-path base case) map to zero instead.
    """
    length, dd = levels.shape
    out = np.empty((length, levels.depth * dd + 1))
    out[:, 0] = 1.0
    for m in range(1, levels.depth + 1):
        dst = out[:, 1 + (m - 1) * dd : 1 + m * dd]
        if not normalize:
            dst[:] = levels.scaled(m)
        elif _HAVE_NUMBA and dst.size >= 4096:
            scale = float(np.sqrt(2.0**m / dd))
            _normalize_block(levels.levels[m - 1], scale, NORM_EPS, dst)
        else:
            block = levels.scaled(m)
            norms = np.linalg.norm(block, axis=1, keepdims=True)
            alive = norms >= NORM_EPS
            dst[:] = np.where(alive, block / np.where(alive, norms, 1.0), 0.0)
    return out


_scratch = _threading.local()


def _buffer(key: str, shape) -> np.ndarray:
    store = getattr(_scratch, "bufs", None)
    if store is None:
        store = _scratch.bufs = {}
    arr = store.get(key)
    if arr is None or arr.shape != shape:
        arr = np.empty(shape)
        store[key] = arr
    return arr


def feature_matrix(x, omegas, phases, orders: FracDiffOrders, lam, normalize: bool = True) -> np.ndarray:
    """Whole feature pass in one call: activations, increments, decayed level
    recursion and assembly, sharing thread-local scratch buffers.

    Produces exactly the same values as
    ``assemble(rfdsf(rff_levels(x, omegas, phases), orders, lam))`` (same
    kernels in the same order) while touching far less fresh memory; this is
    the hot path behind training features, prediction, and the benchmark.
    """
    from . import randfourier

    x = np.asarray(x, dtype=np.float64)
    m_levels, _, dd = omegas.shape
    length = x.shape[0]
    # gate must agree with matmul_cos_bias so both paths share kernels exactly
    if not (_HAVE_NUMBA and length * dd >= arrayops._CONV_CUTOFF and x.shape[1] <= 64):
        u = randfourier.rff_levels(x, omegas, phases)
        levels = rfdsf(u, orders, lam)
        return assemble(levels, normalize)

    lam = lam.values if isinstance(lam, DecayVector) else np.asarray(lam, dtype=np.float64)
    if not np.all((lam > 0.0) & (lam <= 1.0)):
        raise ValueError("decay factors must lie in (0, 1]")
    u = _buffer("u", (m_levels, length, dd))
    xc = np.ascontiguousarray(x)
    for m in range(m_levels):
        arrayops._matmul_cos_bias(
            xc, np.ascontiguousarray(omegas[m]), np.ascontiguousarray(phases[m]), u[m]
        )
    if not np.all(np.isfinite(u)):
        raise ValueError("activations contain non-finite entries")
    du = _buffer("du", (m_levels, length, dd))
    w = arrayops.frac_diff_weights(orders.q, orders.window)
    for m in range(m_levels):
        arrayops._fracconv(u[m], w, du[m])
    du[:, 0, :] = 0.0

    p_buf = _buffer("p", (m_levels, length, dd))
    arrayops.scan_into(du[0], lam, p_buf[0])
    if m_levels > 1:
        r_buf = _buffer("r", (m_levels, length, dd))
        r_buf[0] = du[0]
        s = _buffer("s", (length, dd))
        for m in range(2, m_levels + 1):
            lampow = lam ** (m - 1)
            _level_update(p_buf[m - 2], r_buf, du[m - 1], lampow, m, s)
            arrayops.scan_into(s, lam**m, p_buf[m - 1])

    out = np.empty((length, m_levels * dd + 1))
    out[:, 0] = 1.0
    for m in range(1, m_levels + 1):
        dst = out[:, 1 + (m - 1) * dd : 1 + m * dd]
        if normalize:
            _normalize_block(p_buf[m - 1], float(np.sqrt(2.0**m / dd)), NORM_EPS, dst)
        else:
            np.multiply(p_buf[m - 1], np.sqrt(2.0**m / dd), out=dst)
    return out


def unnormalized_inner(levels_x: FeatureLevels, levels_y: FeatureLevels, m: int) -> float:
    """Monte-Carlo estimate of the level-m signature kernel of two sequences.

    Inner product of the final-step features with the sqrt(2^m / D) scaling,
    i.e. the D-sample estimator the feature map was built to realize.
    """
    if not 1 <= m <= min(levels_x.depth, levels_y.depth):
        raise ValueError(f"level {m} out of range")
    return float(levels_x.scaled(m)[-1] @ levels_y.scaled(m)[-1])
