"""Brute-force reference implementations used as test oracles.

Everything here is deliberately naive: discrete-time signatures by Chen's
recursion *and* by direct enumeration over ordered index tuples, the truncated
signature kernel by full double enumeration, and the random-feature levels by
direct summation.  Size guards keep the factorial blow-up out of production
paths; these functions exist to certify the fast pipeline at tiny sizes.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb, factorial

import numpy as np


class OracleSizeError(RuntimeError):
    """Enumeration bound exceeded; the oracle refuses desk-unsafe sizes."""


@dataclass(frozen=True)
class SignatureTensors:
    """Dense signature levels; ``levels[m]`` has shape (d,)*m, level 0 is 1."""

    levels: list

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level(self, m: int) -> np.ndarray:
        return self.levels[m]


def _increments(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("path must be a [points x channels] array")
    return np.diff(x, axis=0)


def _tuple_weight(idx: tuple) -> float:
    w = 1.0
    for c in Counter(idx).values():
        w /= factorial(c)
    return w


def exact_signature(x, m_max: int, method: str = "recursion") -> SignatureTensors:
    """Discrete-time signature of a path given by its points.

    ``method="recursion"`` extends one increment at a time,
        S_m(0:l) = S_m(0:l-1) + sum_p S_{m-p}(0:l-1) (x) (dx_l)^{(x)p} / p!
    starting from S_m(0:0) = 0; ``method="enumeration"`` sums
    dx_{i_1} (x) ... (x) dx_{i_m} / i! over all ordered tuples
    i_1 <= ... <= i_m, with i! the product of repetition factorials.
    The two are compared against each other in the tests.
    """
    dx = _increments(x)
    n, d = dx.shape
    if m_max < 1:
        raise ValueError("truncation level must be >= 1")
    if d**m_max > 10**6:
        raise OracleSizeError(f"level-{m_max} tensor with d={d} exceeds the size guard")

    if method == "recursion":
        sigs = [np.float64(1.0)] + [np.zeros((d,) * m) for m in range(1, m_max + 1)]
        for l in range(n):
            step = dx[l]
            powers = [np.float64(1.0)]
            for p in range(1, m_max + 1):
                powers.append(np.multiply.outer(powers[-1], step) / p)
            new = [np.float64(1.0)]
            for m in range(1, m_max + 1):
                acc = sigs[m].copy()
                for p in range(1, m + 1):
                    acc += np.multiply.outer(sigs[m - p], powers[p])
                new.append(acc)
            sigs = new
        return SignatureTensors(sigs)

    if method == "enumeration":
        sigs = [np.float64(1.0)]
        for m in range(1, m_max + 1):
            acc = np.zeros((d,) * m)
            for idx in combinations_with_replacement(range(n), m):
                term = dx[idx[0]]
                for i in idx[1:]:
                    term = np.multiply.outer(term, dx[i])
                acc += _tuple_weight(idx) * term
            sigs.append(acc)
        return SignatureTensors(sigs)

    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# signature kernel
# ---------------------------------------------------------------------------


def _base_gram(x, y, base, lengthscale) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if callable(base):
        return np.asarray(base(x, y), dtype=np.float64)
    if base == "linear":
        return x @ y.T
    if base == "gauss":
        ell = 1.0 if lengthscale is None else np.asarray(lengthscale, dtype=np.float64)
        diff = x[:, None, :] / ell - y[None, :, :] / ell
        return np.exp(-0.5 * np.sum(diff**2, axis=-1))
    raise ValueError(f"unknown base kernel {base!r}")


def exact_sig_kernel(
    x,
    y,
    m_max: int,
    base="linear",
    lengthscale=None,
    level: int | None = None,
) -> float:
    """Truncated signature kernel by double enumeration over index tuples.

    Sums 1/(i! j!) * prod_p nabla[i_p, j_p] over all pairs of ordered tuples,
    where nabla is the second-order difference of the base-kernel Gram,
    nabla[i, j] = k(x_{i+1}, y_{j+1}) - k(x_{i+1}, y_j) - k(x_i, y_{j+1})
    + k(x_i, y_j).

    Args:
        level: return only the level-``level`` value; default sums levels
            0..m_max (level 0 contributes 1).
    """
    gram = _base_gram(x, y, base, lengthscale)
    nabla = gram[1:, 1:] - gram[1:, :-1] - gram[:-1, 1:] + gram[:-1, :-1]
    nx, ny = nabla.shape
    if nx < 1 or ny < 1:
        raise ValueError("each sequence needs at least one increment")

    def level_value(m: int) -> float:
        if m == 0:
            return 1.0
        if comb(nx + m - 1, m) * comb(ny + m - 1, m) > 10**7:
            raise OracleSizeError("level enumeration exceeds the size guard")
        total = 0.0
        for it in combinations_with_replacement(range(nx), m):
            wi = _tuple_weight(it)
            for jt in combinations_with_replacement(range(ny), m):
                prod = wi * _tuple_weight(jt)
                for p in range(m):
                    prod *= nabla[it[p], jt[p]]
                total += prod
        return total

    if level is not None:
        return level_value(level)
    return sum(level_value(m) for m in range(m_max + 1))


# ---------------------------------------------------------------------------
# direct random-feature levels
# ---------------------------------------------------------------------------


def direct_rfsf(du, lam=None) -> list:
    """Random-feature signature levels by direct summation (no recursion).

    Args:
        du: differenced per-level activations, shape [M, L, D]; factor p of a
            tuple reads level p.
        lam: optional channelwise decay factors; each factor is additionally
            weighted by lam^(l - i_p).

    Returns:
        list of M arrays [L, D]; entry (l-1) of level m is
        sum over tuples 1 <= i_1 <= ... <= i_m <= l of
        1/i! * prod_p lam^(l-i_p) * du[p, i_p].
    """
    du = np.asarray(du, dtype=np.float64)
    if du.ndim != 3:
        raise ValueError("expected increments of shape [levels, time, channels]")
    m_max, L, D = du.shape
    if L > 12 or m_max > 4:
        raise OracleSizeError("direct enumeration limited to L <= 12, M <= 4")
    if lam is not None:
        lam = np.asarray(lam, dtype=np.float64)

    levels = [np.zeros((L, D)) for _ in range(m_max)]
    for m in range(1, m_max + 1):
        out = levels[m - 1]
        for l in range(1, L + 1):
            acc = np.zeros(D)
            for idx in combinations_with_replacement(range(1, l + 1), m):
                term = np.full(D, _tuple_weight(idx))
                for p, ip in enumerate(idx):
                    factor = du[p, ip - 1]
                    if lam is not None:
                        factor = factor * lam ** (l - ip)
                    term = term * factor
                acc += term
            out[l - 1] = acc
    return levels
