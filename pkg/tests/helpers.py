"""Shared test oracles: finite-difference derivatives and bisection roots."""

from __future__ import annotations

import numpy as np


def fornberg_weights(z: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at z on nodes x."""
    n = len(x)
    c = np.zeros((n, m + 1))
    c1, c4 = 1.0, x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2, c5, c4 = 1.0, c4, x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def fd_derivative(f, x0: float, order: int, h: float = 0.08, npts: int = 11) -> float:
    """High-order central finite-difference derivative of a scalar callable."""
    offsets = (np.arange(npts) - (npts - 1) / 2) * h
    nodes = x0 + offsets
    w = fornberg_weights(x0, nodes, order)
    return float(np.dot(w, [f(x) for x in nodes]))


def bisection_root(f, lo: float, hi: float, iters: int = 200) -> float:
    """Plain bisection; requires a sign change on [lo, hi]."""
    flo = f(lo)
    for _ in range(iters):
        mid = (lo + hi) / 2
        if flo * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
            flo = f(lo)
    return (lo + hi) / 2


# Frozen oracle values (computed with bisection_root before the build):
CUBIC_ROOT_01 = 0.09902885240545731   # x + x^3 = 0.1
CUBIC_ROOT_005 = 0.049875928231106065  # x + x^3 = 0.05
