"""Interpolation utilities: cubic Hermite on uniform-ish grids and barycentric
Chebyshev families.

Kernels store exact radial derivatives, so radial evaluation uses cubic Hermite
interpolation (locally O(h^4) where the function is smooth, O(h^2) across the
C^1 kinks the smooth cutoffs introduce).  Spectral-parameter families live on
Chebyshev-Lobatto nodes and are evaluated barycentrically, which stays valid at
complex arguments inside the Bernstein ellipse of the node interval.
"""

from __future__ import annotations

import numpy as np


def hermite_eval(grid: np.ndarray, values: np.ndarray, dvalues: np.ndarray,
                 x, with_deriv: bool = False):
    """Cubic Hermite interpolation of (values, dvalues) sampled on `grid`.

    values/dvalues may carry trailing axes; interpolation runs along axis 0.
    Points beyond the grid ends are extrapolated from the end interval.
    A single-point grid degenerates to the linear model value + dvalue*(x-x0).
    """
    x = np.asarray(x)
    scalar = x.ndim == 0
    xf = np.atleast_1d(x).astype(float)
    dout = None
    if len(grid) == 1:
        dx = (xf - grid[0]).reshape(xf.shape + (1,) * (values.ndim - 1))
        out = values[0] + dx * dvalues[0]
        if with_deriv:
            dout = np.broadcast_to(dvalues[0], out.shape).copy()
    else:
        idx = np.clip(np.searchsorted(grid, xf) - 1, 0, len(grid) - 2)
        x0 = grid[idx]
        h = grid[idx + 1] - grid[idx]
        t = (xf - x0) / h
        shape = t.shape + (1,) * (values.ndim - 1)
        t = t.reshape(shape)
        h = h.reshape(shape)
        v0, v1 = values[idx], values[idx + 1]
        s0, s1 = dvalues[idx], dvalues[idx + 1]
        t2, t3 = t * t, t * t * t
        out = ((2 * t3 - 3 * t2 + 1) * v0 + (t3 - 2 * t2 + t) * (s0 * h)
               + (-2 * t3 + 3 * t2) * v1 + (t3 - t2) * (s1 * h))
        if with_deriv:
            dout = ((6 * t2 - 6 * t) / h * v0 + (3 * t2 - 4 * t + 1) * s0
                    + (-6 * t2 + 6 * t) / h * v1 + (3 * t2 - 2 * t) * s1)
    if scalar:
        out = out[0]
        if with_deriv:
            dout = dout[0]
    return (out, dout) if with_deriv else out


def linear_weights(grid: np.ndarray, x: float) -> list[tuple[int, float]]:
    """Linear interpolation stencil for a 1-d grid; constant beyond the ends.

    Returns [(index, weight), ...] with weights summing to 1.  A single-point
    grid returns its sole sample (constant-in-frequency kernels).
    """
    if len(grid) == 1:
        return [(0, 1.0)]
    if x <= grid[0]:
        return [(0, 1.0)]
    if x >= grid[-1]:
        return [(len(grid) - 1, 1.0)]
    j = int(np.searchsorted(grid, x)) - 1
    t = (x - grid[j]) / (grid[j + 1] - grid[j])
    return [(j, 1.0 - t), (j + 1, t)]


def cheb_nodes(n: int, lo: float, hi: float) -> np.ndarray:
    """Chebyshev-Lobatto nodes mapped to [lo, hi], ascending."""
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    k = np.arange(n)
    x = -np.cos(np.pi * k / (n - 1))
    return lo + (hi - lo) * (x + 1.0) / 2.0


def bary_weights(nodes: np.ndarray) -> np.ndarray:
    n = len(nodes)
    w = np.ones(n)
    for j in range(n):
        diff = nodes[j] - np.delete(nodes, j)
        w[j] = 1.0 / np.prod(diff)
    return w / np.max(np.abs(w))


def bary_eval(nodes: np.ndarray, weights: np.ndarray, fvals: np.ndarray, z):
    """Barycentric interpolation; fvals has node axis 0 and arbitrary trailing axes."""
    z = complex(z)
    diff = z - nodes
    hit = np.nonzero(np.abs(diff) < 1e-14)[0]
    if hit.size:
        return fvals[hit[0]]
    c = weights / diff
    denom = np.sum(c)
    c = c.reshape((len(nodes),) + (1,) * (fvals.ndim - 1))
    return np.sum(c * fvals, axis=0) / denom


def cheb_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Polynomial differentiation matrix on arbitrary distinct nodes."""
    n = len(nodes)
    w = bary_weights(nodes)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = (w[j] / w[i]) / (nodes[i] - nodes[j])
        D[i, i] = -np.sum(D[i])
    return D


def cheb_coeff_decay(nodes: np.ndarray, fvals: np.ndarray) -> np.ndarray:
    """Magnitudes of the interpolant in the ascending-power monomial-free
    Chebyshev basis; the tail magnitude is the a-posteriori interpolation
    error estimate recorded in traces."""
    n = len(nodes)
    lo, hi = nodes[0], nodes[-1]
    t = (2 * nodes - (lo + hi)) / (hi - lo)
    V = np.polynomial.chebyshev.chebvander(t, n - 1)
    coef = np.linalg.solve(V, fvals)
    return np.abs(coef)
