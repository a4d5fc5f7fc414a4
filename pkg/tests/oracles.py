"""Slow reference implementations used to check the fast code paths."""

from collections import deque

import numpy as np


def direct_cauchy_green(grid, density, mask=None):
    """O(N^4) sum of h^2 g_k / (pi (z_m - z_k)) over all nodes k != m."""
    z = grid.z.ravel()
    g = np.asarray(density, dtype=complex).reshape(z.size)
    if mask is not None:
        g = g * np.asarray(mask).ravel()
    out = np.empty(z.size, dtype=complex)
    for m in range(z.size):
        d = z[m] - z
        d[m] = np.inf
        out[m] = np.sum(g / d) / np.pi
    return (out * grid.h**2).reshape(grid.shape)


def bfs_bounded_components(S, ambient):
    """Components of ambient minus S (4-connected) that do not reach the ambient edge."""
    S = np.asarray(S, bool)
    free = np.asarray(ambient, bool) & ~S
    seen = np.zeros_like(free)
    n0, n1 = free.shape
    sizes = []
    for i0 in range(n0):
        for j0 in range(n1):
            if not free[i0, j0] or seen[i0, j0]:
                continue
            q = deque([(i0, j0)])
            seen[i0, j0] = True
            size, leaks = 0, False
            while q:
                i, j = q.popleft()
                size += 1
                for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                    if not (0 <= a < n0 and 0 <= b < n1) or not ambient[a, b]:
                        leaks = True
                        continue
                    if free[a, b] and not seen[a, b]:
                        seen[a, b] = True
                        q.append((a, b))
            if not leaks:
                sizes.append(size)
    return sorted(sizes)
