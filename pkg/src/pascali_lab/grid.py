"""Uniform cell-centred sampling of square boxes in the complex plane.

Values of a grid function live at cell centres, so node ``(i, j)`` sits at
``center + ((i + 1/2) h - half_width) + 1j ((j + 1/2) h - half_width)``.
The first array axis runs along ``x`` and the second along ``y``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import ndimage

_CROSS = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Grid:
    center: complex
    half_width: float
    N: int

    def __post_init__(self):
        object.__setattr__(self, "center", complex(self.center))
        object.__setattr__(self, "half_width", float(self.half_width))
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.N < 16 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 16, got {self.N}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.N

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.N)

    @cached_property
    def axis(self) -> np.ndarray:
        """Offsets of the cell centres from ``center`` along one axis."""
        return (np.arange(self.N) + 0.5) * self.h - self.half_width

    @cached_property
    def z(self) -> np.ndarray:
        t = self.axis
        z = self.center + t[:, None] + 1j * t[None, :]
        z.flags.writeable = False
        return z

    def index_coords(self, points) -> np.ndarray:
        """Fractional array indices ``(2, ...)`` of arbitrary points."""
        p = np.asarray(points, dtype=complex) - self.center
        i = (p.real + self.half_width) / self.h - 0.5
        j = (p.imag + self.half_width) / self.h - 0.5
        return np.stack([i, j])

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=complex) - self.center
        lim = self.half_width - margin
        return (np.abs(p.real) <= lim) & (np.abs(p.imag) <= lim)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A C^n-valued function sampled on a grid; ``values`` has shape (N, N, n)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.shape[:2] != self.grid.shape or v.ndim != 3 or v.shape[2] < 1:
            raise ValueError(
                f"values shape {v.shape} does not match grid {self.grid.shape} x n"
            )
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(
                f"non-finite value at node {tuple(bad[:2])}, "
                f"z = {self.grid.z[bad[0], bad[1]]}"
            )
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @classmethod
    def zeros(cls, grid: Grid, dim: int = 1) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape + (dim,), dtype=complex))

    def like(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def conj(self) -> "GridFunction":
        return self.like(self.values.conj())

    def component(self, k: int) -> np.ndarray:
        return self.values[:, :, k]

    def _other(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return self.like(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.like(self.values - self._other(other))

    def __rsub__(self, other):
        return self.like(self._other(other) - self.values)

    def __neg__(self):
        return self.like(-self.values)

    def __mul__(self, other):
        if isinstance(other, np.ndarray) and other.shape == self.grid.shape:
            other = other[:, :, None]
        return self.like(self.values * self._other(other))

    __rmul__ = __mul__

    def masked(self, mask: "Mask") -> "GridFunction":
        return self.like(self.values * mask.inside[:, :, None])


@dataclass(frozen=True, eq=False)
class Mask:
    grid: Grid
    inside: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.inside, dtype=bool)
        if m.shape != self.grid.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "inside", m)

    @classmethod
    def full(cls, grid: Grid) -> "Mask":
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def disk(cls, grid: Grid, center: complex, radius: float, closed: bool = True) -> "Mask":
        d = np.abs(grid.z - center)
        return cls(grid, d <= radius if closed else d < radius)

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    def is_empty(self) -> bool:
        return not self.inside.any()

    def erode(self, cells: int = 1) -> "Mask":
        if cells <= 0:
            return self
        return Mask(
            self.grid,
            ndimage.binary_erosion(self.inside, _CROSS, iterations=cells, border_value=0),
        )

    def dilate(self, cells: int = 1) -> "Mask":
        if cells <= 0:
            return self
        return Mask(self.grid, ndimage.binary_dilation(self.inside, _CROSS, iterations=cells))

    def touches_border(self) -> bool:
        m = self.inside
        return bool(m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any())

    def issubset(self, other: "Mask") -> bool:
        return not (self.inside & ~other.inside).any()

    def __and__(self, other: "Mask") -> "Mask":
        return Mask(self.grid, self.inside & other.inside)

    def __or__(self, other: "Mask") -> "Mask":
        return Mask(self.grid, self.inside | other.inside)

    def __sub__(self, other: "Mask") -> "Mask":
        return Mask(self.grid, self.inside & ~other.inside)

    def __invert__(self) -> "Mask":
        return Mask(self.grid, ~self.inside)


def sample(fn: Callable, grid: Grid) -> GridFunction:
    """Evaluate ``fn`` at every cell centre.

    ``fn`` is first called on the whole coordinate array; a result of shape
    ``(N, N)``, ``(N, N, n)`` or a constant ``(n,)`` is accepted. Anything
    else falls back to one call per node.
    """
    z = grid.z
    try:
        out = np.asarray(fn(z), dtype=complex)
    except Exception:
        out = None
    if out is not None:
        if out.shape == grid.shape:
            out = out[:, :, None]
        elif out.ndim <= 1:
            out = np.broadcast_to(out.reshape(1, 1, -1), grid.shape + (max(out.size, 1),))
        elif out.shape[:2] != grid.shape or out.ndim != 3:
            out = None
    if out is None:
        first = np.atleast_1d(np.asarray(fn(complex(z[0, 0])), dtype=complex))
        out = np.empty(grid.shape + first.shape, dtype=complex)
        for i in range(grid.N):
            for j in range(grid.N):
                out[i, j] = np.atleast_1d(np.asarray(fn(complex(z[i, j])), dtype=complex))
    bad = ~np.isfinite(out)
    if bad.any():
        i, j = np.argwhere(bad)[0][:2]
        raise ValueError(f"fn is not finite at node ({i}, {j}), z = {z[i, j]}")
    return GridFunction(grid, np.array(out))


def partials(w: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """Centred differences in x and y, one-sided at the box edges."""
    h = w.grid.h
    return np.gradient(w.values, h, axis=0), np.gradient(w.values, h, axis=1)


def dbar_fd(w: GridFunction) -> GridFunction:
    """Discrete Cauchy-Riemann operator 1/2 (d/dx + i d/dy)."""
    dx, dy = partials(w)
    return w.like(0.5 * (dx + 1j * dy))


def dz_fd(w: GridFunction) -> GridFunction:
    dx, dy = partials(w)
    return w.like(0.5 * (dx - 1j * dy))


def _pointwise_norm(values: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(values) ** 2, axis=-1))


def sup_norm(w: GridFunction, m: Mask) -> float:
    if m.grid != w.grid:
        raise ValueError("grid mismatch between function and mask")
    if m.is_empty():
        raise ValueError("sup_norm over an empty mask")
    return float(_pointwise_norm(w.values[m.inside]).max())


def c1_norm_proxy(w: GridFunction, m: Mask) -> float:
    """sup|w| + sup|w_x| + sup|w_y| over ``m`` eroded by one cell."""
    core = m.erode(1)
    if core.is_empty():
        raise ValueError("mask erodes to empty; no room for derivative stencils")
    dx, dy = partials(w)
    sel = core.inside
    return float(
        _pointwise_norm(w.values[sel]).max()
        + _pointwise_norm(dx[sel]).max()
        + _pointwise_norm(dy[sel]).max()
    )


def interpolate(w: GridFunction, points, order: int = 3) -> np.ndarray:
    """Spline-interpolate grid values at arbitrary points; returns shape (P, n)."""
    pts = np.atleast_1d(np.asarray(points, dtype=complex))
    coords = w.grid.index_coords(pts)
    out = np.empty((pts.size, w.dim), dtype=complex)
    for k in range(w.dim):
        comp = w.values[:, :, k]
        re = ndimage.map_coordinates(comp.real, coords, order=order, mode="nearest")
        im = ndimage.map_coordinates(comp.imag, coords, order=order, mode="nearest")
        out[:, k] = re + 1j * im
    return out
