"""Discrete Cauchy-Green transform.

    T g(z) = -1/pi * sum_{zeta in D} g(zeta) / (zeta - z) * h^2

evaluated at every cell centre by an aperiodic FFT convolution on the
zero-padded 2N x 2N grid. The kernel is sampled at cell-centre offsets and
set to zero at the self offset: the mean of 1/zeta over a centred square
vanishes, so the zero is the exact cell average there.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.fft as sfft

from .grid import Grid, GridFunction, Mask, dbar_fd, sup_norm


def fft_workers() -> int:
    """Thread count for FFTs, capped by ``PASCALI_LAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("PASCALI_LAB_THREADS", "1")))
    except ValueError:
        return 1


def kernel_table(grid: Grid) -> np.ndarray:
    """Sampled kernel 1/(pi d) on the wrapped 2N x 2N offset lattice."""
    N = grid.N
    off = np.fft.ifftshift(np.arange(-N, N)) * grid.h
    d = off[:, None] + 1j * off[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 1.0 / (np.pi * d)
    k[0, 0] = 0.0
    return k


class CauchyGreenOperator:
    """T_D on a fixed grid and domain mask.

    Densities are masked to ``domain`` before the transform; the result is
    evaluated on the whole grid.
    """

    def __init__(self, grid: Grid, domain: Mask | None = None):
        self.grid = grid
        self.domain = domain if domain is not None else Mask.full(grid)
        if self.domain.grid != grid:
            raise ValueError("domain mask lives on a different grid")
        k = kernel_table(grid)
        self.kernel_fft = sfft.fft2(k, workers=fft_workers())
        # adjoint of a convolution with k(d) is a convolution with -conj(k(d))
        # because the kernel is odd
        self.adjoint_kernel_fft = sfft.fft2(-np.conj(k), workers=fft_workers())
        self.kernel_fft.flags.writeable = False
        self.adjoint_kernel_fft.flags.writeable = False

    def _convolve(self, g: np.ndarray, kf: np.ndarray) -> np.ndarray:
        """Aperiodic convolution of (N, N, n) values with a padded kernel."""
        N = self.grid.N
        w = fft_workers()
        a = np.moveaxis(g, -1, 0)
        # the padded input is zero outside the first N x N block, so transform
        # its N nonzero columns first and crop as early as possible on the way back
        f = sfft.fft(a, n=2 * N, axis=-2, workers=w)
        f = sfft.fft(f, n=2 * N, axis=-1, workers=w)
        f *= kf
        f = sfft.ifft(f, axis=-2, workers=w)[..., :N, :]
        f = sfft.ifft(f, axis=-1, workers=w)[..., :N]
        return np.moveaxis(f, 0, -1) * self.grid.h**2

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return self._convolve(values * self.domain.inside[:, :, None], self.kernel_fft)

    def apply_adjoint_values(self, values: np.ndarray) -> np.ndarray:
        return self._convolve(values, self.adjoint_kernel_fft) * self.domain.inside[:, :, None]

    def __call__(self, g: GridFunction) -> GridFunction:
        return cg_apply(self, g)


def _check(op: CauchyGreenOperator, g: GridFunction):
    if g.grid != op.grid:
        raise ValueError(f"grid mismatch: operator on {op.grid}, density on {g.grid}")


def cg_apply(op: CauchyGreenOperator, g: GridFunction) -> GridFunction:
    _check(op, g)
    return GridFunction(op.grid, op.apply_values(g.values))


def cg_apply_adjoint(op: CauchyGreenOperator, v: GridFunction) -> GridFunction:
    """Adjoint of ``cg_apply`` for the inner product Re sum conj(a) b."""
    _check(op, v)
    return GridFunction(op.grid, op.apply_adjoint_values(v.values))


def cg_residual(op: CauchyGreenOperator, g: GridFunction) -> float:
    """sup |dbar(T g) - g| over the domain eroded by two cells."""
    _check(op, g)
    u = cg_apply(op, g)
    core = op.domain.erode(2)
    return sup_norm(dbar_fd(u) - g.masked(op.domain), core)
