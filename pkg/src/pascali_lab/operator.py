"""The Pascali operator dbar_B w = w_zbar + B1 w + B2 conj(w) and its adjoint."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr
from .grid import Grid, GridFunction, Mask, c1_norm_proxy, dbar_fd, sup_norm

COLLAR = 4  # cells a test function must vanish on next to the box edge


def _as_matrix_expr(n: int, value) -> _expr.Expr | np.ndarray:
    """Normalize a coefficient given as text, Expr, number or n x n array."""
    if isinstance(value, str):
        value = _expr.parse(value)
    if isinstance(value, (_expr.Array,) + tuple(_expr.Node.__args__)):
        shape = _expr.shape_of(value)
        if shape not in ((), (n, n)):
            raise ValueError(f"coefficient has shape {shape}, expected scalar or {n}x{n}")
        return value
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        return arr * np.eye(n)
    if arr.shape != (n, n):
        raise ValueError(f"coefficient has shape {arr.shape}, expected {n}x{n}")
    return arr


def _eval_matrix(n: int, value, z: np.ndarray) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return np.broadcast_to(value, z.shape + (n, n)).copy()
    val = _expr.evaluate(value, z)
    val = np.asarray(val, dtype=complex)
    if _expr.shape_of(value) == ():
        return val.reshape(z.shape + (1, 1)) * np.eye(n)
    return val


@dataclass(eq=False)
class CoefficientField:
    """The matrix pair (B1, B2); expressions are the source of truth.

    Scalar expressions stand for multiples of the identity.
    """

    n: int
    B1: object = 0.0
    B2: object = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension n must be >= 1")
        self.B1 = _as_matrix_expr(self.n, self.B1)
        self.B2 = _as_matrix_expr(self.n, self.B2)

    @classmethod
    def zero(cls, n: int = 1) -> "CoefficientField":
        return cls(n)

    @property
    def text(self) -> tuple[str, str]:
        def fmt(b):
            if isinstance(b, np.ndarray):
                return repr(b.tolist())
            return _expr.to_text(b)

        return fmt(self.B1), fmt(self.B2)

    def at_points(self, points) -> tuple[np.ndarray, np.ndarray]:
        """B1, B2 at arbitrary points, each of shape points.shape + (n, n)."""
        z = np.asarray(points, dtype=complex)
        return _eval_matrix(self.n, self.B1, z), _eval_matrix(self.n, self.B2, z)

    def sampled(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """Cached (N, N, n, n) samples of B1 and B2 on ``grid``."""
        hit = self._cache.get(grid)
        if hit is None:
            b1, b2 = self.at_points(grid.z)
            for name, b in (("B1", b1), ("B2", b2)):
                if not np.all(np.isfinite(b)):
                    raise ValueError(f"{name} is not finite on the bounding box")
                b.flags.writeable = False
            hit = self._cache[grid] = (b1, b2)
        return hit

    def recheck(self, grid: Grid) -> bool:
        b1, b2 = self.sampled(grid)
        f1, f2 = self.at_points(grid.z)
        return bool(np.array_equal(b1, f1) and np.array_equal(b2, f2))

    def is_zero(self, grid: Grid) -> bool:
        b1, b2 = self.sampled(grid)
        return not (b1.any() or b2.any())

    def apply(self, grid: Grid, w: np.ndarray) -> np.ndarray:
        """B1 w + B2 conj(w) for values of shape (N, N, n)."""
        b1, b2 = self.sampled(grid)
        return np.einsum("...ij,...j->...i", b1, w) + np.einsum("...ij,...j->...i", b2, w.conj())

    def apply_adjoint(self, grid: Grid, v: np.ndarray) -> np.ndarray:
        """Adjoint of ``apply`` for the real inner product: B1^H v + B2^T conj(v)."""
        b1, b2 = self.sampled(grid)
        return np.einsum("...ji,...j->...i", b1.conj(), v) + np.einsum(
            "...ji,...j->...i", b2, v.conj()
        )


def _check_dim(coeff: CoefficientField, w: GridFunction):
    if w.dim != coeff.n:
        raise ValueError(f"dimension mismatch: function has n={w.dim}, coefficients n={coeff.n}")


def dbar_B(coeff: CoefficientField, w: GridFunction) -> GridFunction:
    _check_dim(coeff, w)
    return w.like(dbar_fd(w).values + coeff.apply(w.grid, w.values))


def dbar_B_adjoint(coeff: CoefficientField, phi: GridFunction) -> GridFunction:
    """dbar(phi) - B1^T phi - conj(B2)^T conj(phi)."""
    _check_dim(coeff, phi)
    b1, b2 = coeff.sampled(phi.grid)
    v = phi.values
    lower = np.einsum("...ji,...j->...i", b1, v) + np.einsum("...ji,...j->...i", b2.conj(), v.conj())
    return phi.like(dbar_fd(phi).values - lower)


def bilinear_pairing(coeff: CoefficientField, w: GridFunction, phi: GridFunction) -> complex:
    """h^2 sum (phi^T dbar_B(w) + w^T dbar_B^*(phi)) over the grid.

    ``phi`` must vanish on a four-cell collar next to the box edge so that
    the discrete integration by parts has no boundary terms.
    """
    if w.grid != phi.grid:
        raise ValueError("grid mismatch")
    inner = Mask.full(phi.grid).erode(COLLAR)
    if np.any(phi.values[~inner.inside] != 0):
        raise ValueError(f"test function is not zero on the {COLLAR}-cell boundary collar")
    a = np.sum(phi.values * dbar_B(coeff, w).values)
    b = np.sum(w.values * dbar_B_adjoint(coeff, phi).values)
    return complex((a + b) * phi.grid.h**2)


def conjugate_defect(coeff: CoefficientField, w: GridFunction, phi: GridFunction) -> complex:
    """h^2 sum (phi^T B2 conj(w) - conj(phi)^T conj(B2) w), the imaginary remainder."""
    _, b2 = coeff.sampled(w.grid)
    t = np.einsum("...i,...ij,...j->...", phi.values, b2, w.values.conj())
    return complex(np.sum(t - t.conj()) * w.grid.h**2)


@dataclass(frozen=True, eq=False)
class PascaliResidual:
    value: GridFunction
    mask: Mask
    sup: float
    c1: float

    @classmethod
    def of(cls, coeff: CoefficientField, w: GridFunction, mask: Mask) -> "PascaliResidual":
        r = dbar_B(coeff, w)
        return cls(r, mask, sup_norm(r, mask), c1_norm_proxy(r, mask))

    def consistent(self) -> bool:
        return self.sup == sup_norm(self.value, self.mask) and self.c1 == c1_norm_proxy(
            self.value, self.mask
        )
