"""Integral-equation machinery: P_D, its inverse, right inverses of dbar_B,
solution correction, formal powers and Runge-type least squares.

Every operator here is only real-linear (because of the conjugate term), so
vectors are complex arrays paired with the real inner product
``Re sum conj(a) b``; this is the realification used by the Krylov solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cauchy_green import CauchyGreenOperator
from .geometry import bounded_complement_components, extend_smooth
from .grid import Grid, GridFunction, Mask, c1_norm_proxy, interpolate, sup_norm
from .operator import CoefficientField, dbar_B


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class RankWarning(UserWarning):
    pass


def _rdot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


def _supn(a: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(a) ** 2, axis=-1)).max()) if a.size else 0.0


@dataclass
class KrylovInfo:
    iterations: int
    residual: float  # relative sup-norm residual of A x - b
    converged: bool


def cgls(
    A: Callable[[np.ndarray], np.ndarray],
    At: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    lam: float = 0.0,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> tuple[np.ndarray, KrylovInfo]:
    """Minimize |A x - b|^2 + lam |x|^2 by conjugate gradients on the normal equations.

    Stops once sup|A x - b| <= tol * sup|b| (pointwise Euclidean norms).
    """
    bnorm = _supn(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, KrylovInfo(0, 0.0, True)
    r = b.copy()
    s = At(r)
    p = s.copy()
    gamma = _rdot(s, s)
    rel = 1.0
    for it in range(1, max_iter + 1):
        q = A(p)
        delta = _rdot(q, q) + lam * _rdot(p, p)
        if delta <= 0.0:
            break
        alpha = gamma / delta
        x += alpha * p
        r -= alpha * q
        rel = _supn(r) / bnorm
        if rel <= tol:
            return x, KrylovInfo(it, rel, True)
        s = At(r) - lam * x
        gamma_new = _rdot(s, s)
        if gamma_new == 0.0:
            break
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, KrylovInfo(it, rel, rel <= tol)


@dataclass(eq=False)
class PascaliSolver:
    coeff: CoefficientField
    cg: CauchyGreenOperator
    tol: float = 1e-8
    max_iter: int = 500
    lam: float = 1e-10
    last_info: KrylovInfo | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.lam < 0:
            raise ValueError("regularization must be >= 0")

    @classmethod
    def on_disk(cls, coeff: CoefficientField, grid: Grid, **kw) -> "PascaliSolver":
        """Solver whose domain D is the disc inscribed in the bounding box."""
        D = Mask.disk(grid, grid.center, grid.half_width, closed=False)
        return cls(coeff, CauchyGreenOperator(grid, D), **kw)

    @property
    def grid(self) -> Grid:
        return self.cg.grid

    @property
    def domain(self) -> Mask:
        return self.cg.domain

    def _P(self, w: np.ndarray) -> np.ndarray:
        return w + self.cg.apply_values(self.coeff.apply(self.grid, w))

    def _Pt(self, v: np.ndarray) -> np.ndarray:
        return v + self.coeff.apply_adjoint(self.grid, self.cg.apply_adjoint_values(v))

    def _check(self, w: GridFunction):
        if w.grid != self.grid:
            raise ValueError("grid mismatch between solver and function")
        if w.dim != self.coeff.n:
            raise ValueError(f"dimension mismatch: n={w.dim} vs coefficients n={self.coeff.n}")

    def apply_P(self, w: GridFunction) -> GridFunction:
        self._check(w)
        return w.like(self._P(w.values))

    def solve_P(self, phi: GridFunction) -> GridFunction:
        self._check(phi)
        if self.coeff.is_zero(self.grid):
            self.last_info = KrylovInfo(0, 0.0, True)
            return phi.like(phi.values.copy())
        x, info = cgls(self._P, self._Pt, phi.values, self.lam, self.tol, self.max_iter)
        self.last_info = info
        if not info.converged:
            raise ConvergenceError(
                "P_D solve did not converge; refine the grid or raise the regularization",
                info.residual,
                info.iterations,
            )
        return phi.like(x)


def apply_P(s: PascaliSolver, w: GridFunction) -> GridFunction:
    """P_D w = w + T_D(B1 w + B2 conj(w))."""
    return s.apply_P(w)


def solve_P(s: PascaliSolver, phi: GridFunction) -> GridFunction:
    return s.solve_P(phi)


def right_inverse_dbar(s: PascaliSolver, g: GridFunction) -> GridFunction:
    """u = P_D^{-1} T_D g, so that dbar_B u = g on D."""
    s._check(g)
    return s.solve_P(g.like(s.cg.apply_values(g.values)))


@dataclass(eq=False)
class CorrectionResult:
    w: GridFunction
    achieved_residual: float  # sup |dbar_B w| (finite differences) on eroded omega
    correction_size: float  # C1 proxy of u = g - w on omega
    omega: Mask
    residual_field: GridFunction = field(repr=False)
    model_residual: float | None = None
    iterations: int = 0


def _core(m: Mask) -> Mask:
    core = m.erode(1)
    return m if core.is_empty() else core


def correct_to_solution(
    s: PascaliSolver,
    g: GridFunction,
    omega: Mask,
    dbar_g: GridFunction | None = None,
    collar: float = 10.0,
) -> CorrectionResult:
    """Replace ``g`` by a nearby solution on ``omega``.

    The residual dbar_B(g) on ``omega`` is extended to the whole grid,
    right-inverted on D and subtracted; ``collar`` is the width in cells of
    that extension. ``dbar_g`` may supply that residual
    when it is known more accurately than finite differences give it (for
    instance for holomorphic seeds, where it is exactly B1 g + B2 conj(g)).
    """
    s._check(g)
    if omega.is_empty():
        raise ValueError("correction domain is empty")
    if omega.touches_border() or not omega.issubset(s.domain):
        raise ValueError("correction domain must lie strictly inside the solver domain D")
    r = dbar_g if dbar_g is not None else dbar_B(s.coeff, g)
    ext = extend_smooth(r, omega, collar).masked(s.domain)
    u = right_inverse_dbar(s, ext)
    iterations = s.last_info.iterations if s.last_info else 0
    w = g - u
    core = _core(omega)
    achieved = sup_norm(dbar_B(s.coeff, w), core)
    if dbar_g is not None:
        field_ = dbar_g - dbar_B(s.coeff, u)
        model = sup_norm(field_, core)
    else:
        field_ = dbar_B(s.coeff, w)
        model = None
    return CorrectionResult(
        w=w,
        achieved_residual=achieved,
        correction_size=c1_norm_proxy(u, omega),
        omega=omega,
        residual_field=field_,
        model_residual=model,
        iterations=iterations,
    )


# -- formal powers ---------------------------------------------------------


@dataclass(eq=False)
class FormalPower:
    degree: int
    unit: int
    phase: complex
    w: GridFunction = field(repr=False)
    residual: float  # finite-difference sup |dbar_B w| on the eroded generation domain
    solve_residual: float  # relative residual of the P_D solve that produced w
    scale: float  # sup |w| on the generation domain before normalization


@dataclass(eq=False)
class FormalPowerBasis:
    degree_max: int
    center: complex
    radius: float
    domain: Mask
    members: list[FormalPower]
    rank_deficient: bool = False

    @property
    def grid(self) -> Grid:
        return self.domain.grid

    def __len__(self) -> int:
        return len(self.members)

    def truncated(self, degree: int) -> "FormalPowerBasis":
        """The nested sub-basis of members up to ``degree``."""
        return FormalPowerBasis(
            min(degree, self.degree_max),
            self.center,
            self.radius,
            self.domain,
            [m for m in self.members if m.degree <= degree],
        )

    def stack(self) -> np.ndarray:
        """Member values as an (N, N, n, m) array."""
        return np.stack([m.w.values for m in self.members], axis=-1)

    def at_points(self, points) -> np.ndarray:
        """Member values interpolated at points, shape (P, n, m)."""
        return np.stack([interpolate(m.w, points) for m in self.members], axis=-1)

    def combine(self, coefficients) -> GridFunction:
        c = np.asarray(coefficients, dtype=float)
        vals = np.tensordot(self.stack(), c, axes=([-1], [0]))
        return GridFunction(self.grid, vals)


def build_formal_powers(
    s: PascaliSolver,
    U: Mask,
    degree_max: int,
    center: complex | None = None,
) -> FormalPowerBasis:
    """Global solutions on U seeded by phase * ((z - c)/R)^k e_j.

    Each seed is holomorphic, so its Pascali residual is exactly
    B1 seed + B2 conj(seed); the member is the seed corrected on U.
    """
    if degree_max < 0:
        raise ValueError("degree_max must be >= 0")
    grid = s.grid
    c = grid.center if center is None else complex(center)
    R = float(np.abs(grid.z[U.inside] - c).max()) or 1.0
    zeta = (grid.z - c) / R
    n = s.coeff.n
    members = []
    for k in range(degree_max + 1):
        mono = zeta**k
        for j in range(n):
            for phase in (1.0, 1j):
                vals = np.zeros(grid.shape + (n,), dtype=complex)
                vals[:, :, j] = phase * mono
                seed = GridFunction(grid, vals)
                exact = seed.like(s.coeff.apply(grid, seed.values))
                res = correct_to_solution(s, seed, U, dbar_g=exact)
                scale = sup_norm(res.w, U)
                w = res.w * (1.0 / scale)
                members.append(
                    FormalPower(
                        degree=k,
                        unit=j,
                        phase=phase,
                        w=w,
                        residual=sup_norm(dbar_B(s.coeff, w), _core(U)),
                        solve_residual=s.last_info.residual if s.last_info else 0.0,
                        scale=scale,
                    )
                )
    basis = FormalPowerBasis(degree_max, c, R, U, members)
    A = _design(basis.stack()[U.inside][::7])
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        basis.rank_deficient = True
        warnings.warn(
            f"formal-power basis is nearly rank deficient (condition {sv[0] / sv[-1]:.2e})",
            RankWarning,
            stacklevel=2,
        )
    return basis


def _design(samples: np.ndarray) -> np.ndarray:
    """Realify (P, n, m) complex samples into a (2 P n, m) real matrix."""
    P, n, m = samples.shape
    flat = samples.reshape(P * n, m)
    return np.concatenate([flat.real, flat.imag], axis=0)


@dataclass(eq=False)
class RungeFit:
    w: GridFunction
    err: float
    coefficients: np.ndarray
    basis: FormalPowerBasis = field(repr=False)
    points: np.ndarray | None = None
    w_at_points: np.ndarray | None = None
    condition: float = 1.0

    def at(self, points) -> np.ndarray:
        """The fitted solution at arbitrary points, shape (P, n)."""
        return np.tensordot(self.basis.at_points(points), self.coefficients, axes=([-1], [0]))


def _weighted_lstsq(X: np.ndarray, T: np.ndarray, wts: np.ndarray, lam: float, warn: bool):
    """Least squares for sum_p wts_p |X_p c - T_p|^2 over real c; returns (c, condition)."""
    r = np.sqrt(wts)
    A = _design(X * r[:, None, None])
    Tw = T * r[:, None]
    b = np.concatenate([Tw.real.ravel(), Tw.imag.ravel()])
    Uu, sv, Vt = np.linalg.svd(A, full_matrices=False)
    # fewer equations than unknowns leaves a null space the thin SVD does not show
    short = A.shape[0] < A.shape[1]
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 and not short else np.inf
    if short or sv[-1] <= 1e-12 * sv[0]:
        if warn:
            warnings.warn(
                f"least-squares system is rank deficient (condition {cond:.2e}); regularizing",
                RankWarning,
                stacklevel=3,
            )
        mu = lam * sv[0] ** 2
        return Vt.T @ ((sv / (sv**2 + mu)) * (Uu.T @ b)), cond
    return Vt.T @ ((Uu.T @ b) / sv), cond


def runge_fit(
    basis: FormalPowerBasis,
    f: GridFunction | None,
    K: Mask | None,
    points=None,
    point_values=None,
    lam: float = 1e-12,
    minimax: int = 0,
) -> RungeFit:
    """Real least squares over basis coefficients on the samples of K (and points).

    With ``minimax > 0`` that many Lawson reweighting passes push the
    least-squares fit towards the best uniform fit; the coefficients with
    the smallest sup error seen are kept.
    """
    blocks, targets = [], []
    if K is not None and not K.is_empty():
        if f is None:
            raise ValueError("grid target f is required when K is given")
        if not K.issubset(basis.domain):
            raise ValueError("K is not contained in the basis domain")
        if bounded_complement_components(K.inside, basis.domain.inside):
            raise ValueError("K is not Runge in the basis domain")
        blocks.append(basis.stack()[K.inside])
        targets.append(f.values[K.inside])
    pts = None
    if points is not None:
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        pv = np.asarray(point_values, dtype=complex).reshape(pts.size, -1)
        blocks.append(basis.at_points(pts))
        targets.append(pv)
    if not blocks:
        raise ValueError("nothing to fit: empty K and no points")
    X = np.concatenate(blocks, axis=0)
    T = np.concatenate(targets, axis=0)
    wts = np.full(T.shape[0], 1.0 / T.shape[0])
    coef, cond = _weighted_lstsq(X, T, wts, lam, warn=True)

    def gaps(c):
        return np.sqrt(np.sum(np.abs(np.tensordot(X, c, axes=([-1], [0])) - T) ** 2, axis=1))

    gap = gaps(coef)
    best = (gap.max(), coef)
    for _ in range(minimax):
        wts = wts * gap
        total = wts.sum()
        if total == 0:
            break
        wts = wts / total
        coef, _ = _weighted_lstsq(X, T, wts, lam, warn=False)
        gap = gaps(coef)
        if gap.max() < best[0]:
            best = (gap.max(), coef)
    coef = best[1]
    w = basis.combine(coef)
    errs = []
    if K is not None and not K.is_empty():
        errs.append(sup_norm(f - w, K))
    wp = None
    if pts is not None:
        wp = np.tensordot(blocks[-1], coef, axes=([-1], [0]))
        errs.append(_supn(wp - targets[-1]))
    return RungeFit(w, max(errs), coef, basis, pts, wp, cond)


def runge_approximate(
    basis: FormalPowerBasis, f: GridFunction, K: Mask
) -> tuple[GridFunction, float]:
    fit = runge_fit(basis, f, K)
    return fit.w, fit.err


# -- similarity principle (n = 1) ------------------------------------------


def similarity_diagnostic(
    coeff: CoefficientField, w: GridFunction, mask: Mask, floor: float = 0.1, margin: int = 4
) -> float:
    """sup |dbar(w e^s)| with s = T(B1 + B2 conj(w)/w) on the part of ``mask`` where |w| > floor.

    For a scalar solution the factor e^s absorbs the lower-order terms, so
    w e^s is holomorphic; a small value certifies the factorisation. The
    check skips ``margin`` cells next to the edge of the region, where the
    transform of the cut-off density has a logarithmic derivative.
    """
    if coeff.n != 1 or w.dim != 1:
        raise ValueError("the similarity diagnostic is scalar (n = 1) only")
    grid = w.grid
    vals = w.values[:, :, 0]
    region = Mask(grid, mask.inside & (np.abs(vals) > floor))
    if region.erode(margin).is_empty():
        raise ValueError(f"no room where |w| > {floor}")
    b1, b2 = coeff.sampled(grid)
    safe = np.where(region.inside, vals, 1.0)
    a = b1[:, :, 0, 0] + b2[:, :, 0, 0] * safe.conj() / safe
    op = CauchyGreenOperator(grid, region)
    s_ = op.apply_values(a[:, :, None])[:, :, 0]
    from .grid import dbar_fd

    hol = GridFunction(grid, np.where(region.inside, vals * np.exp(s_), 0.0))
    return sup_norm(dbar_fd(hol), region.erode(margin))
