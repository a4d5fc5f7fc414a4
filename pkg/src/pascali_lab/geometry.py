"""Admissible sets S = K u E on the grid: compact domains, Jordan arcs,
validation, smooth cut-offs, extensions and the tube extension of data
given along an arc.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .grid import Grid, GridFunction, Mask

_CROSS = ndimage.generate_binary_structure(2, 1)
SAMPLES_PER_CELL = 8
_UNIT_CIRCLE = np.exp(2j * np.pi * np.arange(64) / 64)


def smooth_step(t):
    """C-infinity step from 0 (t <= 0) to 1 (t >= 1) built from exp(-1/t)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


# -- curves ------------------------------------------------------------------


class SplineCurve:
    """Cubic spline through control points, parametrized by chord length.

    Closed curves use periodic end conditions; the first point must not be
    repeated at the end.
    """

    def __init__(self, points, closed: bool = False):
        p = np.asarray(points, dtype=complex).ravel()
        if closed and p.size > 1 and p[0] == p[-1]:
            p = p[:-1]
        need = 3 if closed else 2
        if p.size < need:
            raise ValueError(f"need at least {need} control points, got {p.size}")
        if closed:
            p = np.append(p, p[0])
        seg = np.abs(np.diff(p))
        if np.any(seg == 0):
            raise ValueError("repeated consecutive control points")
        t = np.concatenate([[0.0], np.cumsum(seg)])
        if closed:
            bc = "periodic"
        elif p.size == 2:
            # two points: a straight segment
            bc = ((1, (p[1] - p[0]) / t[1]), (1, (p[1] - p[0]) / t[1]))
        else:
            bc = "not-a-knot"
        self.control = p
        self.closed = closed
        self.length = float(t[-1])
        self._spline = CubicSpline(t, p, bc_type=bc)

    def __call__(self, t, nu: int = 0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.closed:
            t = np.mod(t, self.length)
        return self._spline(t, nu)

    def params(self, h: float, per_cell: int = SAMPLES_PER_CELL) -> np.ndarray:
        """Parameters at about ``per_cell`` samples per grid cell of length."""
        count = max(16, int(np.ceil(self.length / h * per_cell)))
        if self.closed:
            return np.linspace(0.0, self.length, count, endpoint=False)
        return np.linspace(0.0, self.length, count + 1)


def _polygon_contains(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Crossing-number test of points against a closed polygon (vertices, no repeat)."""
    x, y = pts.real.ravel(), pts.imag.ravel()
    inside = np.zeros(x.shape, dtype=bool)
    a = poly
    b = np.roll(poly, -1)
    for p, q in zip(a, b):
        cond = (p.imag > y) != (q.imag > y)
        if not cond.any():
            continue
        xc = p.real + (y[cond] - p.imag) * (q.real - p.real) / (q.imag - p.imag)
        hit = np.zeros_like(inside)
        hit[cond] = x[cond] < xc
        inside ^= hit
    return inside.reshape(pts.shape)


def _segments_cross(p: np.ndarray, closed: bool) -> bool:
    """True if a polyline has two non-adjacent segments that intersect."""
    a = p[:-1] if not closed else p
    b = p[1:] if not closed else np.roll(p, -1)
    m = a.size

    def orient(u, v, w):
        return np.sign((v - u).real * (w - u).imag - (v - u).imag * (w - u).real)

    for i in range(m):
        j = np.arange(i + 2, m)
        if closed and i == 0:
            j = j[j != m - 1]
        if j.size == 0:
            continue
        o1 = orient(a[i], b[i], a[j])
        o2 = orient(a[i], b[i], b[j])
        o3 = orient(a[j], b[j], a[i])
        o4 = orient(a[j], b[j], b[i])
        if np.any((o1 * o2 < 0) & (o3 * o4 < 0)):
            return True
    return False


def _simplicity_samples(curve: SplineCurve, cap: int = 1200) -> np.ndarray:
    count = min(cap, max(64, 16 * curve.control.size))
    t = np.linspace(0.0, curve.length, count, endpoint=not curve.closed)
    return curve(t)


class CompactDomain:
    """Closure of the region bounded by a periodic spline curve, minus the
    open regions bounded by optional hole curves."""

    def __init__(self, control_points, holes=(), name: str = ""):
        self.boundary = SplineCurve(control_points, closed=True)
        self.holes = [SplineCurve(h, closed=True) for h in holes]
        self.name = name
        self._masks: dict = {}
        self._circles = None

    @classmethod
    def circle(cls, center: complex, radius: float, name: str = "") -> "CompactDomain":
        if radius <= 0:
            raise ValueError("radius must be positive")
        dom = cls(complex(center) + radius * _UNIT_CIRCLE, name=name)
        dom._circles = (complex(center), float(radius), None)
        return dom

    @classmethod
    def annulus(cls, center: complex, inner: float, outer: float, name: str = "") -> "CompactDomain":
        if not 0 < inner < outer:
            raise ValueError("annulus radii must satisfy 0 < inner < outer")
        c = complex(center)
        dom = cls(c + outer * _UNIT_CIRCLE, holes=[c + inner * _UNIT_CIRCLE], name=name)
        dom._circles = (c, float(outer), float(inner))
        return dom

    @property
    def curves(self) -> list:
        return [self.boundary] + self.holes

    def polygon(self, h: float) -> np.ndarray:
        return self.boundary(self.boundary.params(h))

    def area(self) -> float:
        def shoelace(curve):
            p = _simplicity_samples(curve)
            q = np.roll(p, -1)
            return 0.5 * abs(float(np.sum(p.real * q.imag - q.real * p.imag)))

        return shoelace(self.boundary) - sum(shoelace(c) for c in self.holes)

    def is_simple(self) -> bool:
        if any(_segments_cross(_simplicity_samples(c), closed=True) for c in self.curves):
            return False
        outer = _simplicity_samples(self.boundary)
        for k, hole in enumerate(self.holes):
            hp = _simplicity_samples(hole)
            if not np.all(_polygon_contains(outer, hp)):
                return False
            for other in self.holes[k + 1 :]:
                if np.any(_polygon_contains(_simplicity_samples(other), hp)):
                    return False
        return True

    def contains(self, points, h: float = 1e-2) -> np.ndarray:
        pts = np.asarray(points, dtype=complex)
        if self._circles is not None:
            c, r_out, r_in = self._circles
            d = np.abs(pts - c)
            return (d <= r_out) & (d >= r_in) if r_in is not None else d <= r_out
        inside = _polygon_contains(self.polygon(h), pts)
        for hole in self.holes:
            # holes are open, so their boundary stays in the domain
            inside &= ~_polygon_contains(hole(hole.params(h)), pts)
        return inside

    def mask(self, grid: Grid) -> Mask:
        m = self._masks.get(grid)
        if m is None:
            m = self._masks[grid] = Mask(grid, self.contains(grid.z, grid.h))
            m.inside.flags.writeable = False
        return m

    def boundary_distance(self, points, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Distance to the boundary and the boundary tangent at the nearest sample."""
        ts = [c.params(h) for c in self.curves]
        samples = np.concatenate([c(t) for c, t in zip(self.curves, ts)])
        tangents = np.concatenate([c(t, 1) for c, t in zip(self.curves, ts)])
        tree = cKDTree(np.c_[samples.real, samples.imag])
        pts = np.atleast_1d(np.asarray(points, dtype=complex))
        d, idx = tree.query(np.c_[pts.real, pts.imag])
        return d, tangents[idx]


class JordanArc:
    """Smooth arc gamma: [0, L] -> C (or closed curve) through control points."""

    def __init__(self, control_points, closed: bool = False, name: str = ""):
        self.curve = SplineCurve(control_points, closed=closed)
        self.closed = closed
        self.name = name

    @property
    def length(self) -> float:
        return self.curve.length

    @property
    def endpoints(self) -> tuple[complex, complex]:
        return complex(self.curve(0.0)), complex(self.curve(self.length))

    def params(self, h: float) -> np.ndarray:
        return self.curve.params(h)

    def points(self, h: float) -> np.ndarray:
        return self.curve(self.params(h))

    def is_immersed(self, h: float) -> bool:
        return bool(np.all(np.abs(self.curve(self.params(h), 1)) > 1e-12))

    def is_simple(self) -> bool:
        return not _segments_cross(_simplicity_samples(self.curve), closed=self.closed)

    def raster(self, grid: Grid) -> Mask:
        """Nodes nearest to the arc samples, thickened by one cross step."""
        ij = np.rint(grid.index_coords(self.points(grid.h))).astype(int)
        ok = np.all((ij >= 0) & (ij < grid.N), axis=0)
        m = np.zeros(grid.shape, dtype=bool)
        m[ij[0, ok], ij[1, ok]] = True
        return Mask(grid, ndimage.binary_dilation(m, _CROSS))


@dataclass(eq=False)
class AdmissibleSet:
    domains: list
    arcs: list
    grid: Grid
    ambient: Mask | None = None
    min_angle: float = 15.0

    def __post_init__(self):
        if self.ambient is None:
            self.ambient = Mask.full(self.grid)

    def K(self) -> Mask:
        m = np.zeros(self.grid.shape, dtype=bool)
        for d in self.domains:
            m |= d.mask(self.grid).inside
        return Mask(self.grid, m)

    def E(self) -> Mask:
        m = np.zeros(self.grid.shape, dtype=bool)
        for a in self.arcs:
            m |= a.raster(self.grid).inside
        return Mask(self.grid, m)

    def mask(self) -> Mask:
        return self.K() | self.E()

    def arc_points(self) -> np.ndarray:
        if not self.arcs:
            return np.zeros(0, dtype=complex)
        return np.concatenate([a.points(self.grid.h) for a in self.arcs])


# -- validation ----------------------------------------------------------------


def bounded_complement_components(S: np.ndarray, ambient: np.ndarray) -> list:
    """Centroids of components of ambient minus S that stay away from the
    edge of ambient (and of the box): the relatively compact holes."""
    S = np.asarray(S, dtype=bool)
    ambient = np.asarray(ambient, dtype=bool)
    comp = ambient & ~S
    labels, count = ndimage.label(comp, _CROSS)
    if count == 0:
        return []
    edge = np.zeros_like(comp)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    edge |= ndimage.binary_dilation(~ambient, _CROSS)
    open_ids = set(np.unique(labels[edge & comp]).tolist())
    out = []
    for k in range(1, count + 1):
        if k in open_ids:
            continue
        ij = np.argwhere(labels == k)
        out.append((float(ij[:, 0].mean()), float(ij[:, 1].mean()), int(ij.shape[0])))
    return out


@dataclass
class ValidationReport:
    disjoint: bool = True
    simple: bool = True
    endpoints_only: bool = True
    transverse: bool = True
    runge: bool = True
    angles: list = field(default_factory=list)
    components: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.disjoint and self.simple and self.endpoints_only and self.transverse and self.runge

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "disjoint": self.disjoint,
            "simple": self.simple,
            "endpoints_only": self.endpoints_only,
            "transverse": self.transverse,
            "runge": self.runge,
            "angles": self.angles,
            "components": self.components,
            "messages": self.messages,
        }


def _line_angle(u: complex, v: complex) -> float:
    c = abs((u * np.conj(v)).real) / (abs(u) * abs(v))
    return float(np.degrees(np.arccos(min(1.0, c))))


def validate_admissible(S: AdmissibleSet) -> ValidationReport:
    rep = ValidationReport()
    grid = S.grid
    h = grid.h
    tol = h

    for k, d in enumerate(S.domains):
        if not d.is_simple() or d.area() <= 0:
            rep.simple = False
            rep.messages.append(f"domain {k}: boundary is not a simple closed curve")
    for k, a in enumerate(S.arcs):
        if not a.is_simple() or not a.is_immersed(h):
            rep.simple = False
            rep.messages.append(f"arc {k}: not a simple immersed curve")

    masks = [d.mask(grid) for d in S.domains]
    for i in range(len(S.domains)):
        for j in range(i + 1, len(S.domains)):
            db, _ = S.domains[j].boundary_distance(S.domains[i].polygon(h), h)
            if (masks[i].inside & masks[j].inside).any() or db.min() <= tol:
                rep.disjoint = False
                rep.messages.append(f"domains {i} and {j} intersect")

    pts = [a.points(h) for a in S.arcs]
    for i in range(len(S.arcs)):
        for j in range(i + 1, len(S.arcs)):
            tree = cKDTree(np.c_[pts[j].real, pts[j].imag])
            d, _ = tree.query(np.c_[pts[i].real, pts[i].imag])
            if d.min() <= tol:
                rep.disjoint = False
                rep.messages.append(f"arcs {i} and {j} intersect")

    for k, a in enumerate(S.arcs):
        t = a.params(h)
        p = pts[k]
        keep = np.ones(p.shape, dtype=bool)
        ends = [] if a.closed else [(0, 0.0, 1.0), (1, a.length, -1.0)]
        for end, te, sgn in ends:
            z_end = complex(a.curve(te))
            for di, d in enumerate(S.domains):
                dist, tang = d.boundary_distance(z_end, h)
                if dist[0] <= tol:
                    ang = _line_angle(complex(a.curve(te, 1)), complex(tang[0]))
                    rep.angles.append({"arc": k, "end": end, "domain": di, "angle": round(ang, 6)})
                    if ang < S.min_angle:
                        rep.transverse = False
                        rep.messages.append(
                            f"arc {k} meets domain {di} at {ang:.1f} deg < {S.min_angle} deg"
                        )
                    # samples close to an attached end may touch the boundary
                    keep &= np.abs(t - te) > 2 * tol
        for di, d in enumerate(S.domains):
            inside = d.contains(p[keep], h)
            near, _ = d.boundary_distance(p[keep], h)
            if np.any(inside | (near <= tol / 2)):
                rep.endpoints_only = False
                rep.messages.append(f"arc {k} meets domain {di} away from its endpoints")

    holes = bounded_complement_components(S.mask().inside, S.ambient.inside)
    if holes:
        rep.runge = False
        for i, j, size in holes:
            z = grid.center + (i + 0.5) * h - grid.half_width + 1j * ((j + 0.5) * h - grid.half_width)
            rep.components.append({"x": float(z.real), "y": float(z.imag), "nodes": size})
        rep.messages.append(f"{len(holes)} relatively compact complement component(s)")
    return rep


# -- cut-offs and extensions ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class CutoffFunction:
    inner: Mask
    outer: Mask
    values: GridFunction
    width: float  # narrowest gap between inner and the edge of outer, in cells

    def at(self, points) -> np.ndarray:
        """Linear interpolation at points, so values stay in [0, 1]."""
        c = self.inner.grid.index_coords(np.atleast_1d(points))
        return ndimage.map_coordinates(self.values.values[:, :, 0].real, c, order=1, mode="nearest")


def make_cutoff(inner: Mask, outer: Mask) -> CutoffFunction:
    """1 on inner, 0 off outer, smooth-step of d_in / (d_in + d_out) between."""
    if inner.grid != outer.grid:
        raise ValueError("grid mismatch")
    if inner.is_empty():
        raise ValueError("inner mask is empty")
    if not inner.dilate(2).issubset(outer):
        raise ValueError("gap between inner and outer is below 2 cells; refine the grid")
    d_in = ndimage.distance_transform_edt(~inner.inside)
    d_out = ndimage.distance_transform_edt(outer.inside)
    t = d_in / (d_in + d_out)
    phi = 1.0 - smooth_step(t)
    phi[inner.inside] = 1.0
    phi[~outer.inside] = 0.0
    band = outer.inside & ~inner.inside
    width = float((d_in + d_out)[band].min()) if band.any() else np.inf
    return CutoffFunction(inner, outer, GridFunction(inner.grid, phi.astype(complex)), width)


def extend_smooth(f: GridFunction, frm: Mask, collar: float = 10.0) -> GridFunction:
    """Nearest-point extension of f off ``frm``, damped to 0 over ``collar`` cells."""
    if frm.grid != f.grid:
        raise ValueError("grid mismatch")
    if frm.is_empty():
        raise ValueError("cannot extend from an empty mask")
    d, (ii, jj) = ndimage.distance_transform_edt(~frm.inside, return_indices=True)
    if collar <= 0:
        return f.like(f.values[ii, jj] * (d == 0)[:, :, None])
    profile = 1.0 - smooth_step(d / collar)
    return f.like(f.values[ii, jj] * profile[:, :, None])


# -- tube extension of arc data ----------------------------------------------


@dataclass(eq=False)
class _Piece:
    axis: str  # "x": graph over the real axis, "y": over the imaginary axis
    lo: float  # core parameter range
    hi: float
    ramp_lo: float  # ramp widths (0 at the open ends of the arc)
    ramp_hi: float
    f1: CubicSpline | None = None


@dataclass(eq=False)
class ArcExtension:
    """F on a tube around an arc with F = f on the arc and dbar_B F = 0 there."""

    arc: JordanArc
    tube: Mask
    F: GridFunction
    residual: GridFunction  # dbar_B F on the tube (semi-analytic, see evaluate)
    rho: float
    eta: float
    pieces: list = field(repr=False)
    weight_defect: float = 0.0
    _core: object = field(default=None, repr=False)

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray]:
        """F and dbar_B F at the arc points gamma(t)."""
        return self._core.at_params(np.asarray(t, dtype=float))


class _TubeModel:
    def __init__(self, arc: JordanArc, fs: CubicSpline, coeff, pieces, lo: float, hi: float):
        self.arc = arc
        self.fs = fs
        self.coeff = coeff
        self.pieces = pieces
        self.lo, self.hi = lo, hi

    def _wrap(self, t):
        return np.mod(t, self.arc.length) if self.arc.closed else t

    def weights(self, t) -> np.ndarray:
        """Partition of unity over pieces as functions of the curve parameter."""
        t = np.asarray(t, dtype=float)
        L = self.arc.length
        chis = []
        for p in self.pieces:
            shifts = (-L, 0.0, L) if self.arc.closed else (0.0,)
            chi = np.zeros_like(t)
            for sh in shifts:
                u = t + sh
                a = smooth_step((u - (p.lo - p.ramp_lo)) / p.ramp_lo) if p.ramp_lo > 0 else (u >= p.lo)
                b = smooth_step(((p.hi + p.ramp_hi) - u) / p.ramp_hi) if p.ramp_hi > 0 else (u <= p.hi)
                chi = np.maximum(chi, np.asarray(a, float) * np.asarray(b, float))
            chis.append(chi)
        chis = np.array(chis)
        return chis / chis.sum(axis=0)

    def _f_and_ft(self, t):
        t = self._wrap(t)
        return self.fs(t), self.fs(t, 1)

    def piece_eval(self, p: _Piece, z: np.ndarray, t0: np.ndarray):
        """F_p and dbar_B F_p at points z whose nearest curve parameter is t0."""
        g = self.arc.curve
        t = t0.copy()
        coord = z.real if p.axis == "x" else z.imag
        for _ in range(6):
            d1 = g(t, 1)
            val = (g(t).real if p.axis == "x" else g(t).imag) - coord
            der = d1.real if p.axis == "x" else d1.imag
            t = t - val / der
        gam, d1 = g(t), g(t, 1)
        f, ft = self._f_and_ft(t)
        f1 = p.f1(self._wrap(t))
        f1t = p.f1(self._wrap(t), 1)
        if p.axis == "x":
            dx = d1.real[:, None]
            psi, dpsi = gam.imag, d1.imag / d1.real
            off = (z.imag - psi)[:, None]
            F = f + f1 * off
            Fx = ft / dx + (f1t / dx) * off - f1 * dpsi[:, None]
            Fy = f1
        else:
            dy = d1.imag[:, None]
            psi, dpsi = gam.real, d1.real / d1.imag
            off = (z.real - psi)[:, None]
            F = f + f1 * off
            Fy = ft / dy + (f1t / dy) * off - f1 * dpsi[:, None]
            Fx = f1
        b1, b2 = self.coeff.at_points(z)
        lower = np.einsum("pij,pj->pi", b1, F) + np.einsum("pij,pj->pi", b2, F.conj())
        return F, 0.5 * (Fx + 1j * Fy) + lower

    def eval(self, z: np.ndarray, t0: np.ndarray, with_residual=True):
        W = self.weights(t0)
        n = self.coeff.n
        F = np.zeros((z.size, n), dtype=complex)
        R = np.zeros((z.size, n), dtype=complex)
        for k, p in enumerate(self.pieces):
            sel = W[k] > 0
            if not sel.any():
                continue
            Fp, Rp = self.piece_eval(p, z[sel], t0[sel])
            F[sel] += W[k][sel, None] * Fp
            R[sel] += W[k][sel, None] * Rp
        return F, R, W

    def at_params(self, t):
        # on the arc every piece equals f, so the weight derivatives drop out
        z = self.arc.curve(t)
        F, R, _ = self.eval(np.atleast_1d(z), np.atleast_1d(t))
        return F, R


def _f1_values(axis: str, d1, f, ft, b1, b2):
    lower = np.einsum("pij,pj->pi", b1, f) + np.einsum("pij,pj->pi", b2, f.conj())
    if axis == "x":
        dpsi = (d1.imag / d1.real)[:, None]
        return -(ft / d1.real[:, None] + 2 * lower) / (1j - dpsi)
    dpsi = (d1.real / d1.imag)[:, None]
    return -(1j * ft / d1.imag[:, None] + 2 * lower) / (1.0 - 1j * dpsi)


def _max_curvature(curve: SplineCurve, t) -> float:
    d1, d2 = curve(t, 1), curve(t, 2)
    k = np.abs((np.conj(d1) * d2).imag) / np.abs(d1) ** 3
    return float(k.max())


def arc_extend(
    arc: JordanArc,
    f_on_arc,
    coeff,
    grid: Grid,
    rho: float | None = None,
    max_rho_cells: float = 8.0,
) -> ArcExtension:
    """Extend data along an arc to a tube on which F = f on the arc and
    dbar_B F = 0 on the arc.

    ``f_on_arc`` holds values at ``arc.params(grid.h)``, shape (P,) or (P, n).
    Over each piece of the arc that is a graph over one coordinate axis,
    F = f + f1 * (offset from the graph); f1 is fixed by requiring the
    Pascali residual to vanish on the graph. Pieces are blended by a
    partition of unity in the arc parameter.
    """
    h = grid.h
    t_s = arc.params(h)
    fv = np.asarray(f_on_arc, dtype=complex)
    if fv.ndim == 1:
        fv = fv[:, None]
    if fv.shape[0] != t_s.size or fv.shape[1] != coeff.n:
        raise ValueError(f"arc data has shape {fv.shape}, expected ({t_s.size}, {coeff.n})")
    L = arc.length
    if arc.closed:
        fs = CubicSpline(np.append(t_s, L), np.vstack([fv, fv[:1]]), bc_type="periodic", axis=0)
    else:
        fs = CubicSpline(t_s, fv, axis=0)

    kappa = _max_curvature(arc.curve, t_s)
    reach = 0.5 / kappa if kappa > 0 else np.inf
    if rho is None:
        rho = min(reach, max_rho_cells * h)
    if rho < 3 * h:
        raise ValueError(f"tubular radius {rho:.3g} is below 3 grid cells; refine the grid")
    eta = 0.0 if arc.closed else rho
    lo, hi = (0.0, L) if arc.closed else (-eta, L + eta)

    # split into pieces by dominant tangent axis
    dense = np.linspace(lo, hi, max(64, int(np.ceil((hi - lo) / h * SAMPLES_PER_CELL))) + 1)
    d1 = arc.curve(dense, 1)
    ax = np.where(np.abs(d1.real) >= np.abs(d1.imag), "x", "y")
    step = dense[1] - dense[0]
    overlap = 10 * step
    cuts = np.flatnonzero(ax[1:] != ax[:-1]) + 1
    bounds = np.concatenate([[0], cuts, [dense.size - 1]])
    runs = [(ax[bounds[i]], dense[bounds[i]], dense[bounds[i + 1]]) for i in range(bounds.size - 1)]
    if arc.closed and len(runs) > 1 and runs[0][0] == runs[-1][0]:
        a0, l0, h0 = runs.pop()
        runs[0] = (a0, l0 - L, runs[0][2])
    pieces = []
    for k, (a, p_lo, p_hi) in enumerate(runs):
        open_lo = not arc.closed and k == 0
        open_hi = not arc.closed and k == len(runs) - 1
        pieces.append(_Piece(a, p_lo, p_hi, 0.0 if open_lo else overlap, 0.0 if open_hi else overlap))
    if len(pieces) == 1 and arc.closed:
        pieces[0].ramp_lo = pieces[0].ramp_hi = 0.0

    for p in pieces:
        a_lo = p.lo - p.ramp_lo - 2 * overlap
        a_hi = p.hi + p.ramp_hi + 2 * overlap
        if not arc.closed:
            a_lo, a_hi = max(a_lo, lo - overlap), min(a_hi, hi + overlap)
        tt = np.linspace(a_lo, a_hi, max(16, int(np.ceil((a_hi - a_lo) / step))) + 1)
        tw = np.mod(tt, L) if arc.closed else tt
        gam = arc.curve(tw)
        b1s, b2s = coeff.at_points(gam)
        f1 = _f1_values(p.axis, arc.curve(tw, 1), fs(tw), fs(tw, 1), b1s, b2s)
        p.f1 = CubicSpline(tt, f1, axis=0)
        if arc.closed:
            p.f1 = _PeriodicWrap(p.f1, L, a_lo)

    model = _TubeModel(arc, fs, coeff, pieces, lo, hi)

    # nodes within rho of the (extended) curve
    curve_pts = arc.curve(dense)
    tree = cKDTree(np.c_[curve_pts.real, curve_pts.imag])
    z_all = grid.z.ravel()
    reach_pts = tree.query_ball_point(np.c_[z_all.real, z_all.imag], rho + 2 * h, return_length=True)
    cand = np.flatnonzero(reach_pts > 0)
    zc = z_all[cand]
    _, idx = tree.query(np.c_[zc.real, zc.imag])
    t0 = dense[idx]
    g = arc.curve
    for _ in range(4):
        gm, g1, g2 = g(t0), g(t0, 1), g(t0, 2)
        num = ((gm - zc).conjugate() * g1).real
        den = np.abs(g1) ** 2 + ((gm - zc).conjugate() * g2).real
        t0 = t0 - num / den
        if not arc.closed:
            t0 = np.clip(t0, lo, hi)
    dist = np.abs(zc - g(t0))
    # a one-cell halo lets finite differences of the weights be centred on the tube
    halo = dist < rho + 1.5 * h
    body = dist < rho
    if not arc.closed:
        # cut the tube flat at the ends of the extended arc
        body &= (t0 > lo) & (t0 < hi)
    tube_nodes = cand[body]
    zc, t0, cand = zc[halo], t0[halo], cand[halo]

    F_h, R_h, W = model.eval(zc, t0)
    n = coeff.n
    Wgrid = np.zeros((len(pieces),) + grid.shape)
    for k, p in enumerate(pieces):
        wk = np.zeros(grid.N * grid.N)
        wk[cand] = W[k]
        Wgrid[k] = wk.reshape(grid.shape)
    tube = np.zeros(grid.N * grid.N, dtype=bool)
    tube[tube_nodes] = True
    tube = tube.reshape(grid.shape)

    Fv = np.zeros((grid.N * grid.N, n), dtype=complex)
    Rv = np.zeros((grid.N * grid.N, n), dtype=complex)
    Fv[cand] = F_h
    Rv[cand] = R_h
    # residual of the blend: sum_p w_p r_p + sum_p dbar(w_p) F_p
    for k, p in enumerate(pieces):
        gx, gy = np.gradient(Wgrid[k], h)
        dw = (0.5 * (gx + 1j * gy)).ravel()[cand]
        if not np.any(dw):
            continue
        Fp, _ = model.piece_eval(p, zc, t0)
        Rv[cand] += dw[:, None] * Fp
    Fv[~tube.ravel()] = 0
    Rv[~tube.ravel()] = 0
    defect = float(np.abs(Wgrid.sum(axis=0)[tube] - 1.0).max()) if tube.any() else 0.0
    return ArcExtension(
        arc=arc,
        tube=Mask(grid, tube),
        F=GridFunction(grid, Fv.reshape(grid.shape + (n,))),
        residual=GridFunction(grid, Rv.reshape(grid.shape + (n,))),
        rho=float(rho),
        eta=float(eta),
        pieces=pieces,
        weight_defect=defect,
        _core=model,
    )


class _PeriodicWrap:
    """Evaluate a spline built on [a, a + span] at periodic parameters."""

    def __init__(self, spline, period, start):
        self.spline, self.period, self.start = spline, period, start

    def __call__(self, t, nu=0):
        u = self.start + np.mod(np.asarray(t) - self.start, self.period)
        return self.spline(u, nu)
