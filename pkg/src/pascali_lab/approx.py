"""Approximation pipelines: local Mergelyan on a compact domain, Mergelyan
on admissible sets K u E, and windowed Carleman approximation along R.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline

from . import expr as _expr
from .geometry import (
    AdmissibleSet,
    CompactDomain,
    JordanArc,
    arc_extend,
    extend_smooth,
    make_cutoff,
    smooth_step,
    validate_admissible,
)
from .grid import GridFunction, Mask, interpolate, sup_norm
from .operator import dbar_B
from .solver import (
    CorrectionResult,
    FormalPowerBasis,
    PascaliSolver,
    RungeFit,
    build_formal_powers,
    correct_to_solution,
    runge_fit,
)


class AdmissibilityError(ValueError):
    def __init__(self, report):
        super().__init__("set is not admissible: " + "; ".join(report.messages))
        self.report = report


class StageFailure(RuntimeError):
    def __init__(self, stage: str, best: float, target: float, report=None):
        super().__init__(f"stage {stage!r} missed its budget: best error {best:.3e} > {target:.3e}")
        self.stage = stage
        self.best = best
        self.target = target
        self.report = report


@dataclass
class StageRecord:
    name: str
    budget: float
    achieved: float
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.achieved <= self.budget

    def to_dict(self) -> dict:
        return {"name": self.name, "budget": self.budget, "achieved": self.achieved, "ok": self.ok, **self.detail}


@dataclass
class ApproximationReport:
    target: str
    epsilon: float
    error: float = float("nan")
    residual: float = float("nan")
    stages: list = field(default_factory=list)
    iterations: int = 0
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)
    fit: RungeFit | None = field(default=None, repr=False)
    samples: dict = field(default_factory=dict, repr=False)

    def stage(self, name: str, budget: float, achieved: float, **detail) -> StageRecord:
        rec = StageRecord(name, float(budget), float(achieved), detail)
        self.stages.append(rec)
        return rec

    def to_dict(self) -> dict:
        """Everything except wall-clock time, so reruns serialize identically."""
        return {
            "target": self.target,
            "epsilon": self.epsilon,
            "error": self.error,
            "residual": self.residual,
            "ok": bool(self.error <= self.epsilon),
            "iterations": self.iterations,
            "stages": [s.to_dict() for s in self.stages],
            **self.extra,
        }


def _grow(K: Mask, cells: float) -> Mask:
    """Nodes within ``cells`` grid steps (Euclidean) of K."""
    return Mask(K.grid, ndimage.distance_transform_edt(~K.inside) <= cells)


def _as_mask(K, grid) -> Mask:
    return K.mask(grid) if isinstance(K, CompactDomain) else K


def _supn(a) -> float:
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.sum(np.abs(a.reshape(a.shape[0], -1)) ** 2, axis=1)).max())


# -- local Mergelyan -----------------------------------------------------------


@dataclass(eq=False)
class LocalMergelyanResult:
    U: Mask
    w: GridFunction
    error: float
    offset: int
    trials: list
    correction: CorrectionResult = field(repr=False)


def local_mergelyan(
    s: PascaliSolver,
    K,
    f: GridFunction,
    eps: float,
    support: Mask | None = None,
    dbar_f: GridFunction | None = None,
    offsets=(16, 8, 4, 2),
) -> LocalMergelyanResult:
    """Correct f on shrinking neighbourhoods of K until it is within eps/2 on K.

    ``support`` is where f is known; off it f is extended smoothly.
    ``dbar_f`` optionally supplies the residual of f when finite differences
    would be less accurate than what the caller knows.
    """
    grid = s.grid
    Km = _as_mask(K, grid)
    if Km.is_empty():
        raise ValueError("K has no grid nodes; refine the grid")
    room = s.domain.erode(1)
    if support is None:
        support = Mask.full(grid)
    ftil = extend_smooth(f, support)
    trials = []
    best = None
    for o in sorted(set(int(o) for o in offsets), reverse=True):
        if o < 2:
            continue
        U = _grow(Km, o)
        if not U.issubset(room) or (dbar_f is not None and not U.issubset(support)):
            continue
        r = dbar_f if dbar_f is not None else dbar_B(s.coeff, ftil)
        res = correct_to_solution(s, ftil, U, dbar_g=dbar_f)
        err = sup_norm(f - res.w, Km)
        trials.append({"offset": o, "input_residual": sup_norm(r, U), "error": err})
        if best is None or err < best[0]:
            best = (err, o, U, res)
        if err <= eps / 2:
            return LocalMergelyanResult(U, res.w, err, o, trials, res)
    if best is None:
        raise StageFailure("local", float("inf"), eps / 2)
    raise StageFailure("local", best[0], eps / 2)


# -- Mergelyan on admissible sets -----------------------------------------------


def _arc_values(vals, arc: JordanArc, h: float, n: int) -> np.ndarray:
    if callable(vals):
        v = vals(arc.curve(arc.params(h)))
    else:
        v = vals
    v = np.asarray(v, dtype=complex)
    return v.reshape(v.shape[0], n)


def mergelyan(
    s: PascaliSolver,
    S: AdmissibleSet,
    f_dom: GridFunction | None,
    f_arcs,
    eps: float,
    basis: FormalPowerBasis | None = None,
    degree: int = 12,
    support: Mask | None = None,
    dbar_f: GridFunction | None = None,
    local_offsets=(16, 12, 8),
    collar: float = 2.0,
    minimax: int = 30,
) -> tuple[GridFunction, ApproximationReport]:
    """Approximate f on S = K u E by a global solution within eps.

    ``f_dom`` gives f near K on the grid, ``f_arcs`` one array (or callable
    of points) per arc at ``arc.params(h)``. Stages: local correction near K,
    neighbourhood shrink, first gluing, tube extension along the arcs, second
    gluing, correction on a thin neighbourhood of S, and the Runge fit.
    """
    t_start = time.perf_counter()
    grid = s.grid
    h = grid.h
    n = s.coeff.n
    check = validate_admissible(S)
    if not check.ok:
        raise AdmissibilityError(check)
    rep = ApproximationReport(
        target=f"{len(S.domains)} domain(s) + {len(S.arcs)} arc(s)", epsilon=float(eps)
    )
    rep.extra["validation"] = check.to_dict()
    Km = S.K()
    have_K = not Km.is_empty()
    arc_t = [a.params(h) for a in S.arcs]
    arc_p = [a.curve(t) for a, t in zip(S.arcs, arc_t)]
    arc_f = [_arc_values(v, a, h, n) for v, a in zip(f_arcs, S.arcs)]
    if len(arc_f) != len(S.arcs):
        raise ValueError("one set of arc samples is needed per arc")
    P = np.concatenate(arc_p) if arc_p else np.zeros(0, dtype=complex)
    fP = np.concatenate(arc_f) if arc_f else np.zeros((0, n), dtype=complex)
    iterations = 0

    def fail(stage, best, target):
        rep.wall_clock = time.perf_counter() - t_start
        raise StageFailure(stage, best, target, rep)

    # (1)-(3): local correction near K, shrink, first gluing
    if have_K:
        if f_dom is None:
            raise ValueError("f_dom is required when S has domains")
        try:
            loc = local_mergelyan(s, Km, f_dom, eps / 4, support, dbar_f, local_offsets)
        except StageFailure as e:
            fail("local", e.best, e.target)
        iterations += loc.correction.iterations
        g = loc.w
        rep.stage("local", eps / 4, loc.error, offset=loc.offset, trials=loc.trials)
        dist_P = ndimage.map_coordinates(
            ndimage.distance_transform_edt(~Km.inside), grid.index_coords(P), order=1, mode="nearest"
        ) if P.size else np.zeros(0)
        gP = interpolate(g, P) if P.size else np.zeros((0, n), complex)
        a1 = None
        shrink_err = np.inf
        for cand in range(loc.offset, 7, -1):
            near = dist_P <= cand
            e = _supn((gP - fP)[near])
            if e < eps / 2:
                a1, shrink_err = cand, e
                break
            shrink_err = min(shrink_err, e)
        if a1 is None:
            fail("shrink", shrink_err, eps / 2)
        # the second cut-off sits tight around K; the first band takes the
        # remaining width so that h stays gentle along the arcs
        a3, a2 = 2, 5
        U1, U2, U3 = _grow(Km, a1), _grow(Km, a2), _grow(Km, a3)
        rep.stage("shrink", eps / 2, shrink_err, offsets=[a1, a2, a3])
        cut1 = make_cutoff(U2, U1)
        c1P = cut1.at(P)[:, None] if P.size else np.zeros((0, 1))
        hP = c1P * gP + (1 - c1P) * fP
        glue1 = max(sup_norm(f_dom - g, Km), _supn(hP - fP))
        rep.stage("glue1", eps / 2, glue1)
    else:
        g = None
        hP = fP.copy()
        rep.stage("glue1", eps / 2, 0.0, note="no domains")

    # (4): extension along the arcs
    exts = []
    off = 0
    for a, t, p in zip(S.arcs, arc_t, arc_p):
        exts.append(arc_extend(a, hP[off : off + t.size], s.coeff, grid))
        off += t.size
    if exts:
        F = exts[0].F
        rF = exts[0].residual
        V = exts[0].tube
        for e in exts[1:]:
            # tubes are disjoint once arcs are separated by more than 2 rho
            F = F + e.F
            rF = rF + e.residual
            V = V | e.tube
        on_arc = [e.evaluate(t) for e, t in zip(exts, arc_t)]
        FP = np.concatenate([o[0] for o in on_arc])
        rFP = np.concatenate([o[1] for o in on_arc])
        rep.stage(
            "arc_extend",
            2e-2,
            _supn(rFP),
            interpolation=_supn(FP - hP),
            rho=[e.rho for e in exts],
            partition_defect=max(e.weight_defect for e in exts),
        )
    else:
        F = GridFunction.zeros(grid, n)
        rF = GridFunction.zeros(grid, n)
        V = Mask(grid, np.zeros(grid.shape, bool))
        rFP = np.zeros((0, n), complex)

    # (5): second gluing H = cut2 g + (1 - cut2) F, residual assembled from parts
    if have_K:
        cut2 = make_cutoff(U3, U2)
        phi = cut2.values
        gx, gy = np.gradient(phi.values[:, :, 0].real, h)
        # the cut-off is constant on U3 and off U2, so its derivative vanishes there
        dphi = np.where(U2.inside & ~U3.inside, 0.5 * (gx + 1j * gy), 0.0)
        rg = loc.correction.residual_field
        H = phi.values * g.values + (1 - phi.values) * F.values
        rH = dphi[:, :, None] * (g.values - F.values) + phi.values * rg.values + (1 - phi.values) * rF.values
        valid = U3 | V
        c2P = cut2.at(P)[:, None] if P.size else np.zeros((0, 1))
        rHP = c2P * (interpolate(rg, P) if P.size else 0) + (1 - c2P) * rFP
        glue2 = max(sup_norm(GridFunction(grid, rH), Km.erode(1)), _supn(rHP))
        k_off = a3
    else:
        H = F.values
        rH = rF.values
        valid = V
        glue2 = _supn(rFP)
        k_off = 0
    H = GridFunction(grid, np.where(valid.inside[:, :, None], H, 0))
    rH = GridFunction(grid, np.where(valid.inside[:, :, None], rH, 0))
    rep.stage("glue2", 2e-2, glue2)

    # (6): correction on thin neighbourhoods of S
    E_raster = S.E()
    d_E = ndimage.distance_transform_edt(~E_raster.inside) if exts else None
    e_max = int(min(e.rho for e in exts) / h) - 1 if exts else 0
    top = min(k_off, e_max) if (have_K and exts) else max(k_off, e_max)
    room = s.domain.erode(1)
    cands = []
    o = top
    while o >= 2:
        cands.append(o)
        o //= 2
    if not cands:
        cands = [2]
    best6 = None
    for o in cands:
        om = np.zeros(grid.shape, bool)
        if have_K:
            om |= _grow(Km, min(o, k_off)).inside
        if exts:
            om |= d_E <= min(o, e_max)
        Om = Mask(grid, om) & valid & room
        res = correct_to_solution(s, H, Om, dbar_g=rH, collar=collar)
        iterations += res.iterations
        u = H - res.w
        uP = interpolate(u, P) if P.size else np.zeros((0, n), complex)
        err6 = max(sup_norm(u, Km) if have_K else 0.0, _supn(uP))
        if best6 is None or err6 < best6[0]:
            best6 = (err6, o, res, uP)
        if err6 <= eps / 4:
            break
    err6, o6, res6, uP = best6
    rep.stage("correct", eps / 4, err6, offset=o6)
    if err6 > eps / 4:
        fail("correct", err6, eps / 4)
    wm = res6.w
    wmP = hP - uP

    # (7): Runge fit by global formal powers
    if basis is None:
        basis = build_formal_powers(s, s.domain.erode(2), degree)
    fit = runge_fit(
        basis, wm if have_K else None, Km if have_K else None, P if P.size else None, wmP, minimax=minimax
    )
    rep.stage("runge", eps / 4, fit.err, members=len(basis), condition=fit.condition)
    if fit.err > eps / 4:
        fail("runge", fit.err, eps / 4)
    w = fit.w
    rep.fit = fit

    # final audit against f itself
    errs = []
    if have_K:
        errs.append(sup_norm(f_dom - w, Km))
    wP = fit.w_at_points if P.size else np.zeros((0, n))
    if P.size:
        errs.append(_supn(wP - fP))
    rep.error = max(errs)
    resid = dbar_B(s.coeff, w)
    rparts = []
    if have_K:
        rparts.append(sup_norm(resid, Km))
    if P.size:
        rparts.append(_supn(interpolate(resid, P)))
    rep.residual = max(rparts)
    rep.iterations = iterations
    rep.extra["budget_sum"] = rep.stages[[s_.name for s_ in rep.stages].index("glue1")].achieved + err6 + fit.err
    rep.wall_clock = time.perf_counter() - t_start
    if rep.error > eps:
        raise StageFailure("final", rep.error, eps, rep)
    return w, rep


# -- Carleman along R ------------------------------------------------------------


_EXPR_TYPES = tuple(_expr.Node.__args__) + (_expr.Array,)


def _eps_callable(eps) -> Callable:
    if isinstance(eps, str):
        eps = _expr.parse(eps)
    if isinstance(eps, _EXPR_TYPES):
        return lambda z: np.real(
            np.broadcast_to(_expr.evaluate(eps, np.asarray(z, dtype=complex)), np.shape(z))
        )
    if callable(eps):
        return lambda z: np.real(np.asarray(eps(z)))
    val = float(eps)
    return lambda z: np.full(np.shape(z), val)


def schedule_points(radius: float, step: float = 1 / 16, circle: int = 256) -> np.ndarray:
    """Deterministic samples of the closed disc |z| <= radius."""
    k = int(np.floor(radius / step))
    a = np.arange(-k, k + 1) * step
    z = (a[:, None] + 1j * a[None, :]).ravel()
    z = z[np.abs(z) <= radius]
    th = 2 * np.pi * np.arange(circle) / circle
    return np.concatenate([z, radius * np.exp(1j * th)])


@dataclass
class CarlemanSchedule:
    m_max: int
    eps_m: list  # eps_m[m] = min of eps over |z| <= m + 2, m = 0..m_max

    @classmethod
    def build(cls, eps, m_max: int, step: float = 1 / 16) -> "CarlemanSchedule":
        if m_max < 1:
            raise ValueError("m_max must be >= 1")
        fn = _eps_callable(eps)
        vals = []
        for m in range(m_max + 1):
            v = float(np.min(fn(schedule_points(m + 2, step))))
            if not v > 0:
                raise ValueError(f"epsilon is not positive on |z| <= {m + 2}")
            vals.append(v)
        return cls(m_max, vals)

    @staticmethod
    def omega_radius(m: int) -> float:
        return m + 1 / 3

    @staticmethod
    def phi(m: int, z) -> np.ndarray:
        """Radial cut-off: 1 for |z| <= m + 1/3, 0 for |z| >= m + 2/3."""
        r = np.abs(np.asarray(z))
        return 1.0 - smooth_step((r - (m + 1 / 3)) * 3.0)

    def tolerance(self, m: int) -> float:
        return self.eps_m[m - 1] / 2 ** (m + 1)

    def admissible_set(self, m: int, grid) -> AdmissibleSet:
        """S_m = {|z| <= m} u [-m-2, m+2] as domains and arcs."""
        if m == 0:
            return AdmissibleSet([], [JordanArc([-2.0, 2.0])], grid)
        return AdmissibleSet(
            [CompactDomain.circle(0, m)],
            [JordanArc([m, m + 2.0]), JordanArc([-(m + 2.0), -m])],
            grid,
        )


def _line_function(f_line, n: int) -> Callable:
    if isinstance(f_line, str):
        f_line = _expr.parse(f_line)
    if isinstance(f_line, _EXPR_TYPES):
        e = f_line
        return lambda t: np.broadcast_to(
            np.asarray(_expr.evaluate(e, np.asarray(t, dtype=complex)), dtype=complex).reshape(len(t), -1),
            (len(t), n),
        ).copy()
    return lambda t: np.asarray(f_line(np.asarray(t, dtype=float)), dtype=complex).reshape(-1, n)


def carleman(
    s: PascaliSolver,
    f_line,
    eps,
    m_max: int = 2,
    basis: FormalPowerBasis | None = None,
    degree: int = 20,
) -> tuple[GridFunction, ApproximationReport]:
    """Windowed Carleman approximation of f on R with error budget eps(z).

    Runs the inductive gluing f_m = phi_m g_m + (1 - phi_m) f_{m-1} for
    m = 1..m_max, each g_m a Mergelyan approximation of f_{m-1} on S_{m-1}.
    """
    t_start = time.perf_counter()
    grid = s.grid
    h = grid.h
    n = s.coeff.n
    sched = CarlemanSchedule.build(eps, m_max)
    if grid.half_width < m_max + 1 + 1 / 3:
        raise ValueError(f"grid half-width must cover |z| <= {m_max + 4 / 3}")
    eps_fn = _eps_callable(eps)
    f_fn = _line_function(f_line, n)
    T = m_max + 2.0
    line_t = np.linspace(-T, T, int(np.ceil(2 * T / h * 8)) + 1)
    f_true = f_fn(line_t)
    f_prev = f_true.copy()
    if basis is None:
        basis = build_formal_powers(s, s.domain.erode(2), degree)
    rep = ApproximationReport(target=f"real line window |t| <= {m_max}", epsilon=float(min(sched.eps_m)))
    steps = []
    g_prev = None
    omega_prev = None
    iterations = 0
    for m in range(1, m_max + 1):
        tol = sched.tolerance(m)
        S = sched.admissible_set(m - 1, grid)
        spline = CubicSpline(line_t, f_prev, axis=0)
        f_arcs = [spline(a.curve(a.params(h)).real) for a in S.arcs]
        dbar_f = GridFunction.zeros(grid, n) if g_prev is not None else None
        try:
            g_m, mrep = mergelyan(
                s, S, g_prev, f_arcs, tol, basis=basis, support=omega_prev, dbar_f=dbar_f
            )
        except StageFailure as e:
            rep.extra["carleman"] = {"steps": steps, "failed_at": m}
            rep.wall_clock = time.perf_counter() - t_start
            raise StageFailure(f"m={m}/{e.stage}", e.best, e.target, rep) from e
        iterations += mrep.iterations
        phi = sched.phi(m, line_t)
        live = phi > 0
        g_line = np.zeros_like(f_prev)
        g_line[live] = mrep.fit.at(line_t[live].astype(complex))
        f_m = phi[:, None] * g_line + (1 - phi[:, None]) * f_prev
        # property iii on the samples of S_{m-1}
        on_line = np.abs(line_t) <= m + 1
        diff = _supn((f_m - f_prev)[on_line])
        if m > 1:
            Kprev = CompactDomain.circle(0, m - 1).mask(grid)
            diff = max(diff, sup_norm(g_m - g_prev, Kprev))
        steps.append(
            {
                "m": m,
                "eps_prev": sched.eps_m[m - 1],
                "tolerance": tol,
                "property_iii": diff,
                "property_iii_ok": bool(diff < tol),
                "tail_bound": sched.eps_m[m] / 2 ** (m + 1),
                "mergelyan": mrep.to_dict(),
            }
        )
        rep.stage(f"m={m}", tol, diff)
        g_prev = g_m
        omega_prev = Mask.disk(grid, 0, sched.omega_radius(m), closed=False)
        f_prev = f_m
    # final pointwise check on the window
    eps_line = eps_fn(line_t.astype(complex))
    gap = np.sqrt(np.sum(np.abs(f_prev - f_true) ** 2, axis=1))
    window = np.abs(line_t) <= m_max
    pointwise = bool(np.all(gap < eps_line))
    omega = Mask.disk(grid, 0, sched.omega_radius(m_max), closed=False)
    w = g_prev.masked(omega)
    rep.error = float(gap[window].max())
    rep.residual = sup_norm(dbar_B(s.coeff, g_prev), omega.erode(1))
    rep.iterations = iterations
    rep.extra["carleman"] = {
        "eps_m": sched.eps_m,
        "steps": steps,
        "pointwise_ok": pointwise,
        "window_ok": bool(np.all(gap[window] < eps_line[window])),
        "max_ratio": float((gap / eps_line).max()),
        "tail_bound": sched.eps_m[m_max] / 2 ** (m_max + 1),
        "telescoping_sum": float(sum(st["property_iii"] for st in steps)),
    }
    rep.samples = {"t": line_t, "f": f_true, "w": f_prev, "eps": eps_line}
    rep.wall_clock = time.perf_counter() - t_start
    if not pointwise:
        raise StageFailure("final", float((gap / eps_line).max()), 1.0, rep)
    return w, rep
