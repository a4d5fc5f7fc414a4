"""Command-line scenario runner.

    pascali-lab run <config>... [--out DIR] [--jobs K] [--verbose]
    pascali-lab validate <config>...
    pascali-lab audit <run-dir>...

Exit status: 0 success, 1 configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import expr as _expr
from .approx import AdmissibilityError, StageFailure, carleman, mergelyan
from .config import ConfigError, ScenarioConfig, load_config
from .geometry import validate_admissible
from .grid import GridFunction, Mask, interpolate
from .operator import dbar_B
from .output import emit_csv, emit_json, emit_svg, read_csv, row_norms
from .solver import ConvergenceError, PascaliSolver, build_formal_powers, correct_to_solution, runge_fit

log = logging.getLogger("pascali_lab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


@dataclass
class Outcome:
    report: dict
    points: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    errors: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), complex))
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extra: dict = field(default_factory=dict)
    headline: str = "abs"
    fields: dict = field(default_factory=dict)
    field_mask: np.ndarray | None = None


def _sample_expr(e, grid, n: int) -> GridFunction:
    v = np.asarray(_expr.evaluate(e, grid.z), dtype=complex)
    if v.shape == grid.shape:
        v = np.repeat(v[:, :, None], n, axis=2)
    return GridFunction(grid, v)


def _at_points(e, pts: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(_expr.evaluate(e, pts), dtype=complex)
    if v.shape == pts.shape:
        v = np.repeat(v[:, None], n, axis=1)
    return v.reshape(pts.size, n)


def _solver(cfg: ScenarioConfig) -> PascaliSolver:
    return PascaliSolver.on_disk(
        cfg.coeff, cfg.grid, tol=cfg.tol, max_iter=cfg.max_iter, lam=cfg.regularization
    )


def _fields(w: GridFunction, resid: GridFunction) -> dict:
    return {
        "re": w.values[:, :, 0].real,
        "im": w.values[:, :, 0].imag,
        "residual": np.sqrt(np.sum(np.abs(resid.values) ** 2, axis=2)),
    }


def _node_rows(mask: Mask, diff: GridFunction, resid: GridFunction):
    sel = mask.inside
    return mask.grid.z[sel], diff.values[sel], row_norms(resid.values[sel])


def _task_solve(cfg: ScenarioConfig) -> Outcome:
    s = _solver(cfg)
    phi = _sample_expr(cfg.f, cfg.grid, cfg.n)
    w = s.solve_P(phi)
    resid = dbar_B(cfg.coeff, w)
    region = s.domain.erode(4)
    pts, diff, res = _node_rows(region, phi - w, resid)
    rep = {
        "iterations": s.last_info.iterations,
        "solve_residual": s.last_info.residual,
        "max_correction": float(row_norms(diff).max()),
        "residual": float(res.max()),
    }
    return Outcome(rep, pts, diff, res, headline="residual", fields=_fields(w, resid), field_mask=region.inside)


def _task_correct(cfg: ScenarioConfig) -> Outcome:
    s = _solver(cfg)
    f = _sample_expr(cfg.f, cfg.grid, cfg.n)
    K = cfg.admissible_set().K()
    res = correct_to_solution(s, f, K)
    resid = dbar_B(cfg.coeff, res.w)
    pts, diff, rr = _node_rows(K, f - res.w, resid)
    rep = {
        "iterations": res.iterations,
        "achieved_residual": res.achieved_residual,
        "correction_size": res.correction_size,
        "error": float(row_norms(diff).max()),
    }
    return Outcome(rep, pts, diff, rr, fields=_fields(res.w, resid), field_mask=s.domain.erode(2).inside)


def _basis(cfg: ScenarioConfig, s: PascaliSolver, degree: int):
    return build_formal_powers(s, s.domain.erode(2), degree, center=cfg.basis_center)


def _basis_summary(basis) -> dict:
    return {
        "degree": basis.degree_max,
        "members": len(basis),
        "max_fd_residual": max(m.residual for m in basis.members),
        "max_solve_residual": max(m.solve_residual for m in basis.members),
        "rank_deficient": basis.rank_deficient,
    }


def _task_runge(cfg: ScenarioConfig) -> Outcome:
    s = _solver(cfg)
    f = _sample_expr(cfg.f, cfg.grid, cfg.n)
    K = cfg.admissible_set().K()
    basis = _basis(cfg, s, cfg.degree)
    fit = runge_fit(basis, f, K)
    resid = dbar_B(cfg.coeff, fit.w)
    pts, diff, rr = _node_rows(K, f - fit.w, resid)
    rep = {
        "basis": _basis_summary(basis),
        "condition": fit.condition,
        "error": float(row_norms(diff).max()),
        "residual": float(rr.max()),
    }
    return Outcome(rep, pts, diff, rr, fields=_fields(fit.w, resid), field_mask=s.domain.erode(2).inside)


def _task_mergelyan(cfg: ScenarioConfig) -> Outcome:
    s = _solver(cfg)
    S = cfg.admissible_set()
    h = cfg.grid.h
    f_dom = _sample_expr(cfg.f, cfg.grid, cfg.n)
    exprs = cfg.f_arcs or [cfg.f] * len(cfg.arcs)
    f_arcs = [_at_points(e, a.points(h), cfg.n) for e, a in zip(exprs, S.arcs)]
    eps = float(np.real(_expr.evaluate(cfg.epsilon, 0j)))
    basis = _basis(cfg, s, cfg.degree)
    w, rep = mergelyan(s, S, f_dom if S.domains else None, f_arcs, eps, basis=basis)
    resid = dbar_B(cfg.coeff, w)
    Km = S.K()
    pts, diff, rr = _node_rows(Km, f_dom - w, resid)
    P = S.arc_points()
    if P.size:
        fP = np.concatenate(f_arcs)
        pts = np.concatenate([pts, P])
        diff = np.concatenate([diff, fP - rep.fit.w_at_points])
        rr = np.concatenate([rr, row_norms(interpolate(resid, P))])
    out = rep.to_dict()
    out["basis"] = _basis_summary(basis)
    return Outcome(out, pts, diff, rr, fields=_fields(w, resid), field_mask=s.domain.erode(2).inside)


def _task_carleman(cfg: ScenarioConfig) -> Outcome:
    s = _solver(cfg)
    degree = cfg.degree if "basis" in cfg.raw and "degree" in cfg.raw["basis"] else 20
    basis = _basis(cfg, s, degree)
    w, rep = carleman(s, cfg.f, cfg.epsilon, cfg.m_max, basis=basis)
    line = rep.samples
    win = np.abs(line["t"]) <= cfg.m_max
    t = line["t"][win].astype(complex)
    resid = dbar_B(cfg.coeff, w)
    out = rep.to_dict()
    out["basis"] = _basis_summary(basis)
    omega = Mask.disk(cfg.grid, 0, cfg.m_max + 1 / 3, closed=False)
    return Outcome(
        out,
        t,
        (line["w"] - line["f"])[win],
        row_norms(interpolate(resid, t)),
        extra={"eps": line["eps"][win]},
        fields=_fields(w, resid),
        field_mask=omega.erode(1).inside,
    )


def _task_validate(cfg: ScenarioConfig) -> Outcome:
    rep = validate_admissible(cfg.admissible_set()).to_dict()
    return Outcome(rep)


TASK_RUNNERS = {
    "solve": _task_solve,
    "correct": _task_correct,
    "runge": _task_runge,
    "mergelyan": _task_mergelyan,
    "carleman": _task_carleman,
    "validate": _task_validate,
}


def _out_dir(cfg: ScenarioConfig, out: str | None, multi: bool) -> Path:
    if out is not None:
        base = Path(out)
        return base / cfg.name if multi else base
    if cfg.out_dir is not None:
        d = Path(cfg.out_dir)
        return d if d.is_absolute() or cfg.source is None else cfg.source.parent / d
    return Path("out") / cfg.name


def write_outcome(cfg: ScenarioConfig, res: Outcome, out: Path, status: str) -> dict:
    cols = {"residual": res.residual, **res.extra}
    emit_csv(out / "errors.csv", res.points, res.errors, cols)
    abs_col = row_norms(res.errors)
    column = res.extra.get(res.headline) if res.headline in res.extra else (
        res.residual if res.headline == "residual" else abs_col
    )
    headline = float(np.max(column)) if len(column) else None
    report = {
        "scenario": cfg.name,
        "task": cfg.task,
        "status": status,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.raw,
        "samples": int(len(res.points)),
        "headline": {"column": res.headline, "value": headline},
        "result": res.report,
    }
    emit_json(out / "report.json", report)
    if cfg.heatmaps and res.fields:
        g = cfg.grid
        ext = (
            g.center.real - g.half_width,
            g.center.real + g.half_width,
            g.center.imag - g.half_width,
            g.center.imag + g.half_width,
        )
        for name, fld in res.fields.items():
            emit_svg(fld, out / f"{name}.svg", title=f"{cfg.name}: {name}", extent=ext, mask=res.field_mask)
    return report


def run_scenario(path, out: str | None = None, multi: bool = False) -> tuple[int, str]:
    """Run one configuration file; returns (exit status, message)."""
    t0 = time.perf_counter()
    try:
        cfg = load_config(path)
    except ConfigError as e:
        return EXIT_CONFIG, f"{path}: config error at {e}"
    dest = _out_dir(cfg, out, multi)
    log.info("running %s (task %s) into %s", cfg.name, cfg.task, dest)
    try:
        res = TASK_RUNNERS[cfg.task](cfg)
    except StageFailure as e:
        rep = e.report.to_dict() if e.report is not None else {}
        rep["failure"] = {"stage": e.stage, "best_error": e.best, "target": e.target}
        write_outcome(cfg, Outcome(rep), dest, "failed")
        return EXIT_NUMERIC, f"{path}: numerical failure in stage {e.stage}: best error {e.best:.3e} (target {e.target:.3e})"
    except AdmissibilityError as e:
        write_outcome(cfg, Outcome({"validation": e.report.to_dict()}), dest, "failed")
        return EXIT_NUMERIC, f"{path}: {e}"
    except (ConvergenceError, ArithmeticError) as e:
        write_outcome(cfg, Outcome({"failure": {"stage": "solve", "message": str(e)}}), dest, "failed")
        return EXIT_NUMERIC, f"{path}: numerical failure: {e}"
    except ValueError as e:
        # geometry that does not fit the grid surfaces here
        return EXIT_NUMERIC, f"{path}: numerical failure: {e}"
    report = write_outcome(cfg, res, dest, "ok")
    emit_json(dest / "timing.json", {"wall_clock_seconds": round(time.perf_counter() - t0, 3)})
    for st in res.report.get("stages", []):
        log.info("  stage %-10s budget %.3e achieved %.3e", st["name"], st["budget"], st["achieved"])
    head = report["headline"]
    return EXIT_OK, f"{path}: ok, {head['column']} = {head['value']!r} -> {dest}"


def audit(run_dir) -> tuple[bool, str]:
    """Recompute the headline number of a run from its errors.csv."""
    import json

    run_dir = Path(run_dir)
    report = json.loads((run_dir / "report.json").read_text(encoding="utf-8"))
    cols = read_csv(run_dir / "errors.csv")
    head = report["headline"]
    col = cols.get(head["column"])
    got = float(col.max()) if col is not None and col.size else None
    ok = got == head["value"]
    return ok, f"{run_dir}: {head['column']} recorded {head['value']!r}, recomputed {got!r}"


def _max_workers(jobs: int) -> int:
    cap = os.environ.get("PASCALI_LAB_THREADS")
    if cap:
        try:
            jobs = min(jobs, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, jobs)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pascali-lab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run scenario configurations")
    r.add_argument("configs", nargs="+", metavar="config")
    r.add_argument("--out", metavar="DIR", help="output directory (one subdirectory per config when several)")
    r.add_argument("--jobs", type=int, default=1, metavar="K", help="run up to K configs in parallel")
    r.add_argument("--verbose", "-v", action="store_true")
    v = sub.add_parser("validate", help="check configurations without computing")
    v.add_argument("configs", nargs="+", metavar="config")
    a = sub.add_parser("audit", help="recompute headline errors from errors.csv")
    a.add_argument("dirs", nargs="+", metavar="run-dir")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "validate":
        status = EXIT_OK
        for c in args.configs:
            try:
                cfg = load_config(c)
                print(f"{c}: ok (task {cfg.task}, n={cfg.n}, N={cfg.grid.N})")
            except ConfigError as e:
                print(f"{c}: config error at {e}", file=sys.stderr)
                status = EXIT_CONFIG
        return status
    if args.command == "audit":
        status = EXIT_OK
        for d in args.dirs:
            try:
                ok, msg = audit(d)
            except (OSError, KeyError, ValueError) as e:
                ok, msg = False, f"{d}: cannot audit: {e}"
            print(msg, file=sys.stdout if ok else sys.stderr)
            status = max(status, EXIT_OK if ok else EXIT_CONFIG)
        return status

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    multi = len(args.configs) > 1
    workers = _max_workers(args.jobs)
    if workers == 1 or not multi:
        results = [run_scenario(c, args.out, multi) for c in args.configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_scenario, c, args.out, multi) for c in args.configs]
            results = [f.result() for f in futs]
    status = EXIT_OK
    for code, msg in results:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
