"""Acceptance criteria at desk scale (N = 256).

Each test prints one PASS/FAIL line with the measured value, the threshold
and the wall-clock time, which must stay under 60 s per criterion. The
lines are repeated in the pytest summary. Run on its own with

    python3 -m pytest tests/test_acceptance.py -v
"""

import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from pascali_lab import (
    AdmissibleSet,
    CauchyGreenOperator,
    CoefficientField,
    CompactDomain,
    Grid,
    GridFunction,
    JordanArc,
    Mask,
    PascaliSolver,
    bilinear_pairing,
    build_formal_powers,
    cg_apply,
    cg_residual,
    dbar_B,
    dbar_B_adjoint,
    right_inverse_dbar,
    runge_fit,
    sample,
    similarity_diagnostic,
    sup_norm,
    validate_admissible,
)
from pascali_lab.cli import run_scenario
from pascali_lab.geometry import bounded_complement_components
from pascali_lab.output import read_csv

from conftest import ACCEPTANCE, bump
from oracles import bfs_bounded_components, direct_cauchy_green

SCENARIOS = Path(__file__).parents[1] / "scenarios"
TIME_LIMIT = 60.0
VEKUA = CoefficientField(1, 0, -1)


@pytest.fixture(autouse=True)
def clock(request):
    request.node.t0 = time.perf_counter()


def record(request, k: int, title: str, ok: bool, detail: str):
    elapsed = time.perf_counter() - request.node.t0
    ok = bool(ok) and elapsed <= TIME_LIMIT
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {title}: {detail} [{elapsed:.1f} s]"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


@pytest.fixture(scope="session")
def first_runs(tmp_path_factory):
    """First CLI run of each example scenario, shared by the end-to-end criteria."""
    base = tmp_path_factory.mktemp("first")
    cache = {}

    def get(stem):
        if stem not in cache:
            code, msg = run_scenario(SCENARIOS / f"{stem}.yaml", str(base / stem))
            cache[stem] = (code, msg, base / stem)
        return cache[stem]

    return get


def test_criterion_01_cauchy_green_identity(request):
    errs = {}
    for N in (128, 256):
        g = Grid(0, 1.25, N)
        u = CauchyGreenOperator(g, Mask.disk(g, 0, 1.0))(GridFunction(g, np.ones(g.shape)))
        errs[N] = sup_norm(u - GridFunction(g, g.z.conj()), Mask.disk(g, 0, 0.8))
    g = Grid(0, 1.25, 64)
    D = Mask.disk(g, 0, 1.0)
    fast = CauchyGreenOperator(g, D)(GridFunction(g, np.ones(g.shape))).values[..., 0]
    slow = direct_cauchy_green(g, np.ones(g.shape), D.inside)
    oracle = np.abs(fast - slow).max() / np.abs(slow).max()
    factor = errs[128] / errs[256]
    ok = errs[256] <= 2e-2 and factor >= 1.5 and oracle <= 1e-10
    record(
        request, 1, "T(1) = conj(z) on the unit disk",
        ok, f"err(256) = {errs[256]:.3e} <= 2e-2, err(128)/err(256) = {factor:.2f} >= 1.5, "
        f"direct-sum oracle at N=64 {oracle:.1e}",
    )


def test_criterion_02_fft_matches_direct_sum(request):
    rng = np.random.default_rng(2)
    g = Grid(0, 1.0, 64)
    op = CauchyGreenOperator(g)
    worst = 0.0
    for _ in range(5):
        dens = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
        fast = cg_apply(op, GridFunction(g, dens)).values[..., 0]
        slow = direct_cauchy_green(g, dens)
        worst = max(worst, np.abs(fast - slow).max() / np.abs(slow).max())
    record(request, 2, "FFT convolution vs direct sum", worst <= 1e-10, f"relative sup {worst:.2e} <= 1e-10 (5 densities, N=64)")


# densities smooth on the whole plane: compactly supported inside the unit disk
SMOOTH_SUITE = {
    "bump(r=0.5)": lambda g: bump(g, 0, 0.5),
    "bump*cos(3z)": lambda g: bump(g, 0.1, 0.9) * sample(lambda z: np.cos(3 * z), g),
    "bump*exp(2x)": lambda g: bump(g, 0, 0.9) * sample(lambda z: np.exp(2 * z.real), g),
    "bump*conj(z)^2": lambda g: bump(g, 0.2j, 0.7) * sample(lambda z: np.conj(z) ** 2, g),
    "bump*(1+z)": lambda g: bump(g, -0.1, 0.8) * sample(lambda z: 1 + z, g),
}


def test_criterion_03_dbar_inverse(request):
    table, plateau = {}, {}
    for N in (64, 128, 256):
        g = Grid(0, 1.25, N)
        op = CauchyGreenOperator(g, Mask.disk(g, 0, 1.0))
        table[N] = {name: cg_residual(op, fn(g)) for name, fn in SMOOTH_SUITE.items()}
        # the indicator of the disk jumps at the boundary, so it is checked
        # against the bound only: the 2-cell band keeps its error at O(1)
        plateau[N] = cg_residual(op, GridFunction(g, np.ones(g.shape)))
    worst = max(table[256].values())
    decreasing = all(table[64][k] > table[128][k] > table[256][k] for k in SMOOTH_SUITE)
    small_bump = table[256]["bump(r=0.5)"] <= 1e-2
    detail = ", ".join(f"{k}: {table[64][k]:.1e}/{table[128][k]:.1e}/{table[256][k]:.1e}" for k in SMOOTH_SUITE)
    record(
        request, 3, "cg_residual on the smooth suite",
        worst <= 5e-2 and decreasing and small_bump and plateau[256] <= 5e-2,
        f"max at N=256 {worst:.3e} <= 5e-2, decreasing {decreasing}, N=64/128/256 [{detail}]; "
        f"indicator of the disk {plateau[64]:.2e}/{plateau[128]:.2e}/{plateau[256]:.2e} <= 5e-2 (not refining)",
    )


def test_criterion_04_known_solution(request):
    g = Grid(0, 1.25, 256)
    w = sample(lambda z: np.exp(2 * z.real), g)
    r = sup_norm(dbar_B(VEKUA, w), Mask.full(g).erode(1))
    record(request, 4, "dbar_B residual of exp(2x), B1=0, B2=-1", r <= 1e-2, f"{r:.3e} <= 1e-2")


def test_criterion_05_adjoint_identity(request):
    rng = np.random.default_rng(5)
    g = Grid(0, 1.25, 256)
    c = CoefficientField(1, "z/2 + 0.3*i", "exp(i*x) - 1")
    worst = 0.0
    for _ in range(10):
        a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        k = int(rng.integers(1, 4))
        w = sample(lambda z: np.exp(a * z) + b * np.conj(z) ** k, g)
        phi = bump(g, complex(*rng.uniform(-0.2, 0.2, 2)), rng.uniform(0.5, 0.9))
        phi = phi * complex(*rng.standard_normal(2))
        p = bilinear_pairing(c, w, phi)
        scale = g.h**2 * np.sum(
            np.abs(phi.values * dbar_B(c, w).values) + np.abs(w.values * dbar_B_adjoint(c, phi).values)
        )
        worst = max(worst, abs(p.real) / scale)
    record(request, 5, "Re of the bilinear pairing", worst <= 1e-3, f"max scale-normalized |Re| {worst:.2e} <= 1e-3 (10 pairs)")


def test_criterion_06_manufactured_round_trip(request):
    g = Grid(0, 2.0, 256)
    s = PascaliSolver.on_disk(VEKUA, g)
    w0 = sample(lambda z: np.exp(-np.abs(z) ** 2) * (1 + z), g)
    w1 = s.solve_P(s.apply_P(w0))
    err = sup_norm(w1 - w0, Mask.full(g))
    record(request, 6, "solve_P(apply_P(w0)) = w0", err <= 1e-6, f"sup error {err:.2e} <= 1e-6 ({s.last_info.iterations} iterations)")


def test_criterion_07_right_inverse(request):
    rng = np.random.default_rng(7)
    g = Grid(0, 1.5, 256)
    s = PascaliSolver.on_disk(VEKUA, g)
    core = s.domain.erode(2)
    worst = 0.0
    for _ in range(5):
        c = rng.standard_normal((3, 2)) @ [1, 1j]
        a = rng.uniform(-1, 1, (3, 2)) @ [1, 1j]
        f = sample(lambda z: sum(c[j] * np.exp(a[j] * z - np.abs(z - a[j] / 2) ** 2) for j in range(3)), g)
        u = right_inverse_dbar(s, f)
        worst = max(worst, sup_norm(dbar_B(VEKUA, u) - f, core))
    record(request, 7, "dbar_B(right_inverse_dbar(g)) = g on D", worst <= 5e-2, f"max residual {worst:.3e} <= 5e-2 (5 random g)")


def test_criterion_08_classical_runge(request):
    g = Grid(0, 1.25, 256)
    s = PascaliSolver.on_disk(CoefficientField(1), g)
    B = build_formal_powers(s, s.domain.erode(2), 10)
    fit = runge_fit(B, sample(lambda z: 1 / (z - 2), g), Mask.disk(g, 0, 1.0))
    record(request, 8, "B=0 degree-10 fit of 1/(z-2) on the unit disk", fit.err <= 6e-4, f"sup error {fit.err:.3e} <= 6e-4")


def test_criterion_09_formal_power_runge(request):
    g = Grid(0, 1.25, 256)
    s = PascaliSolver.on_disk(VEKUA, g)
    B = build_formal_powers(s, s.domain.erode(2), 12)
    f = sample(lambda z: np.exp(2 * z.real), g)
    K = Mask(g, (np.abs(g.z) <= 1) & (g.z.imag >= 0))
    errs = [runge_fit(B.truncated(d), f, K).err for d in range(13)]
    mono = all(b <= a for a, b in zip(errs, errs[1:]))
    record(
        request, 9, "formal-power fit of exp(2x) on the half-disk",
        mono and errs[12] <= 1e-2,
        f"nonincreasing {mono}, degree 12 error {errs[12]:.3e} <= 1e-2; by degree "
        + " ".join(f"{e:.1e}" for e in errs),
    )


def test_criterion_10_mergelyan_end_to_end(request, first_runs):
    code, msg, out = first_runs("mergelyan_e2x")
    report = json.loads((out / "report.json").read_text())
    res = report["result"]
    cols = read_csv(out / "errors.csv")
    err = float(cols["abs"].max())
    ok = code == 0 and err <= 0.1 and res["residual"] <= 2e-2
    record(
        request, 10, "disk + segment, f = exp(2x), eps = 0.1",
        ok, f"sup error on S {err:.3e} <= 0.1, residual {res['residual']:.3e} <= 2e-2, stages "
        + " ".join(f"{st['name']}={st['achieved']:.1e}/{st['budget']:.1e}" for st in res["stages"]),
    )


def test_criterion_11_carleman_end_to_end(request, first_runs):
    code, msg, out = first_runs("carleman_e2t")
    res = json.loads((out / "report.json").read_text())["result"]
    c = res["carleman"]
    cols = read_csv(out / "errors.csv")
    pointwise = bool(np.all(cols["abs"] < cols["eps"]))
    prop = [(st["m"], st["property_iii"], st["eps_prev"] / 2 ** (st["m"] + 1)) for st in c["steps"]]
    prop_ok = all(v < bound for _, v, bound in prop)
    record(
        request, 11, "windowed Carleman, f = exp(2t), eps = 0.2, m_max = 2",
        code == 0 and pointwise and c["pointwise_ok"] and prop_ok,
        f"max |w - f| / eps on the window {np.max(cols['abs'] / cols['eps']):.3e} < 1, property iii "
        + ", ".join(f"m={m}: {v:.2e} < {b:.2e}" for m, v, b in prop),
    )


def test_criterion_12_admissibility_validator(request):
    g = Grid(0, 2.5, 256)
    ann = validate_admissible(AdmissibleSet([CompactDomain.annulus(0, 0.7, 1.5)], [], g))
    seg = validate_admissible(AdmissibleSet([CompactDomain.circle(0, 1)], [JordanArc([1.0, 2.0])], g))
    agree = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        S = ndimage.gaussian_filter(rng.standard_normal((64, 64)), rng.uniform(1.0, 3.0)) > rng.uniform(-0.1, 0.1)
        amb = np.ones_like(S)
        if seed % 2:
            ii, jj = np.mgrid[:64, :64]
            amb = (ii - 31.5) ** 2 + (jj - 31.5) ** 2 <= rng.uniform(20, 32) ** 2
        fast = sorted(c[2] for c in bounded_complement_components(S, amb))
        agree += fast == bfs_bounded_components(S, amb)
    ok = (not ann.runge) and seg.ok and agree == 20
    record(
        request, 12, "admissibility validator",
        ok, f"annulus Runge={ann.runge} (want False), disk+segment ok={seg.ok} (want True), oracle agreement {agree}/20",
    )


def test_criterion_13_similarity(request):
    g = Grid(0, 1.25, 256)
    w = sample(lambda z: np.exp(2 * z.real), g)
    r = similarity_diagnostic(VEKUA, w, Mask.disk(g, 0, 1.0))
    record(request, 13, "dbar of the holomorphic factor of exp(2x)", r <= 5e-2, f"{r:.3e} <= 5e-2")


def test_criterion_14_determinism(request, first_runs, tmp_path):
    stems = sorted(p.stem for p in SCENARIOS.glob("*.yaml"))
    t_first = time.perf_counter()
    firsts = {s: first_runs(s) for s in stems}
    request.node.t0 += time.perf_counter() - t_first  # first runs belong to their own criteria
    same, compared = [], 0
    for s in stems:
        code, _, a = firsts[s]
        code2, _, b = run_scenario(SCENARIOS / f"{s}.yaml", str(tmp_path / s)) + (tmp_path / s,)
        files = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".json") and p.name != "timing.json")
        compared += len(files)
        same.append(code == code2 and all((a / f).read_bytes() == (b / f).read_bytes() for f in files))
    record(
        request, 14, "byte-identical reruns of every example scenario",
        all(same), f"{sum(same)}/{len(stems)} scenarios identical, {compared} CSV/JSON files compared",
    )


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
