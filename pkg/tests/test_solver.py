import numpy as np
import pytest

from pascali_lab import (
    CoefficientField,
    ConvergenceError,
    Grid,
    GridFunction,
    Mask,
    PascaliSolver,
    build_formal_powers,
    correct_to_solution,
    dbar_B,
    right_inverse_dbar,
    runge_fit,
    sample,
    similarity_diagnostic,
    sup_norm,
)
from pascali_lab.solver import RankWarning, cgls

from conftest import bump


def test_cgls_solves_small_system(rng):
    A = rng.standard_normal((20, 20)) + 5 * np.eye(20)
    x0 = rng.standard_normal(20)
    x, info = cgls(lambda v: A @ v, lambda v: A.T @ v, A @ x0, tol=1e-12, max_iter=200)
    assert info.converged and np.allclose(x, x0, atol=1e-9)


def test_manufactured_round_trip(vekua):
    g = Grid(0, 2.0, 256)
    s = PascaliSolver.on_disk(vekua, g)
    w0 = sample(lambda z: np.exp(-abs(z) ** 2) * (1 + z), g)
    w1 = s.solve_P(s.apply_P(w0))
    assert sup_norm(w1 - w0, Mask.full(g)) <= 1e-6
    assert s.last_info.converged


def test_zero_coefficient_fast_path():
    g = Grid(0, 1, 64)
    s = PascaliSolver.on_disk(CoefficientField(1), g)
    phi = sample(lambda z: z, g)
    assert np.array_equal(s.solve_P(phi).values, phi.values)
    assert s.last_info.iterations == 0


def test_nonconvergence_is_reported(vekua):
    g = Grid(0, 1, 64)
    s = PascaliSolver.on_disk(vekua, g, max_iter=1, tol=1e-14)
    with pytest.raises(ConvergenceError):
        s.solve_P(sample(lambda z: z, g))


def test_right_inverse_contract(vekua):
    g = Grid(0, 1.5, 256)
    s = PascaliSolver.on_disk(vekua, g)
    f = bump(g, 0.1, 1.2) * sample(lambda z: np.cos(3 * z), g)
    u = right_inverse_dbar(s, f)
    assert sup_norm(dbar_B(vekua, u) - f, s.domain.erode(2)) <= 5e-2


def test_correction_of_approximate_solution(vekua):
    g = Grid(0, 1.75, 256)
    s = PascaliSolver.on_disk(vekua, g)
    omega = Mask.disk(g, 0, 1.0)
    # a perturbed solution; the correction should bring the residual down
    g0 = sample(lambda z: np.exp(2 * z.real) + 0.05 * z.conj() ** 2, g)
    res = correct_to_solution(s, g0, omega)
    before = sup_norm(dbar_B(vekua, g0), omega.erode(2))
    assert res.achieved_residual < 0.1 * before
    with pytest.raises(ValueError):
        correct_to_solution(s, g0, Mask.full(g))


def test_formal_powers_are_solutions(vekua):
    g = Grid(0, 1.25, 256)
    s = PascaliSolver.on_disk(vekua, g)
    B = build_formal_powers(s, s.domain.erode(2), 4)
    assert len(B.members) == 2 * 5
    for m in B.members:
        assert m.residual < 5e-2 and m.solve_residual < 1e-6
        assert sup_norm(m.w, B.domain) == pytest.approx(1.0)
    assert B.truncated(2).degree_max == 2 and len(B.truncated(2).members) == 6


def test_runge_fit_needs_runge_set():
    g = Grid(0, 1.25, 64)
    s = PascaliSolver.on_disk(CoefficientField(1), g)
    B = build_formal_powers(s, s.domain.erode(2), 3)
    ring = Mask(g, (np.abs(g.z) <= 1) & (np.abs(g.z) >= 0.5))
    with pytest.raises(ValueError, match="Runge"):
        runge_fit(B, sample(lambda z: 1 / z, g), ring)


def test_runge_fit_warns_on_rank_deficiency():
    g = Grid(0, 1.25, 64)
    s = PascaliSolver.on_disk(CoefficientField(1), g)
    B = build_formal_powers(s, s.domain.erode(2), 2)
    one = np.zeros(g.shape, bool)
    one[32, 32] = True
    # two real equations for six real unknowns
    with pytest.warns(RankWarning):
        fit = runge_fit(B, sample(lambda z: z, g), Mask(g, one))
    assert fit.err < 1e-6


def test_classical_runge(grid256):
    s = PascaliSolver.on_disk(CoefficientField(1), grid256)
    B = build_formal_powers(s, s.domain.erode(2), 10)
    fit = runge_fit(B, sample(lambda z: 1 / (z - 2), grid256), Mask.disk(grid256, 0, 1.0))
    assert fit.err <= 6e-4


def test_similarity_diagnostic(vekua, grid256):
    w = sample(lambda z: np.exp(2 * z.real), grid256)
    assert similarity_diagnostic(vekua, w, Mask.disk(grid256, 0, 1.0)) <= 5e-2
