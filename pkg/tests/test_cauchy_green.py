import numpy as np
import pytest

from pascali_lab import CauchyGreenOperator, Grid, GridFunction, Mask, cg_apply, cg_apply_adjoint, cg_residual, sample, sup_norm
from pascali_lab.cauchy_green import kernel_table
from pascali_lab.grid import interpolate

from conftest import bump
from oracles import direct_cauchy_green


def test_fft_matches_direct_sum(rng):
    g = Grid(0.2 - 0.1j, 1.0, 32)
    op = CauchyGreenOperator(g)
    dens = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    fast = cg_apply(op, GridFunction(g, dens)).values[..., 0]
    slow = direct_cauchy_green(g, dens)
    assert np.abs(fast - slow).max() <= 1e-12 * np.abs(slow).max()


def test_kernel_self_offset_is_zero():
    g = Grid(0, 1, 16)
    k = kernel_table(g)
    assert k.shape == (32, 32) and k[0, 0] == 0


def test_domain_masks_the_density():
    g = Grid(0, 1.25, 64)
    D = Mask.disk(g, 0, 1.0)
    op = CauchyGreenOperator(g, D)
    a = op(GridFunction(g, np.ones(g.shape)))
    b = CauchyGreenOperator(g)(GridFunction(g, D.inside.astype(float)))
    assert np.allclose(a.values, b.values)


def test_adjoint_identity(rng):
    g = Grid(0, 1.25, 64)
    op = CauchyGreenOperator(g, Mask.disk(g, 0, 1.0))
    for _ in range(3):
        u = GridFunction(g, rng.standard_normal(g.shape + (2,)) + 1j * rng.standard_normal(g.shape + (2,)))
        v = GridFunction(g, rng.standard_normal(g.shape + (2,)) + 1j * rng.standard_normal(g.shape + (2,)))
        lhs = np.real(np.vdot(v.values, cg_apply(op, u).values))
        rhs = np.real(np.vdot(cg_apply_adjoint(op, v).values, u.values))
        assert lhs == pytest.approx(rhs, rel=1e-10)


def test_right_inverse_of_dbar_on_smooth_density():
    g = Grid(0, 1.25, 256)
    op = CauchyGreenOperator(g, Mask.disk(g, 0, 1.0))
    assert cg_residual(op, bump(g, 0, 1.0)) < 5e-2


def test_polynomial_density():
    # inside the unit disk T(zbar) = zbar^2 / 2: the boundary Cauchy integral of 1/(2 zeta^2) vanishes
    g = Grid(0, 1.25, 256)
    D = Mask.disk(g, 0, 1.0)
    u = CauchyGreenOperator(g, D)(sample(np.conj, g))
    exact = sample(lambda z: np.conj(z) ** 2 / 2, g)
    assert sup_norm(u - exact, Mask.disk(g, 0, 0.8)) < 2e-2


def test_grid_mismatch_is_rejected():
    g1, g2 = Grid(0, 1, 32), Grid(0, 2, 32)
    with pytest.raises(ValueError):
        cg_apply(CauchyGreenOperator(g1), GridFunction(g2, np.ones(g2.shape)))


def test_complex_linearity(rng):
    g = Grid(0, 1, 64)
    op = CauchyGreenOperator(g, Mask.disk(g, 0, 0.9))
    g1 = GridFunction(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    g2 = GridFunction(g, rng.standard_normal(g.shape))
    a, b = 0.3 - 2j, 1.5j
    lhs = op(g1 * a + g2 * b).values
    rhs = a * op(g1).values + b * op(g2).values
    assert np.abs(lhs - rhs).max() <= 1e-13 * np.abs(rhs).max()


def test_point_values_of_T1():
    g = Grid(0, 1.25, 256)
    u = CauchyGreenOperator(g, Mask.disk(g, 0, 1.0))(GridFunction(g, np.ones(g.shape)))
    v = interpolate(u, np.array([0.3 + 0.4j, 0]))[:, 0]
    assert abs(v[0] - (0.3 - 0.4j)) <= 2e-2 and abs(v[1]) <= 2e-2


def test_no_blowup_at_the_domain_edge():
    sups = []
    for N in (64, 128, 256):
        g = Grid(0, 1.25, N)
        D = Mask.disk(g, 0, 1.0)
        u = CauchyGreenOperator(g, D)(GridFunction(g, np.ones(g.shape)))
        collar = D.dilate(2) & ~D.erode(2)
        sups.append(sup_norm(u, collar))
    assert max(sups) < 1.05 and max(sups) - min(sups) < 0.05
