import numpy as np
import pytest

from pascali_lab import CoefficientField, Grid, GridFunction, Mask, bilinear_pairing, dbar_B, dbar_B_adjoint, sample, sup_norm
from pascali_lab.operator import PascaliResidual, conjugate_defect

from conftest import bump


def _random_pair(g, rng, n=1):
    k = rng.integers(1, 4)
    c = (rng.standard_normal((n, 2)) @ [1, 1j])
    w = sample(lambda z: np.stack([np.exp(c[j] * z) * (1 + z.conj() ** k) for j in range(n)], axis=-1), g)
    p = bump(g, rng.uniform(-0.2, 0.2) + 1j * rng.uniform(-0.2, 0.2), rng.uniform(0.5, 0.9))
    phi = GridFunction(g, p.values * (rng.standard_normal(n) + 1j * rng.standard_normal(n)))
    return w, phi


def test_known_solution_exp_2x(vekua, grid256):
    w = sample(lambda z: np.exp(2 * z.real), grid256)
    assert sup_norm(dbar_B(vekua, w), Mask.full(grid256).erode(1)) <= 1e-2


def test_zero_coefficients_reduce_to_dbar(grid256):
    c = CoefficientField.zero()
    assert c.is_zero(grid256)
    w = sample(lambda z: z**2 - 2 * z, grid256)
    assert sup_norm(dbar_B(c, w), Mask.full(grid256).erode(1)) < 1e-10


def test_matrix_coefficients_act_componentwise():
    g = Grid(0, 1, 32)
    c = CoefficientField(2, "[[0, 1], [z, 0]]", "[[i, 0], [0, 0]]")
    w = np.random.default_rng(0).standard_normal(g.shape + (2,)) + 0j
    out = c.apply(g, w)
    assert np.allclose(out[..., 0], w[..., 1] + 1j * w[..., 0])
    assert np.allclose(out[..., 1], g.z * w[..., 0])


@pytest.mark.parametrize("n", [1, 2])
def test_pairing_is_imaginary(n, rng):
    g = Grid(0, 1.25, 128)
    if n == 1:
        c = CoefficientField(1, "z/2", "exp(i*x) - 1")
    else:
        c = CoefficientField(2, "[[0, 1], [x, 0]]", "[[1, z], [0, -1]]")
    for _ in range(3):
        w, phi = _random_pair(g, rng, n)
        p = bilinear_pairing(c, w, phi)
        scale = g.h**2 * np.sum(
            np.abs(phi.values) * np.abs(dbar_B(c, w).values) + np.abs(w.values) * np.abs(dbar_B_adjoint(c, phi).values)
        )
        assert abs(p.real) / scale < 1e-10
        assert p == pytest.approx(conjugate_defect(c, w, phi), abs=1e-10 * scale)


def test_pairing_needs_compact_test_function():
    g = Grid(0, 1, 32)
    c = CoefficientField(1)
    one = GridFunction(g, np.ones(g.shape))
    with pytest.raises(ValueError, match="collar"):
        bilinear_pairing(c, one, one)


def test_dimension_mismatch():
    g = Grid(0, 1, 32)
    with pytest.raises(ValueError, match="dimension"):
        dbar_B(CoefficientField(2), GridFunction(g, np.ones(g.shape)))


def test_nonfinite_coefficients_are_rejected():
    with pytest.raises((ValueError, ArithmeticError)):
        CoefficientField(1, 0, "exp(1000*x)").sampled(Grid(0, 1, 16))


def test_coefficient_cache_and_residual_record(vekua):
    g = Grid(0, 1, 64)
    assert vekua.recheck(g)
    r = PascaliResidual.of(vekua, sample(lambda z: z, g), Mask.disk(g, 0, 0.5))
    assert r.consistent() and r.sup > 0
