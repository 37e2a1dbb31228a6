import numpy as np
import pytest
from scipy import integrate

from lfdsim.coefficients import (
    CELL_AVG_INV_R,
    A_at_points,
    VacuousFloorWarning,
    a_at_points,
    apply_A_vector,
    build_kernels,
    compute_A,
    compute_coefficients,
    compute_potentials,
    ellipticity_floor,
    node_eigenvalues,
    pauli_source,
    projection_kernel,
)
from lfdsim.grid import make_grid


def test_cell_average_constant():
    # mean of 1/|z| on the unit cube, reduced to a smooth 2-D integral over
    # the pyramid where |x| is the largest coordinate
    val, _ = integrate.dblquad(lambda t, s: 1.0 / np.sqrt(1 + s * s + t * t), 0, 1, 0, 1, epsabs=1e-14)
    assert CELL_AVG_INV_R == pytest.approx(3.0 * val, rel=1e-13)


def test_projection_kernel_annihilates_offset(rng):
    z = rng.normal(size=(3, 5))
    K = projection_kernel(z)
    assert np.allclose(np.einsum("dei,ei->di", K, z), 0, atol=1e-14)
    r = np.linalg.norm(z, axis=0)
    assert np.allclose(K[0, 0] + K[1, 1] + K[2, 2], 2 / r)


def test_A_is_symmetric_psd_for_nonnegative_source(grid16, kernels16, rng):
    g = rng.uniform(0, 1, grid16.shape) * np.exp(-grid16.speed2 / 4)
    A = compute_A(g, kernels16)
    assert np.array_equal(A, np.swapaxes(A, 0, 1))
    assert node_eigenvalues(A)[..., 0].min() > 0


def test_trace_identity(grid16, kernels16, rng):
    g = rng.uniform(0, 1, grid16.shape)
    A = compute_A(g, kernels16)
    a, _ = compute_potentials(g, kernels16)
    assert np.max(np.abs(A[0, 0] + A[1, 1] + A[2, 2] - a)) <= 1e-12 * np.max(a)


def test_linearity(kernels8, grid8, rng):
    f, g = rng.uniform(0, 1, (2,) + grid8.shape)
    lhs = compute_A(2 * f - 3 * g, kernels8)
    rhs = 2 * compute_A(f, kernels8) - 3 * compute_A(g, kernels8)
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_apply_A_vector_matches_componentwise(kernels8, grid8, rng):
    V = rng.normal(size=(3,) + grid8.shape)
    out = apply_A_vector(V, kernels8)
    # column e of A applied to V_e, assembled from compute_A
    expect = sum(compute_A(V[e], kernels8)[:, e] for e in range(3))
    assert np.allclose(out, expect, atol=1e-13)


def test_grad_a_of_gaussian_far_field():
    # outside a compact source grad a -> -mass v/(4 pi |v|^3)
    g = make_grid(8.0, 32)
    f = np.exp(-4 * g.speed2)
    mass = np.sum(f) * g.weight
    _, grad = compute_potentials(f, build_kernels(g))
    far = g.speed2 > 25
    v = g.nodes[:, far]
    expect = -mass * v / (4 * np.pi * np.sqrt(g.speed2[far]) ** 3)
    assert np.max(np.abs(grad[:, far] - expect)) < 1e-3 * np.max(np.abs(expect))


def test_point_evaluation_matches_grid(grid16, kernels16):
    # with the source zeroed at node i the self-cell term drops out, so the
    # direct sum just off that node must reproduce the FFT value there
    i = (3, 5, 11)
    g = np.exp(-grid16.speed2)
    g[i] = 0.0
    p = grid16.nodes[(slice(None),) + i] + 1e-9 * grid16.h
    A_p = A_at_points(g, grid16, p)[0]
    a_p = a_at_points(g, grid16, p)[0]
    assert np.allclose(A_p, compute_A(g, kernels16)[(slice(None), slice(None)) + i], rtol=1e-7)
    assert a_p == pytest.approx(compute_potentials(g, kernels16)[0][i], rel=1e-7)


def test_pauli_source_and_coefficients(grid8, kernels8, rng):
    f = rng.uniform(0, 1, grid8.shape)
    assert np.allclose(pauli_source(f, 1.0), f - f * f)
    c = compute_coefficients(f, kernels8, with_potential=True)
    assert np.allclose(c.A, compute_A(f * (1 - f), kernels8))
    assert c.a.shape == grid8.shape and c.grad_a.shape == (3,) + grid8.shape


def test_vacuous_floor_warns(grid8, kernels8):
    with pytest.warns(VacuousFloorWarning):
        assert ellipticity_floor(np.ones(grid8.shape), kernels8) == 0.0


def test_shape_mismatch(kernels8):
    with pytest.raises(ValueError):
        compute_A(np.zeros((4, 4, 4)), kernels8)
