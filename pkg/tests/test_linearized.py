import numpy as np
import pytest

from lfdsim.grid import make_grid
from lfdsim.linearized import (
    apply_K,
    apply_L,
    apply_Lambda,
    build_context,
    collision_operator,
    estimate_gap,
    gamma2,
    gamma3,
    inner_m,
    nonlinear_consistency,
    one_sided_divergence,
    one_sided_gradient,
    project_out_nullspace,
    rayleigh,
)


@pytest.fixture(scope="module")
def ctx():
    return build_context(make_grid(6.0, 16, 1.0))


def smooth_bump(grid, c=(0.7, -0.3, 0.2)):
    v = grid.nodes - np.asarray(c)[:, None, None, None]
    return np.exp(-0.5 * np.sum(v * v, axis=0)) * (1 + 0.3 * grid.nodes[0])


@pytest.mark.parametrize("side", [1, -1])
def test_divergence_is_minus_adjoint(side, rng):
    h = rng.normal(size=(8, 8, 8))
    F = rng.normal(size=(3, 8, 8, 8))
    lhs = np.sum(one_sided_gradient(h, 0.3, side) * F)
    rhs = -np.sum(h * one_sided_divergence(F, 0.3, side))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_splitting(ctx, rng):
    h = rng.normal(size=ctx.grid.shape)
    diff = apply_Lambda(h, ctx, k=2, xi=0.7) - apply_K(h, ctx, k=2, xi=0.7)
    assert np.max(np.abs(diff + apply_L(h, ctx))) <= 1e-12 * np.max(np.abs(apply_L(h, ctx)))


def test_symmetric_and_nonpositive(ctx, rng):
    x, y = rng.normal(size=(2,) + ctx.grid.shape)
    Lx, Ly = apply_L(x, ctx), apply_L(y, ctx)
    assert inner_m(ctx, Lx, y) == pytest.approx(inner_m(ctx, x, Ly), rel=1e-10)
    assert inner_m(ctx, Lx, x) <= 0


def test_projection(ctx, rng):
    h = rng.normal(size=ctx.grid.shape)
    p = project_out_nullspace(h, ctx)
    assert np.allclose(project_out_nullspace(p, ctx), p, atol=1e-12)
    for b in ctx.invariants:
        assert abs(inner_m(ctx, p, b.reshape(ctx.grid.shape))) < 1e-12


def test_rayleigh_positive_off_invariants(ctx):
    h = project_out_nullspace(smooth_bump(ctx.grid), ctx)
    num, den = rayleigh(h, ctx)
    assert num > 0 and den > 0


def test_expansion_terms_scale(ctx):
    h = smooth_bump(ctx.grid)
    assert np.allclose(gamma2(2 * h, ctx), 4 * gamma2(h, ctx))
    assert np.allclose(gamma3(2 * h, ctx), 8 * gamma3(h, ctx))


def test_consistency_exact_expansion(ctx):
    rep = nonlinear_consistency(smooth_bump(ctx.grid), 1e-2, ctx)
    assert rep.full < 1e-12 < rep.quadratic < rep.linear


def test_collision_operator_conserves_mass(ctx):
    f = ctx.M + 0.02 * smooth_bump(ctx.grid)
    Tf = collision_operator(f, ctx.kernels)
    assert abs(np.sum(Tf)) < 1e-3 * np.sum(np.abs(Tf))


def test_consistency_rejects_inadmissible(ctx):
    with pytest.raises(ValueError):
        nonlinear_consistency(np.full(ctx.grid.shape, 1e3), 1.0, ctx)


def test_gap_small_grid(ctx):
    est = estimate_gap(ctx, seeds=2, iters=40)
    assert est.estimate > 0 and len(est.per_seed_values) == 2
    assert est.to_dict()["seeds"] == 2
