import numpy as np
import pytest

from lfdsim.coefficients import build_kernels
from lfdsim.entropy import (
    calibrate_normalization,
    dissipation,
    dissipation_reduced,
    entropy_report,
    fermi_dirac_entropy,
    relative_entropy,
)
from lfdsim.equilibrium import evaluate_equilibrium, fit_fermi_dirac
from lfdsim.grid import make_grid


def brute_dissipation(f, grid):
    """Symmetrised double sum, O(N^6); the self cell has du = 0 and drops out."""
    eps = grid.eps
    g = f * (1 - eps * f)
    grad = np.stack(np.gradient(f, grid.h, edge_order=2))
    u = np.where(g > 0, grad / np.where(g > 0, g, 1), 0).reshape(3, -1)
    gv = g.ravel()
    v = grid.nodes.reshape(3, -1)
    total = 0.0
    for i in range(v.shape[1]):
        z = v[:, i : i + 1] - v
        r2 = np.sum(z * z, axis=0)
        r2[i] = 1.0
        r = np.sqrt(r2)
        du = u[:, i : i + 1] - u
        proj = np.sum(du * du, axis=0) - np.sum(z * du, axis=0) ** 2 / r2
        k = proj / r
        k[i] = 0.0
        total += gv[i] * np.sum(gv * k)
    return 0.5 * total * grid.weight**2 / (8 * np.pi)


def test_dissipation_matches_double_sum(grid8, kernels8, rng):
    f = 0.4 * np.exp(-grid8.speed2 / 3) * (1 + 0.2 * rng.uniform(-1, 1, grid8.shape))
    D, guarded = dissipation(f, kernels8)
    assert guarded == 0
    assert D == pytest.approx(brute_dissipation(f, grid8), rel=1e-10)


def test_dissipation_nonnegative(grid16, kernels16, rng):
    for _ in range(3):
        f = rng.uniform(0, 1, grid16.shape) * np.exp(-grid16.speed2 / 6)
        assert dissipation(f, kernels16)[0] >= -1e-14


def test_dissipation_small_at_equilibrium():
    vals = []
    for N in (16, 32):
        g = make_grid(8.0, N)
        M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), g)
        vals.append(dissipation(M, build_kernels(g))[0])
    assert vals[1] < vals[0] / 8


def test_entropy_values(grid8):
    f = np.full(grid8.shape, 0.5)
    assert fermi_dirac_entropy(grid8, f) == pytest.approx(np.log(0.5) * grid8.N**3 * grid8.weight)
    with pytest.raises(ValueError):
        fermi_dirac_entropy(grid8, np.full(grid8.shape, 1.5))


def test_boltzmann_limit(rng):
    g = make_grid(4.0, 8, 0.0)
    f = rng.uniform(0.1, 3, g.shape)
    assert fermi_dirac_entropy(g, f) == pytest.approx(np.sum(f * np.log(f)) * g.weight)


def test_relative_entropy(grid16):
    M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), grid16)
    assert relative_entropy(grid16, M, M) == 0.0
    f = M * 1.01
    assert relative_entropy(grid16, f, M) > 0


def test_report_and_reduced_form(grid16, kernels16):
    M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), grid16)
    f = M + 0.05 * np.exp(-np.sum((grid16.nodes - np.array([1, 0, 0])[:, None, None, None]) ** 2, axis=0))
    rep = entropy_report(f, M, kernels16)
    assert rep.H < 0 and rep.H_rel > 0 and rep.D > 0
    ratio, chosen = calibrate_normalization(M, kernels16)
    assert chosen == 1.0 and 0.3 < ratio < 1.5
    Dr, _ = dissipation_reduced(f, kernels16, coefficient=chosen)
    assert np.isfinite(Dr)
