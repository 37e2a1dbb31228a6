import numpy as np
import pytest
import scipy.sparse as sp

from lfdsim.coefficients import build_kernels
from lfdsim.equilibrium import evaluate_equilibrium, fit_fermi_dirac
from lfdsim.grid import make_grid, moments
from lfdsim.stepper import (
    FluxCorrection,
    PicardError,
    SolverError,
    Stencil,
    StepConfig,
    Stepper,
    assemble_diffusion,
    drift_divergence,
    element_average,
    lagged_coefficients,
    limit_fluxes,
    pcg,
)


def neumann_laplacian(N):
    e = np.ones(N)
    T = sp.diags([-e[:-1], 2 * e, -e[:-1]], [-1, 0, 1]).tolil()
    T[0, 0] = T[-1, -1] = 1
    I = sp.identity(N)
    return (sp.kron(sp.kron(T, I), I) + sp.kron(sp.kron(I, T), I) + sp.kron(sp.kron(I, I), T)).toarray()


def test_isotropic_diffusion_is_seven_point_laplacian():
    N, h = 6, 0.5
    A = np.zeros((3, 3, N + 1, N + 1, N + 1))
    for d in range(3):
        A[d, d] = 1.0
    S = Stencil(assemble_diffusion(A, h)).to_dense()
    assert np.allclose(S, h * neumann_laplacian(N), atol=1e-14)


def test_anisotropic_stencil_structure(grid8, kernels8):
    M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), grid8)
    c = lagged_coefficients(M, kernels8)
    S = Stencil(assemble_diffusion(element_average(c.A), grid8.h)).to_dense()
    assert np.allclose(S, S.T, atol=1e-15)
    assert np.allclose(S.sum(axis=0), 0, atol=1e-14)
    assert np.linalg.eigvalsh(S).min() > -1e-13
    low = Stencil(FluxCorrection(assemble_diffusion(element_average(c.A), grid8.h)).low_bands).to_dense()
    off = low - np.diag(np.diag(low))
    assert off.max() <= 0 and np.allclose(low.sum(axis=0), 0, atol=1e-14)


def test_drift_is_conservative(grid8, rng):
    div = drift_divergence(rng.normal(size=(3,) + grid8.shape), rng.uniform(0, 0.25, grid8.shape), grid8.h)
    assert abs(div.sum()) < 1e-14


def test_limiter_respects_budgets(rng):
    n = 50
    base = rng.uniform(0, 1, n)
    cap = np.full(n, 1.2)
    rows = rng.integers(0, n, 200)
    cols = (rows + rng.integers(1, n, 200)) % n
    pairs = [((rows[k],), (cols[k],), np.array(rng.normal(scale=2.0))) for k in range(200)]
    out = limit_fluxes(pairs, base, cap)
    assert abs(out.sum()) < 1e-12
    assert np.all(base + out >= -1e-14) and np.all(base + out <= cap + 1e-14)


def test_pcg(rng):
    n = 40
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T + n * np.eye(n)
    b = rng.normal(size=n)
    x, it, res = pcg(lambda y: A @ y, b, np.diag(A), np.zeros(n), 1e-12, 200)
    assert np.allclose(A @ x, b, atol=1e-9) and res <= 1e-12
    with pytest.raises(SolverError):
        pcg(lambda y: A @ y, b, np.diag(A), np.zeros(n), 1e-14, 1)


@pytest.mark.parametrize(
    "kw", [{"tau": -1.0}, {"delta1": -1.0}, {"delta2": 1.0, "m_loc": 1.5}, {"lin_tol": 0}, {"picard_max": 0}]
)
def test_step_config_validation(kw):
    with pytest.raises(ValueError):
        StepConfig(**kw)


def test_default_tau(grid16):
    assert StepConfig().resolved(grid16).tau == grid16.h / 2


def test_equilibrium_step(grid16, kernels16):
    M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), grid16)
    f, info = Stepper(grid16, kernels16, StepConfig()).picard_step(M)
    assert np.max(np.abs(f - M)) < 5e-3 * M.max()
    assert info.overshoot == 0 and info.mass_defect < 1e-10
    assert moments(grid16, f).mass == pytest.approx(moments(grid16, M).mass, rel=1e-10)


def test_run_bookkeeping(grid16, kernels16):
    M = evaluate_equilibrium(fit_fermi_dirac(1, np.zeros(3), 1.5, 1.0), grid16)
    seen = []
    tr = Stepper(grid16, kernels16, StepConfig(tau=0.25)).run(
        M, 1.0, cadence=2, callback=lambda k, f, traj: seen.append(k)
    )
    assert tr.steps == 4 and seen == [1, 2, 3, 4]
    assert list(tr.column("t")) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert tr.times == [0.0, 0.5, 1.0] and len(tr.fields) == 3
    assert np.array_equal(tr.fields[-1], tr.final)


def test_picard_failure_reported(grid16, kernels16):
    f = np.where(grid16.speed2 <= 4, 0.9, 0.0)
    cfg = StepConfig(tau=5.0, picard_max=1, picard_tol=1e-14)
    with pytest.raises(PicardError):
        Stepper(grid16, kernels16, cfg).picard_step(f)


def test_rejects_inadmissible_input(grid16, kernels16):
    with pytest.raises(ValueError):
        Stepper(grid16, kernels16, StepConfig()).run(np.full(grid16.shape, 1.5), 1.0)
    with pytest.raises(ValueError):
        Stepper(grid16, build_kernels(make_grid(4.0, 8)), StepConfig())
