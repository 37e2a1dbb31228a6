import mpmath as mp
import numpy as np
import pytest

from lfdsim.equilibrium import (
    EquilibriumParams,
    FitError,
    equilibrium_moments,
    evaluate_equilibrium,
    fit_fermi_dirac,
    fit_to_field,
    saturation_epsilon,
)
from lfdsim.grid import make_grid, moments


def mp_moments(a, b, eps):
    """Mass and centred energy of a e^{-b r^2}/(1 + eps a e^{-b r^2}) by mpmath."""
    mp.mp.dps = 30
    occ = lambda r: a * mp.e ** (-b * r * r) / (1 + eps * a * mp.e ** (-b * r * r))  # noqa: E731
    mass = 4 * mp.pi * mp.quad(lambda r: r**2 * occ(r), [0, 1, 3, mp.inf])
    Ec = 4 * mp.pi * mp.quad(lambda r: r**4 * occ(r), [0, 1, 3, mp.inf])
    return float(mass), float(Ec)


@pytest.mark.parametrize("eps", [0.0, 1e-6, 0.3, 1.0])
def test_fit_reproduces_moments(eps):
    p = fit_fermi_dirac(1.0, [0.2, 0, 0], 1.6, eps)
    mass, Ec = mp_moments(p.a, p.b, eps)
    assert mass == pytest.approx(1.0, rel=1e-10)
    assert Ec == pytest.approx(1.6 - 0.04, rel=1e-10)
    assert np.allclose(p.u, [0.2, 0, 0])


def test_equilibrium_moments_roundtrip():
    p = fit_fermi_dirac(2.0, [0.5, -0.5, 1.0], 5.0, 0.2)
    m = equilibrium_moments(p)
    assert m.mass == pytest.approx(2.0, rel=1e-10)
    assert np.allclose(m.momentum, [0.5, -0.5, 1.0], rtol=1e-10)
    assert m.energy == pytest.approx(5.0, rel=1e-10)


def test_saturation_rejected():
    eps_sat = saturation_epsilon(1.0, np.zeros(3), 1.5)
    with pytest.raises(FitError):
        fit_fermi_dirac(1.0, np.zeros(3), 1.5, eps_sat)
    p = fit_fermi_dirac(1.0, np.zeros(3), 1.5, 0.99 * eps_sat)
    # close to saturation the occupation approaches 1/eps at the centre
    assert p.peak * 0.99 * eps_sat > 0.9


@pytest.mark.parametrize("rho,E", [(0, 1), (1, 0), (1, -1)])
def test_bad_moments(rho, E):
    with pytest.raises(ValueError):
        fit_fermi_dirac(rho, np.zeros(3), E, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        EquilibriumParams(-1.0, 1.0, np.zeros(3), 1.0)


def test_fit_to_field_and_evaluate():
    g = make_grid(8.0, 32, 1.0)
    p = fit_fermi_dirac(1.0, [0.3, 0, 0], 1.6, 1.0)
    M = evaluate_equilibrium(p, g)
    assert M.max() < 1.0
    m = moments(g, M)
    # second-order midpoint rule on a smooth, rapidly decaying profile
    assert m.mass == pytest.approx(1.0, rel=1e-6)
    q = fit_to_field(g, M)
    assert q.b == pytest.approx(p.b, rel=1e-5)
