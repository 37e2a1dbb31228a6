import numpy as np
import pytest

from lfdsim.diagnostics import (
    fit_decay,
    is_nonincreasing,
    weighted_distance,
    weighted_distance_h,
    weighted_distance_to,
)
from lfdsim.grid import make_grid
from lfdsim.linearized import build_context


def test_power_law_recovered():
    t = np.linspace(0, 20, 81)
    fit = fit_decay(t, 3.0 * (1 + t) ** -2.5)
    assert fit.N_fit == pytest.approx(2.5, abs=1e-12)
    assert fit.residual < 1e-12 and not fit.flagged
    assert fit.window == (1.0, 20.0) and fit.points == 77


def test_exponential_is_flagged():
    t = np.linspace(0, 20, 81)
    fit = fit_decay(t, np.exp(-0.3 * t))
    assert fit.flagged and fit.residual > 0.05
    assert fit.to_dict()["window"] == [1.0, 20.0]


def test_fit_errors():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        fit_decay(t, np.ones(5))
    t = np.linspace(0, 10, 20)
    with pytest.raises(ValueError):
        fit_decay(t, -np.ones(20))
    with pytest.raises(ValueError):
        fit_decay(t, np.ones(19))


def test_weighted_distance_forms():
    ctx = build_context(make_grid(6.0, 16))
    f = ctx.M * (1 + 0.1 * np.cos(ctx.grid.nodes[0]))
    d = weighted_distance(f, ctx)
    assert d > 0
    assert weighted_distance_h(f, ctx) == pytest.approx(d, rel=1e-12)
    assert weighted_distance_to(ctx.grid, f, ctx.M) == pytest.approx(d, rel=1e-12)


def test_monotone_check():
    assert is_nonincreasing([3, 2, 2, 1])
    assert not is_nonincreasing([3, 2, 2.1])
    assert is_nonincreasing([3, 2, 2.1], slack=0.2)
