import numpy as np
import pytest

from lfdsim.grid import (
    ball_fraction,
    field_from_bytes,
    field_to_bytes,
    load_field,
    make_grid,
    moments,
    save_field,
    weighted_norm,
)


def test_layout_is_cell_centred():
    g = make_grid(4.0, 8)
    assert g.h == 1.0
    assert np.allclose(g.axis, np.arange(-3.5, 4.0, 1.0))
    assert g.nodes.shape == (3, 8, 8, 8)
    assert not np.any(g.speed2 == 0)


@pytest.mark.parametrize("L,N,eps", [(0, 8, 1), (4, 7, 1), (4, 6, 1), (4, 8, -1)])
def test_make_grid_rejects(L, N, eps):
    with pytest.raises(ValueError):
        make_grid(L, N, eps)


def test_gaussian_moments(grid16):
    v = grid16.nodes
    u = np.array([0.5, -0.25, 0.0])
    f = (2 * np.pi) ** -1.5 * np.exp(-0.5 * np.sum((v - u[:, None, None, None]) ** 2, axis=0))
    m = moments(grid16, f)
    assert m.mass == pytest.approx(1.0, abs=1e-7)  # tail beyond L=6
    assert np.allclose(m.momentum, u, atol=1e-7)
    assert m.energy == pytest.approx(3.0 + u @ u, abs=1e-6)


def test_weighted_norm_matches_definition(grid8, rng):
    f = rng.uniform(-1, 1, grid8.shape)
    expect = np.sum(np.abs(f) ** 2 * (1 + grid8.speed2)) * grid8.weight
    assert weighted_norm(grid8, f, 2, 2) == pytest.approx(expect**0.5, rel=1e-14)


def test_field_roundtrip(tmp_path, grid8, rng):
    f = rng.uniform(0, 1, grid8.shape)
    g2, f2 = field_from_bytes(field_to_bytes(grid8, f))
    assert g2 == grid8 and np.array_equal(f, f2)
    save_field(tmp_path / "f.bin", grid8, f)
    g3, f3 = load_field(tmp_path / "f.bin")
    assert g3 == grid8 and np.array_equal(f, f3)
    save_field(tmp_path / "f.csv", grid8, f)
    g4, f4 = load_field(tmp_path / "f.csv")
    assert g4 == grid8 and np.array_equal(f, f4)


def test_field_bytes_reject_corruption(grid8):
    data = bytearray(field_to_bytes(grid8, np.zeros(grid8.shape)))
    data[0] ^= 1
    with pytest.raises(ValueError):
        field_from_bytes(bytes(data))


def test_ball_fraction_volume():
    g = make_grid(2.0, 16)
    chi = ball_fraction(g, 1.0, sub=8)
    assert np.sum(chi) * g.weight == pytest.approx(4 * np.pi / 3, rel=2e-3)
    assert chi.min() == 0.0 and chi.max() == 1.0
