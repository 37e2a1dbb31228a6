"""Truncated cubic velocity grid, midpoint quadrature and field I/O.

Nodes are cell centred: ``v_i = -L + (i + 1/2) h`` with ``h = 2L/N`` on each
axis, and every node carries the quadrature weight ``h**3``.  Fields are plain
``(N, N, N)`` float arrays indexed ``[i, j, k]`` for ``(v_x, v_y, v_z)``.

All reductions go through :func:`numpy.sum` over the C-ordered array (pairwise
summation in i-major, k-minor order), so results are reproducible bit for bit
for a given grid.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

FIELD_MAGIC = b"LFDFIELD"
FIELD_VERSION = 1
_HEADER = struct.Struct("<8sIIdd")  # magic, version, N, L, eps


@dataclass(frozen=True)
class VelocityGrid:
    L: float
    N: int
    eps: float = 1.0

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def weight(self) -> float:
        """Midpoint quadrature weight per node."""
        return self.h**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + (np.arange(self.N) + 0.5) * self.h

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (3, N, N, N)."""
        x = self.axis
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    @cached_property
    def speed2(self) -> np.ndarray:
        v = self.nodes
        return v[0] ** 2 + v[1] ** 2 + v[2] ** 2

    def bracket(self, power: float) -> np.ndarray:
        """Japanese bracket ``(1 + |v|^2)^(power/2)``."""
        return (1.0 + self.speed2) ** (0.5 * power)

    @property
    def pauli_bound(self) -> float:
        return np.inf if self.eps == 0 else 1.0 / self.eps


@dataclass(frozen=True)
class MomentVector:
    mass: float
    momentum: np.ndarray
    energy: float

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        px, py, pz = (float(c) for c in self.momentum)
        return (self.mass, px, py, pz, self.energy)


def make_grid(L: float, N: int, eps: float = 1.0) -> VelocityGrid:
    if not L > 0:
        raise ValueError(f"domain half-width must be positive, got L={L}")
    if int(N) != N or N % 2:
        raise ValueError(f"N must be an even integer (cell-centred layout), got N={N}")
    if N < 8:
        raise ValueError(f"N must be at least 8, got N={N}")
    if eps < 0:
        raise ValueError(f"quantum parameter must be nonnegative, got eps={eps}")
    return VelocityGrid(float(L), int(N), float(eps))


def _check_field(grid: VelocityGrid, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains NaN or Inf")
    return f


def ball_fraction(grid: VelocityGrid, R: float, center=(0.0, 0.0, 0.0), sub: int = 8) -> np.ndarray:
    """Volume fraction of each cell inside the ball, from ``sub**3`` midpoint samples."""
    c = np.asarray(center, dtype=float)
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * grid.h
    out = np.zeros(grid.shape)
    x, y, z = (grid.nodes[d] - c[d] for d in range(3))
    for a in off:
        for b in off:
            r2 = (x + a) ** 2 + (y + b) ** 2
            for e in off:
                out += r2 + (z + e) ** 2 <= R * R
    return out / sub**3


def integrate(grid: VelocityGrid, f: np.ndarray) -> float:
    return float(np.sum(f)) * grid.weight


def moments(grid: VelocityGrid, f: np.ndarray) -> MomentVector:
    f = _check_field(grid, f)
    v = grid.nodes
    w = grid.weight
    mass = float(np.sum(f)) * w
    momentum = np.array([float(np.sum(v[d] * f)) * w for d in range(3)])
    energy = float(np.sum(grid.speed2 * f)) * w
    return MomentVector(mass, momentum, energy)


def weighted_norm(grid: VelocityGrid, f: np.ndarray, p: float, m: float) -> float:
    """``(sum |f|^p <v>^m h^3)^(1/p)``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    f = _check_field(grid, f)
    integrand = np.abs(f) if p == 1 else np.abs(f) ** p
    if m != 0:
        integrand = integrand * grid.bracket(m)
    total = float(np.sum(integrand)) * grid.weight
    return total if p == 1 else total ** (1.0 / p)


# --- serialization -----------------------------------------------------------
#
# Binary layout (little endian):
#   8 bytes  magic b"LFDFIELD"
#   uint32   format version (1)
#   uint32   N
#   float64  L
#   float64  eps
#   N**3 float64 values, i-major, then j, k-minor (C order of f[i, j, k])
#
# CSV layout: a comment line "# lfdsim-field v1 L=<L> N=<N> eps=<eps>", a
# header "i,j,k,value" and one row per node in the same order.  Values are
# written with repr() so the round trip is lossless.


def field_to_bytes(grid: VelocityGrid, f: np.ndarray) -> bytes:
    f = _check_field(grid, f)
    head = _HEADER.pack(FIELD_MAGIC, FIELD_VERSION, grid.N, grid.L, grid.eps)
    return head + np.ascontiguousarray(f, dtype="<f8").tobytes()


def field_from_bytes(data: bytes) -> tuple[VelocityGrid, np.ndarray]:
    magic, version, N, L, eps = _HEADER.unpack_from(data, 0)
    if magic != FIELD_MAGIC:
        raise ValueError("not a field block (bad magic)")
    if version != FIELD_VERSION:
        raise ValueError(f"unsupported field format version {version}")
    grid = make_grid(L, N, eps)
    n = N**3
    values = np.frombuffer(data, dtype="<f8", count=n, offset=_HEADER.size)
    return grid, values.reshape(grid.shape).astype(float)


def field_nbytes(N: int) -> int:
    return _HEADER.size + 8 * N**3


def save_field(path: str | Path, grid: VelocityGrid, f: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        f = _check_field(grid, f)
        lines = [f"# lfdsim-field v1 L={grid.L!r} N={grid.N} eps={grid.eps!r}", "i,j,k,value"]
        for (i, j, k), val in np.ndenumerate(f):
            lines.append(f"{i},{j},{k},{float(val)!r}")
        path.write_text("\n".join(lines) + "\n")
    else:
        path.write_bytes(field_to_bytes(grid, f))


def load_field(path: str | Path) -> tuple[VelocityGrid, np.ndarray]:
    path = Path(path)
    if path.suffix != ".csv":
        return field_from_bytes(path.read_bytes())
    with path.open() as fh:
        head = fh.readline().split()
        if head[:2] != ["#", "lfdsim-field"]:
            raise ValueError("not an lfdsim field CSV")
        meta = dict(item.split("=") for item in head[3:])
        grid = make_grid(float(meta["L"]), int(meta["N"]), float(meta["eps"]))
        fh.readline()
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    f = np.zeros(grid.shape)
    idx = rows[:, :3].astype(int)
    f[idx[:, 0], idx[:, 1], idx[:, 2]] = rows[:, 3]
    return grid, f
