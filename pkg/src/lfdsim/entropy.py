"""Fermi-Dirac entropy, relative entropy and entropy dissipation."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import xlogy

from .coefficients import KernelSet, apply_A_vector, compute_A, pauli_source
from .grid import VelocityGrid, _check_field

GUARD_FLOOR = 1e-14
# Candidate coefficients of the int f^2 term: 1 follows from the 1/8pi, 1/4pi
# normalisation of A and a; 8 pi corresponds to kernels without the prefactor.
NORMALIZATION_CANDIDATES = (1.0, 8.0 * np.pi)


@dataclass
class EntropyReport:
    H: float
    H_rel: float
    D: float
    guards_hit: int

    def to_dict(self) -> dict:
        return asdict(self)


def _check_distribution(grid: VelocityGrid, f: np.ndarray) -> np.ndarray:
    f = _check_field(grid, f)
    if np.min(f) < 0:
        raise ValueError(f"distribution has negative values (min {np.min(f):.3e})")
    if grid.eps > 0 and np.max(f) > 1.0 / grid.eps:
        raise ValueError(
            f"distribution exceeds the Pauli bound 1/eps = {1 / grid.eps} (max {np.max(f):.17g})"
        )
    return f


def fermi_dirac_entropy(grid: VelocityGrid, f: np.ndarray) -> float:
    """H_eps[f] = (1/eps) sum [eps f ln(eps f) + (1 - eps f) ln(1 - eps f)] h^3.

    For eps = 0 this is the Boltzmann entropy sum f ln f h^3.
    """
    f = _check_distribution(grid, f)
    eps = grid.eps
    if eps == 0:
        return float(np.sum(xlogy(f, f))) * grid.weight
    x = eps * f
    y = 1.0 - x
    return float(np.sum(xlogy(x, x) + xlogy(y, y))) * grid.weight / eps


def _bregman(weight: np.ndarray, d: np.ndarray) -> np.ndarray:
    """weight * phi(1 + d) with phi(r) = r ln r - r + 1, accurate for small d."""
    r = 1.0 + d
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(r > 0, r * np.log1p(d) - d, 1.0)
    return weight * val


def relative_entropy(grid: VelocityGrid, f: np.ndarray, M: np.ndarray) -> float:
    """H_eps[f | M] as the sum of the two Bregman integrands (>= 0)."""
    f = _check_distribution(grid, f)
    M = _check_field(grid, M)
    eps = grid.eps
    if np.min(M) <= 0 or (eps > 0 and np.max(eps * M) >= 1):
        raise ValueError("reference equilibrium must lie strictly inside (0, 1/eps)")
    total = _bregman(M, (f - M) / M)
    if eps > 0:
        hole = 1.0 - eps * M
        total = total + _bregman(hole / eps, -eps * (f - M) / hole)
    return float(np.sum(total)) * grid.weight


def centered_gradient(f: np.ndarray, h: float) -> np.ndarray:
    return np.stack(np.gradient(f, h, edge_order=2))


def _fluxes(f, eps, h):
    g = pauli_source(f, eps)
    grad = centered_gradient(f, h)
    live = g >= GUARD_FLOOR
    u = np.zeros_like(grad)
    np.divide(grad, g, out=u, where=live)
    return g, grad, u, int(np.count_nonzero(~live))


def dissipation(
    f: np.ndarray, kernels: KernelSet, A: np.ndarray | None = None
) -> tuple[float, int]:
    """Entropy dissipation D[f] and the number of guarded nodes.

    Evaluated as the expanded double sum

        D = sum g u.A[g]u h^3 - sum (g u).A*(g u) h^3,   u = grad f / g,  g = f(1 - eps f)

    which equals the symmetrised (v, v*) form term by term, so D >= 0 up to
    round-off.  ``A`` may carry a precomputed A[g].
    """
    grid = kernels.grid
    f = _check_field(grid, f)
    g, _, u, guarded = _fluxes(f, grid.eps, grid.h)
    if A is None:
        A = compute_A(g, kernels)
    flux = g * u
    first = np.einsum("dxyz,dexyz,exyz->", flux, A, u)
    second = np.einsum("dxyz,dxyz->", flux, apply_A_vector(flux, kernels))
    return float(first - second) * grid.weight, guarded


def dissipation_reduced(
    f: np.ndarray, kernels: KernelSet, coefficient: float = 1.0, A: np.ndarray | None = None
) -> tuple[float, int]:
    """D[f] = sum grad f.A[g] grad f / g h^3 - c sum f^2 h^3 (integrated-by-parts form)."""
    grid = kernels.grid
    f = _check_field(grid, f)
    g, grad, u, guarded = _fluxes(f, grid.eps, grid.h)
    if A is None:
        A = compute_A(g, kernels)
    first = np.einsum("dxyz,dexyz,exyz->", grad, A, u)
    return float(first - coefficient * np.sum(f * f)) * grid.weight, guarded


def calibrate_normalization(f: np.ndarray, kernels: KernelSet) -> tuple[float, float]:
    """Measure the coefficient c in sum grad f.A*(grad f) = c sum f^2.

    Returns the measured ratio and the nearest candidate normalisation.
    """
    grid = kernels.grid
    grad = centered_gradient(_check_field(grid, f), grid.h)
    lhs = float(np.einsum("dxyz,dxyz->", grad, apply_A_vector(grad, kernels)))
    rhs = float(np.sum(f * f))
    ratio = lhs / rhs
    chosen = min(NORMALIZATION_CANDIDATES, key=lambda c: abs(np.log(ratio / c)))
    return ratio, chosen


def entropy_report(
    f: np.ndarray, M: np.ndarray, kernels: KernelSet, A: np.ndarray | None = None
) -> EntropyReport:
    grid = kernels.grid
    D, guarded = dissipation(f, kernels, A=A)
    return EntropyReport(
        H=fermi_dirac_entropy(grid, f),
        H_rel=relative_entropy(grid, f, M),
        D=D,
        guards_hit=guarded,
    )
