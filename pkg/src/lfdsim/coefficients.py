"""Nonlocal Coulomb coefficients by zero-padded FFT convolution.

For a source ``g`` sampled on the grid the three coefficients are

    A[g](v)  = 1/(8 pi) sum_w  Pi(v - w)/|v - w|  g(w) h^3
    a[g](v)  = 1/(4 pi) sum_w  g(w)/|v - w|        h^3
    grad a   = -1/(4 pi) sum_w (v - w)/|v - w|^3 g(w) h^3

with ``Pi(z) = I - z z^T/|z|^2``.  Kernels are sampled at every offset in
``h * {-N..N-1}^3`` and stored as real FFTs of size ``(2N)^3`` so that the
circular convolution equals the linear (whole-space) one on the grid.  At the
singular offset ``z = 0`` the kernels take their exact cell averages.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft

from .grid import VelocityGrid

# Mean of 1/|z| over the unit cube [-1/2, 1/2]^3.
CELL_AVG_INV_R = 2.380077363979553

# Packed storage order of the symmetric 3x3 kernel.
SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _sym_index(d: int, e: int) -> int:
    return SYM_PAIRS.index((min(d, e), max(d, e)))


@dataclass(frozen=True)
class KernelSet:
    grid: VelocityGrid
    A_hat: np.ndarray  # (6, 2N, 2N, N+1) complex
    grad_hat: np.ndarray  # (3, 2N, 2N, N+1) complex
    inv_hat: np.ndarray  # (2N, 2N, N+1) complex

    @property
    def padded(self) -> tuple[int, int, int]:
        n = 2 * self.grid.N
        return (n, n, n)


@dataclass
class CoefficientField:
    A: np.ndarray  # (3, 3, N, N, N)
    grad_a: np.ndarray | None = None  # (3, N, N, N)
    a: np.ndarray | None = None  # (N, N, N)


@dataclass
class StructureReport:
    div_identity_err: float
    trace_err: float
    min_eig: float
    floor: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class AnisotropyProfile:
    t: np.ndarray
    lam_par: np.ndarray
    lam_perp: np.ndarray
    lam_perp_probes: np.ndarray  # (2, n) values along the two probe directions
    slope_par: float
    slope_perp: float


class VacuousFloorWarning(UserWarning):
    """The Pauli-blocked source f(1 - eps f) vanishes identically."""


def kernel_offsets(grid: VelocityGrid) -> np.ndarray:
    """Offset vectors z for the padded kernel, shape (3, 2N, 2N, 2N), FFT order."""
    N = grid.N
    n = np.arange(2 * N)
    o = np.where(n < N, n, n - 2 * N) * grid.h
    return np.stack(np.meshgrid(o, o, o, indexing="ij"))


def projection_kernel(z: np.ndarray) -> np.ndarray:
    """Pi(z)/|z| for offsets ``z`` of shape (3, ...), returned as (3, 3, ...).

    Undefined at z = 0; callers handle the origin.
    """
    r2 = z[0] ** 2 + z[1] ** 2 + z[2] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(r2)
        out = -z[:, None] * z[None, :] / (r2 * r)
        for d in range(3):
            out[d, d] += 1.0 / r
    return out


def build_kernels(grid: VelocityGrid) -> KernelSet:
    h = grid.h
    w = grid.weight
    z = kernel_offsets(grid)
    r2 = z[0] ** 2 + z[1] ** 2 + z[2] ** 2
    origin = r2 == 0
    r2[origin] = 1.0
    r = np.sqrt(r2)
    cell_inv_r = CELL_AVG_INV_R / h
    s = (2 * grid.N,) * 3

    inv = w / r
    inv[origin] = w * cell_inv_r
    inv_hat = sfft.rfftn(inv / (4 * np.pi), s=s)
    del inv

    A_hat = []
    for d, e in SYM_PAIRS:
        k = -z[d] * z[e] / (r2 * r)
        if d == e:
            k += 1.0 / r
        k[origin] = (2.0 / 3.0) * cell_inv_r if d == e else 0.0
        A_hat.append(sfft.rfftn(k * (w / (8 * np.pi)), s=s))

    grad_hat = []
    for d in range(3):
        k = -z[d] / (r2 * r)
        k[origin] = 0.0
        grad_hat.append(sfft.rfftn(k * (w / (4 * np.pi)), s=s))

    return KernelSet(grid, np.stack(A_hat), np.stack(grad_hat), inv_hat)


def _check_source(g: np.ndarray, kernels: KernelSet) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[-3:] != kernels.grid.shape:
        raise ValueError(
            f"source shape {g.shape} does not match kernel grid {kernels.grid.shape}"
        )
    return g


def _inverse(spec: np.ndarray, kernels: KernelSet) -> np.ndarray:
    N = kernels.grid.N
    return sfft.irfftn(spec, s=kernels.padded)[:N, :N, :N]


def compute_A(g: np.ndarray, kernels: KernelSet) -> np.ndarray:
    """A[g] as an array of shape (3, 3, N, N, N)."""
    g = _check_source(g, kernels)
    N = kernels.grid.N
    G = sfft.rfftn(g, s=kernels.padded)
    A = np.empty((3, 3, N, N, N))
    for c, (d, e) in enumerate(SYM_PAIRS):
        A[d, e] = _inverse(kernels.A_hat[c] * G, kernels)
        if d != e:
            A[e, d] = A[d, e]
    return A


def compute_potentials(
    f: np.ndarray, kernels: KernelSet, with_potential: bool = True
) -> tuple[np.ndarray | None, np.ndarray]:
    """Return ``(a[f], grad a[f])``; ``a`` is skipped when ``with_potential`` is False."""
    f = _check_source(f, kernels)
    F = sfft.rfftn(f, s=kernels.padded)
    grad = np.stack([_inverse(kernels.grad_hat[d] * F, kernels) for d in range(3)])
    a = _inverse(kernels.inv_hat * F, kernels) if with_potential else None
    return a, grad


def apply_A_vector(V: np.ndarray, kernels: KernelSet) -> np.ndarray:
    """Matrix-kernel convolution of a vector field: ``out_d = sum_e A_de[V_e]``."""
    V = _check_source(V, kernels)
    spec = [sfft.rfftn(V[e], s=kernels.padded) for e in range(3)]
    out = np.empty_like(V)
    for d in range(3):
        acc = sum(kernels.A_hat[_sym_index(d, e)] * spec[e] for e in range(3))
        out[d] = _inverse(acc, kernels)
    return out


def pauli_source(f: np.ndarray, eps: float) -> np.ndarray:
    return f * (1.0 - eps * f)


def compute_coefficients(
    f: np.ndarray, kernels: KernelSet, with_potential: bool = False
) -> CoefficientField:
    """Coefficients of the collision operator at ``f``: A[f(1-eps f)], grad a[f]."""
    eps = kernels.grid.eps
    A = compute_A(pauli_source(f, eps), kernels)
    a, grad_a = compute_potentials(f, kernels, with_potential=with_potential)
    return CoefficientField(A=A, grad_a=grad_a, a=a)


def divergence_of_A(A: np.ndarray, h: float) -> np.ndarray:
    """Row divergence sum_e d_e A_de with second-order one-sided stencils at the faces."""
    return np.stack(
        [
            sum(np.gradient(A[d, e], h, axis=e, edge_order=2) for e in range(3))
            for d in range(3)
        ]
    )


def node_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Eigenvalues (ascending) of the nodal tensors, shape (N, N, N, 3)."""
    return np.linalg.eigvalsh(np.moveaxis(A, (0, 1), (-2, -1)))


def verify_structure(f: np.ndarray, kernels: KernelSet) -> StructureReport:
    """Check div A[f] = grad a[f], tr A[f] = a[f] and A[f] >= 0 on the grid.

    The two identity errors are max-node absolute errors divided by the
    max-node magnitude of the right-hand side.
    """
    f = _check_source(f, kernels)
    if np.min(f) < 0:
        raise ValueError("verify_structure expects a nonnegative source")
    A = compute_A(f, kernels)
    a, grad_a = compute_potentials(f, kernels)
    div = divergence_of_A(A, kernels.grid.h)
    scale_g = max(float(np.max(np.abs(grad_a))), np.finfo(float).tiny)
    scale_a = max(float(np.max(np.abs(a))), np.finfo(float).tiny)
    div_err = float(np.max(np.abs(div - grad_a))) / scale_g
    trace_err = float(np.max(np.abs(A[0, 0] + A[1, 1] + A[2, 2] - a))) / scale_a
    min_eig = float(np.min(node_eigenvalues(A)[..., 0]))
    floor = ellipticity_floor(f, kernels) if np.max(f) <= kernels.grid.pauli_bound else 0.0
    return StructureReport(div_err, trace_err, min_eig, floor)


def ellipticity_floor(f: np.ndarray, kernels: KernelSet) -> float:
    """min over nodes of lambda_min(A[f(1 - eps f)](v)) * (1 + |v|^3)."""
    grid = kernels.grid
    g = pauli_source(_check_source(f, kernels), grid.eps)
    if not np.any(g > 0):
        warnings.warn(
            "f(1 - eps f) vanishes identically; the ellipticity floor is vacuous",
            VacuousFloorWarning,
            stacklevel=2,
        )
        return 0.0
    lam = node_eigenvalues(compute_A(g, kernels))[..., 0]
    return float(np.min(lam * (1.0 + grid.speed2**1.5)))


def A_at_points(g: np.ndarray, grid: VelocityGrid, points: np.ndarray) -> np.ndarray:
    """A[g] at arbitrary off-grid points by direct summation, shape (n, 3, 3)."""
    v = grid.nodes.reshape(3, -1)
    gw = np.asarray(g, dtype=float).reshape(-1) * (grid.weight / (8 * np.pi))
    out = np.empty((len(points), 3, 3))
    for n, p in enumerate(np.atleast_2d(points)):
        z = p[:, None] - v
        K = projection_kernel(z)
        out[n] = K @ gw
    return out


def a_at_points(g: np.ndarray, grid: VelocityGrid, points: np.ndarray) -> np.ndarray:
    """a[g] at off-grid points by direct summation; points must not coincide with nodes."""
    v = grid.nodes.reshape(3, -1)
    gw = np.asarray(g, dtype=float).reshape(-1) * (grid.weight / (4 * np.pi))
    pts = np.atleast_2d(points)
    return np.array([gw @ (1.0 / np.linalg.norm(p[:, None] - v, axis=0)) for p in pts])


def _orthonormal_complement(ray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seed = np.zeros(3)
    seed[np.argmin(np.abs(ray))] = 1.0
    e1 = np.cross(ray, seed)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ray, e1)
    return e1, e2


def _loglog_slope(t: np.ndarray, y: np.ndarray) -> float:
    if np.any(y <= 0):
        return float("nan")
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def anisotropy_profile(
    g: np.ndarray,
    ray,
    grid: VelocityGrid,
    t_range: tuple[float, float] = (3.0, 6.0),
    n: int = 16,
) -> AnisotropyProfile:
    """Parallel/perpendicular eigen-directions of A[g] along ``v = t * ray``.

    Slopes are least-squares log-log fits over the outer half of the
    (log-spaced) samples.
    """
    ray = np.asarray(ray, dtype=float)
    ray = ray / np.linalg.norm(ray)
    t0, t1 = t_range
    reach = t1 * float(np.max(np.abs(ray)))
    if not 0 < t0 < t1 or reach > grid.L - grid.h:
        raise ValueError(f"sample range {t_range} exceeds the box (L - h = {grid.L - grid.h})")
    t = np.geomspace(t0, t1, n)
    A = A_at_points(g, grid, t[:, None] * ray[None, :])
    p1, p2 = _orthonormal_complement(ray)
    lam_par = np.einsum("i,nij,j->n", ray, A, ray)
    probes = np.stack([np.einsum("i,nij,j->n", p, A, p) for p in (p1, p2)])
    lam_perp = probes.max(axis=0)
    outer = slice(n // 2, None)
    return AnisotropyProfile(
        t=t,
        lam_par=lam_par,
        lam_perp=lam_perp,
        lam_perp_probes=probes,
        slope_par=_loglog_slope(t[outer], lam_par[outer]),
        slope_perp=_loglog_slope(t[outer], lam_perp[outer]),
    )
