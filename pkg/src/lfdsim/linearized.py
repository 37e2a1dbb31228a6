"""Linearization of the collision operator around a Fermi-Dirac equilibrium.

With ``m = M(1 - eps M)`` and ``f = M + m h`` the operator expands as

    -(1/m) T[M + m h] = -(1/m) T[M] + L h + G2[h, h] + G3[h, h, h]

where ``T[f] = -div(A[f(1-eps f)] grad f - f(1-eps f) grad a[f])``.  The
coefficients keep the 1/(8 pi) and 1/(4 pi) prefactors of
:mod:`lfdsim.coefficients`, so ``L`` is the exact linearization of ``T`` as
the rest of the package computes it.

The operator used for spectral work is the symmetric form

    L h = (1/m) div( m A[m] D h - m A*(m D h) )

averaged over ``D`` the forward and the backward difference (each zero on
the face where it has no neighbour) with ``div = -D^T``.  Each half is
exactly self-adjoint and nonpositive in the discrete ``L^2(m)`` product and
kills 1, v and |v|^2 away from one boundary layer.  A single one-sided form
weights the outward edges of half the faces by the outer node and admits
cheap boundary-layer modes, and a centred pair leaves checkerboards in the
kernel; the average has neither.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, lobpcg

from .coefficients import (
    KernelSet,
    apply_A_vector,
    build_kernels,
    compute_A,
    compute_potentials,
)
from .entropy import centered_gradient
from .equilibrium import EquilibriumParams, evaluate_equilibrium, fit_fermi_dirac
from .grid import VelocityGrid, _check_field

# coefficient of the local "m h" term in the Lambda/K splitting
SPLIT_COEFFICIENT = 1.0
NUMERATOR_FLOOR = -1e-10


class GapError(RuntimeError):
    pass


class DegenerateBasisError(np.linalg.LinAlgError):
    pass


# --- differencing -------------------------------------------------------------
#
# side=+1 is the forward difference (h[i+1] - h[i])/dx stored at i and zero at
# the last node; side=-1 is the backward difference stored at i and zero at
# the first node.  one_sided_divergence is -D^T for the same side.


def _pair(d: int, side: int):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[d] = slice(0, -1)
    hi[d] = slice(1, None)
    # (node holding the difference, its neighbour)
    return (tuple(lo), tuple(hi)) if side > 0 else (tuple(hi), tuple(lo))


def one_sided_gradient(h: np.ndarray, dx: float, side: int = 1) -> np.ndarray:
    out = np.zeros((3,) + h.shape)
    for d in range(3):
        own, nb = _pair(d, side)
        out[d][own] = side * (h[nb] - h[own]) / dx
    return out


def one_sided_divergence(F: np.ndarray, dx: float, side: int = 1) -> np.ndarray:
    out = np.zeros(F.shape[1:])
    for d in range(3):
        own, nb = _pair(d, side)
        out[own] += side * F[d][own]
        out[nb] -= side * F[d][own]
    return out / dx


def centered_divergence(F: np.ndarray, dx: float) -> np.ndarray:
    return sum(np.gradient(F[d], dx, axis=d, edge_order=2) for d in range(3))


def _matvec(A: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.einsum("dexyz,exyz->dxyz", A, u)


# --- context ------------------------------------------------------------------


@dataclass(frozen=True)
class LinearizedContext:
    grid: VelocityGrid
    kernels: KernelSet
    M: np.ndarray
    m_weight: np.ndarray
    params: EquilibriumParams | None = field(default=None, compare=False)

    def __post_init__(self):
        M = _check_field(self.grid, self.M)
        m = _check_field(self.grid, self.m_weight)
        if np.min(m) <= 0:
            raise ValueError("m = M(1 - eps M) must be positive at every node")
        if self.grid.eps > 0 and np.max(self.grid.eps * M) >= 1:
            raise ValueError("equilibrium must lie strictly below the Pauli bound")

    @cached_property
    def A_m(self) -> np.ndarray:
        return compute_A(self.m_weight, self.kernels)

    @cached_property
    def grad_M(self) -> np.ndarray:
        return centered_gradient(self.M, self.grid.h)

    @cached_property
    def grad_aM(self) -> np.ndarray:
        return compute_potentials(self.M, self.kernels, with_potential=False)[1]

    @cached_property
    def invariants(self) -> np.ndarray:
        """Collision invariants 1, v_x, v_y, v_z, |v|^2 as rows of shape (5, N^3)."""
        v = self.grid.nodes
        rows = [np.ones(self.grid.shape), v[0], v[1], v[2], self.grid.speed2]
        return np.stack([r.ravel() for r in rows])

    @cached_property
    def orthonormal_invariants(self) -> np.ndarray:
        """L^2(m)-orthonormal basis of the invariant span (twice-applied Gram-Schmidt)."""
        w = self.m_weight.ravel() * self.grid.weight
        basis = self.invariants
        gram = (basis * w) @ basis.T
        scale = np.sqrt(np.diag(gram))
        cond = np.linalg.cond(gram / np.outer(scale, scale))
        if not np.isfinite(cond) or cond > 1e12:
            raise DegenerateBasisError(f"invariant Gram matrix is degenerate (cond {cond:.3e})")
        q = []
        for b in basis:
            x = b.copy()
            for _ in range(2):
                for y in q:
                    x -= np.dot(x * w, y) * y
            x /= np.sqrt(np.dot(x * w, x))
            q.append(x)
        return np.stack(q)


def build_context(
    grid: VelocityGrid,
    params: EquilibriumParams | None = None,
    kernels: KernelSet | None = None,
    rho: float = 1.0,
    p=(0.0, 0.0, 0.0),
    E: float = 1.5,
) -> LinearizedContext:
    """Context around ``params``, or around the equilibrium fitted to (rho, p, E)."""
    if kernels is None:
        kernels = build_kernels(grid)
    if params is None:
        params = fit_fermi_dirac(rho, p, E, grid.eps)
    M = evaluate_equilibrium(params, grid)
    return LinearizedContext(grid, kernels, M, M * (1.0 - grid.eps * M), params)


def inner_m(ctx: LinearizedContext, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(ctx.m_weight * x * y)) * ctx.grid.weight


# --- the linear operator and its splitting -----------------------------------


SIDES = (1, -1)


def _flux_parts(h, ctx: LinearizedContext, side: int) -> tuple[np.ndarray, np.ndarray]:
    u = one_sided_gradient(h, ctx.grid.h, side)
    m = ctx.m_weight
    local = m * _matvec(ctx.A_m, u)
    nonlocal_ = m * apply_A_vector(m * u, ctx.kernels)
    return local, nonlocal_


def _divergence_of(part: int, h, ctx: LinearizedContext) -> np.ndarray:
    """Average over both sides of div(flux part); part 0 local, 1 nonlocal, 2 both."""
    out = np.zeros(ctx.grid.shape)
    for side in SIDES:
        local, nonlocal_ = _flux_parts(h, ctx, side)
        F = (local, nonlocal_, local - nonlocal_)[part]
        out += one_sided_divergence(F, ctx.grid.h, side)
    return 0.5 * out


def apply_L(h: np.ndarray, ctx: LinearizedContext) -> np.ndarray:
    h = _check_field(ctx.grid, h)
    return _divergence_of(2, h, ctx) / ctx.m_weight


def _rank_one(h, ctx, k, xi):
    return xi * float(np.sum(ctx.m_weight * h * ctx.grid.bracket(k))) * ctx.grid.weight


def apply_Lambda(h: np.ndarray, ctx: LinearizedContext, k: float = 0.0, xi: float = 1.0):
    """Local part: ``-(1/m) div(m A[m] D h) - c m h + xi <h, <v>^k>_m``."""
    h = _check_field(ctx.grid, h)
    m = ctx.m_weight
    return (
        -_divergence_of(0, h, ctx) / m
        - SPLIT_COEFFICIENT * m * h
        + _rank_one(h, ctx, k, xi)
    )


def apply_K(h: np.ndarray, ctx: LinearizedContext, k: float = 0.0, xi: float = 1.0):
    """Nonlocal part: ``-(1/m) div(m A*(m D h)) - c m h + xi <h, <v>^k>_m``."""
    h = _check_field(ctx.grid, h)
    m = ctx.m_weight
    return (
        -_divergence_of(1, h, ctx) / m
        - SPLIT_COEFFICIENT * m * h
        + _rank_one(h, ctx, k, xi)
    )


def project_out_nullspace(h: np.ndarray, ctx: LinearizedContext) -> np.ndarray:
    h = _check_field(ctx.grid, h)
    q = ctx.orthonormal_invariants
    w = ctx.m_weight.ravel() * ctx.grid.weight
    x = h.ravel().copy()
    for y in q:
        x -= np.dot(x * w, y) * y
    return x.reshape(ctx.grid.shape)


def dirichlet_form(h: np.ndarray, ctx: LinearizedContext) -> float:
    """``sum m D h . A[m] D h h^3`` averaged over the two one-sided differences."""
    total = 0.0
    for side in SIDES:
        u = one_sided_gradient(h, ctx.grid.h, side)
        total += float(np.einsum("dxyz,dxyz->", ctx.m_weight * u, _matvec(ctx.A_m, u)))
    return 0.5 * total * ctx.grid.weight


def gap_denominator(h: np.ndarray, ctx: LinearizedContext) -> float:
    tail = float(np.sum(ctx.m_weight * h * h / ctx.grid.bracket(1))) * ctx.grid.weight
    return dirichlet_form(h, ctx) + tail


def rayleigh(h: np.ndarray, ctx: LinearizedContext) -> tuple[float, float]:
    """Numerator ``-(Lh, h)_m`` and denominator of the gap ratio."""
    return -inner_m(ctx, apply_L(h, ctx), h), gap_denominator(h, ctx)


# --- spectral gap ------------------------------------------------------------


@dataclass
class GapEstimate:
    estimate: float
    seeds: int
    iters: int
    per_seed_values: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _difference_matrices(N: int, dx: float, side: int) -> list[sp.csr_matrix]:
    live = np.ones(N)
    live[-1 if side > 0 else 0] = 0.0
    one = sp.diags([-side * live, side * np.ones(N - 1)], [0, side], shape=(N, N))
    one = sp.csr_matrix(one) / dx
    eye = sp.identity(N, format="csr")
    return [
        sp.kron(sp.kron(one, eye), eye, format="csr"),
        sp.kron(sp.kron(eye, one), eye, format="csr"),
        sp.kron(sp.kron(eye, eye), one, format="csr"),
    ]


def _sparse_denominator(ctx: LinearizedContext, tail: float = 1.0) -> sp.csr_matrix:
    """Matrix of :func:`gap_denominator` with the tail term scaled by ``tail``."""
    w = ctx.m_weight.ravel() * ctx.grid.weight
    Q = sp.diags(tail * w / ctx.grid.bracket(1).ravel())
    for side in SIDES:
        D = _difference_matrices(ctx.grid.N, ctx.grid.h, side)
        for d in range(3):
            for e in range(3):
                Q = Q + 0.5 * (D[d].T @ sp.diags(w * ctx.A_m[d, e].ravel()) @ D[e])
    return sp.csr_matrix((Q + Q.T) * 0.5)


def estimate_gap(
    ctx: LinearizedContext,
    iters: int = 60,
    seeds: int = 16,
    rng_seed: int = 0,
    tol: float = 1e-7,
    shift: float = 5e-3,
) -> GapEstimate:
    """Minimise ``-(Lh,h)_m / (sum m D h.A[m] D h + |h|^2_{m<v>^-1})`` off the invariants.

    Each seed starts a single-vector LOBPCG descent on the generalized
    problem, constrained to the ``L^2(m)`` complement of the collision
    invariants.  The preconditioner is one algebraic-multigrid V-cycle for
    the Dirichlet form plus ``shift`` times the tail term, which plays the
    role of the shift in inverse iteration.  The minimum over seeds bounds
    the coercivity constant from above.
    """
    import pyamg

    grid = ctx.grid
    n = grid.N**3
    q = ctx.orthonormal_invariants  # (5, n), m-orthonormal
    w = ctx.m_weight.ravel() * grid.weight
    wq = w[:, None] * q.T

    def proj(x):
        return x - q.T @ (wq.T @ x)

    def proj_t(x):
        return x - wq @ (q @ x)

    def numerator(x):
        x = proj(x.reshape(n, -1))
        out = np.empty_like(x)
        for j in range(x.shape[1]):
            out[:, j] = -(w * apply_L(x[:, j].reshape(grid.shape), ctx).ravel())
        return proj_t(out)

    Q = _sparse_denominator(ctx)

    def denominator(x):
        x = x.reshape(n, -1)
        return proj_t(Q @ proj(x)) + wq @ (wq.T @ x)

    G = _sparse_denominator(ctx, tail=shift)
    scale = 1.0 / np.sqrt(G.diagonal())
    S = sp.diags(scale)
    amg = pyamg.smoothed_aggregation_solver(
        sp.csr_matrix(S @ G @ S), symmetry="symmetric", max_coarse=500
    ).aspreconditioner(cycle="V")

    def precond(x):
        x = x.reshape(n, -1)
        return np.column_stack([scale * amg.matvec(scale * x[:, j]) for j in range(x.shape[1])])

    P_op = LinearOperator((n, n), matvec=numerator, matmat=numerator, dtype=float)
    B_op = LinearOperator((n, n), matvec=denominator, matmat=denominator, dtype=float)
    T_op = LinearOperator((n, n), matvec=precond, matmat=precond, dtype=float)
    Y = q.T.copy()

    values = []
    for s in range(seeds):
        rng = np.random.default_rng([rng_seed, s])
        x0 = rng.standard_normal((n, 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            lam, vec = lobpcg(
                P_op, x0, B=B_op, M=T_op, Y=Y, tol=tol, maxiter=iters, largest=False
            )
        h = project_out_nullspace(vec[:, 0].reshape(grid.shape), ctx)
        num, den = rayleigh(h, ctx)
        if num < NUMERATOR_FLOOR * max(den, 1.0):
            raise GapError(
                f"seed {s}: negative numerator -(Lh,h) = {num:.3e} "
                f"(denominator {den:.3e}, lobpcg value {float(lam[0]):.3e})"
            )
        values.append(float(num / den))
    return GapEstimate(float(min(values)), seeds, iters, values)


# --- nonlinear decomposition -------------------------------------------------


@dataclass
class ConsistencyReport:
    amplitude: float
    linear: float
    quadratic: float
    full: float
    equilibrium: float

    def to_dict(self) -> dict:
        return asdict(self)


def collision_operator(f: np.ndarray, kernels: KernelSet) -> np.ndarray:
    """``T[f] = -div(A[g] grad f - g grad a[f])`` with centred differences."""
    grid = kernels.grid
    eps = grid.eps
    g = f * (1.0 - eps * f)
    A = compute_A(g, kernels)
    _, grad_a = compute_potentials(f, kernels, with_potential=False)
    flux = _matvec(A, centered_gradient(f, grid.h)) - g * grad_a
    return -centered_divergence(flux, grid.h)


def expansion_fluxes(H: np.ndarray, ctx: LinearizedContext):
    """Order-1, 2 and 3 fluxes of ``-T[M + m H]`` in powers of ``H``."""
    K = ctx.kernels
    eps = ctx.grid.eps
    dx = ctx.grid.h
    phi = ctx.m_weight * H
    s = 1.0 - 2.0 * eps * ctx.M
    sphi = s * phi
    phi2 = phi * phi
    grad_phi = centered_gradient(phi, dx)
    _, grad_a_phi = compute_potentials(phi, K, with_potential=False)
    A_sphi = compute_A(sphi, K)
    A_phi2 = compute_A(phi2, K)
    F1 = (
        _matvec(ctx.A_m, grad_phi)
        + _matvec(A_sphi, ctx.grad_M)
        - ctx.m_weight * grad_a_phi
        - sphi * ctx.grad_aM
    )
    F2 = (
        _matvec(A_sphi, grad_phi)
        - eps * _matvec(A_phi2, ctx.grad_M)
        - sphi * grad_a_phi
        + eps * phi2 * ctx.grad_aM
    )
    F3 = -eps * _matvec(A_phi2, grad_phi) + eps * phi2 * grad_a_phi
    return F1, F2, F3


def gamma2(h: np.ndarray, ctx: LinearizedContext) -> np.ndarray:
    _, F2, _ = expansion_fluxes(h, ctx)
    return centered_divergence(F2, ctx.grid.h) / ctx.m_weight


def gamma3(h: np.ndarray, ctx: LinearizedContext) -> np.ndarray:
    _, _, F3 = expansion_fluxes(h, ctx)
    return centered_divergence(F3, ctx.grid.h) / ctx.m_weight


def nonlinear_consistency(
    h: np.ndarray, amplitude: float, ctx: LinearizedContext
) -> ConsistencyReport:
    """Compare ``-T[M + amplitude m h]`` with its expansion truncated at orders 1, 2, 3.

    Residuals are max-node values of ``m`` times the difference, divided by
    the max-node size of ``m L h`` at unit amplitude, so a truncation of
    order ``k`` leaves a residual scaling like ``amplitude**(k+1)``.
    """
    grid = ctx.grid
    h = _check_field(grid, h)
    f = ctx.M + amplitude * ctx.m_weight * h
    if np.min(f) < 0 or (grid.eps > 0 and np.max(grid.eps * f) > 1):
        raise ValueError("perturbed distribution leaves the admissible band [0, 1/eps]")
    dx = grid.h
    lhs = -collision_operator(f, ctx.kernels)
    base = -collision_operator(ctx.M, ctx.kernels)
    F1, F2, F3 = expansion_fluxes(amplitude * h, ctx)
    t1 = centered_divergence(F1, dx)
    t2 = centered_divergence(F2, dx)
    t3 = centered_divergence(F3, dx)
    scale = float(np.max(np.abs(centered_divergence(expansion_fluxes(h, ctx)[0], dx))))
    diff = lhs - base
    return ConsistencyReport(
        amplitude=float(amplitude),
        linear=float(np.max(np.abs(diff - t1))) / scale,
        quadratic=float(np.max(np.abs(diff - t1 - t2))) / scale,
        full=float(np.max(np.abs(diff - t1 - t2 - t3))) / scale,
        equilibrium=float(np.max(np.abs(base))) / scale,
    )
