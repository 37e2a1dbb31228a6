"""Lagged-coefficient implicit Euler with an inner Picard loop.

One step solves, for the unknown f_k and a frozen inner iterate z,

    (f_k - f_{k-1})/tau = div( (A_{k-1} + delta1 I) grad f_k - grad a_{k-1} z+(1 - eps z)+ )
                          - delta2 |v|^m f_k

with A_{k-1} = A[f_{k-1}(1 - eps f_{k-1})] and a_{k-1} = a[f_{k-1}].

Spatial discretisation
----------------------
Each node owns the cube of side h around it (lumped mass h^3).  The cube is
split into 8 octants; octant ``s`` of node q is the corner of the dual element
spanned by q and q + s.  Inside an octant the gradient is the one-sided
difference along the three element edges leaving q, and the diffusion tensor
is the average of its 8 nodal values over that element.  The bilinear form

    sum_q sum_s (h^3/8) (B_qs f) . Abar_e (B_qs f)

is symmetric positive semidefinite for any PSD nodal tensor.  Octants poking
out of the box use the mirrored element with the normal difference set to
zero, which is the zero-flux condition.  With A = 0 the operator reduces to
the usual 7-point Neumann Laplacian.

The drift is an edge flux h^2 * mean(grad a) * mean(z+(1 - eps z)+) over the
two end nodes of every axis edge.

Away from the bulk the Coulomb tensor is strongly anisotropic and not
diagonally dominant, so the 19-point stencil has positive off-diagonals and
no discrete maximum principle.  Those entries are moved into lagged edge
fluxes (:class:`FluxCorrection`) and limited together with the drift fluxes,
which the centred average alone would let drain an empty node.  The implicit
part is then an M-matrix and every solve stays inside [0, 1/eps].

Rows and columns of every piece sum to zero, so mass moves only through the
solver residual.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .coefficients import (
    CoefficientField,
    KernelSet,
    compute_A,
    compute_potentials,
    pauli_source,
)
from .diagnostics import weighted_distance_to
from .entropy import dissipation, fermi_dirac_entropy, relative_entropy
from .equilibrium import EquilibriumParams, evaluate_equilibrium, fit_to_field
from .grid import VelocityGrid, _check_field, moments

OCTANTS = tuple(itertools.product((-1, 1), repeat=3))


class SolverError(RuntimeError):
    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class PicardError(RuntimeError):
    pass


class NumericalAbort(RuntimeError):
    def __init__(self, step: int, msg: str = ""):
        super().__init__(f"non-finite values at step {step}" + (f": {msg}" if msg else ""))
        self.step = step


@dataclass(frozen=True)
class StepConfig:
    tau: float | None = None  # None means h/2
    delta1: float = 0.0
    delta2: float = 0.0
    m_loc: float = 0.5
    picard_tol: float = 1e-11
    picard_max: int = 50
    lin_tol: float = 1e-11
    lin_max: int = 5000
    bound_limiter: bool = True

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.delta1 < 0 or self.delta2 < 0:
            raise ValueError("delta1 and delta2 must be nonnegative")
        if self.delta2 > 0 and not 0 < self.m_loc < 1:
            raise ValueError(f"m_loc must lie in (0, 1) when delta2 > 0, got {self.m_loc}")
        if not (self.picard_tol > 0 and self.lin_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.picard_max < 1 or self.lin_max < 1:
            raise ValueError("iteration limits must be at least 1")

    def resolved(self, grid: VelocityGrid) -> "StepConfig":
        return self if self.tau is not None else replace(self, tau=grid.h / 2)


@dataclass
class StepInfo:
    picard_iters: int
    lin_iters: int
    overshoot: float  # distance of the pre-clamp iterate outside [0, 1/eps]
    clamp: float  # max-node change made by the clamp
    mass_defect: float  # relative defect of the discrete mass identity


@dataclass
class DiagRecord:
    t: float
    mass: float
    px: float
    py: float
    pz: float
    energy: float
    H: float
    D: float
    H_rel: float
    wdist: float
    min_f: float
    max_f: float
    picard_iters: int
    lin_iters: int
    overshoot: float
    clamp: float
    mass_defect: float

    @classmethod
    def columns(cls) -> list[str]:
        return list(cls.__dataclass_fields__)

    def row(self) -> list:
        return list(asdict(self).values())


@dataclass
class Trajectory:
    grid: VelocityGrid
    config: StepConfig
    equilibrium: EquilibriumParams
    records: list[DiagRecord] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    fields: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None
    steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


# --- stencil -----------------------------------------------------------------


def _slices(off: int, n: int) -> tuple[slice, slice]:
    """(source, target) slices so that target[i + off] pairs with source[i]."""
    if off >= 0:
        return slice(0, n - off), slice(off, n)
    return slice(-off, n), slice(0, n + off)


def _shift_add(target: np.ndarray, src: np.ndarray, off) -> None:
    """target[q + off] += src[q] wherever q + off is a node."""
    n = src.shape[-1]
    s = tuple(_slices(o, n) for o in off)
    target[tuple(t for _, t in s)] += src[tuple(q for q, _ in s)]


def element_average(u: np.ndarray) -> np.ndarray:
    """Averages of a nodal field over the (N+1)^3 mirrored dual elements.

    Element E has padded corners E..E+1 per axis, i.e. nodes E-1 and E with
    out-of-box indices reflected onto the boundary node.
    """
    p = np.pad(u, [(0, 0)] * (u.ndim - 3) + [(1, 1)] * 3, mode="edge")
    acc = 0.0
    for a, b, c in itertools.product((0, 1), repeat=3):
        acc = acc + p[..., a : a + p.shape[-3] - 1, b : b + p.shape[-2] - 1, c : c + p.shape[-1] - 1]
    return acc / 8.0


def _octant_view(elem: np.ndarray, s) -> np.ndarray:
    """Element data for octant ``s`` of every node (element index i + (s+1)/2)."""
    N = elem.shape[-1] - 1
    idx = tuple(slice((sd + 1) // 2, (sd + 1) // 2 + N) for sd in s)
    return elem[(Ellipsis,) + idx]


def _inside_masks(N: int, s) -> list[np.ndarray]:
    """m_d(q) = 1 where q + s_d e_d is still a node."""
    out = []
    for d, sd in enumerate(s):
        m = np.ones(N)
        m[-1 if sd > 0 else 0] = 0.0
        shape = [1, 1, 1]
        shape[d] = N
        out.append(m.reshape(shape))
    return out


class Stencil:
    """Assembled 19-point operator stored as one coefficient band per offset."""

    def __init__(self, bands: dict, diag_extra: np.ndarray | None = None):
        self.bands = bands
        self.diagonal = bands[(0, 0, 0)] + (0.0 if diag_extra is None else diag_extra)
        n = self.diagonal.shape[0]
        self._pairs = []
        for off, band in bands.items():
            if off == (0, 0, 0):
                continue
            s = tuple(_slices(o, n) for o in off)
            rows = tuple(t for t, _ in s)  # row r, column r + off
            cols = tuple(c for _, c in s)
            self._pairs.append((band[rows], rows, cols))

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = self.diagonal * x
        for band, rows, cols in self._pairs:
            y[rows] += band * x[cols]
        return y

    def to_dense(self) -> np.ndarray:
        n = self.diagonal.size
        out = np.zeros((n, n))
        eye = np.zeros(self.diagonal.shape)
        for j in range(n):
            eye.flat[j] = 1.0
            out[:, j] = self.apply(eye).ravel()
            eye.flat[j] = 0.0
        return out


def assemble_diffusion(A_elem: np.ndarray, h: float) -> dict:
    """Bands of sum_q sum_s (h/8) (D_s f) . Abar (D_s f), D_s undivided one-sided differences."""
    N = A_elem.shape[-1] - 1
    bands: dict = {}

    def add(off, src, at):
        band = bands.setdefault(off, np.zeros((N, N, N)))
        _shift_add(band, src, at)

    for s in OCTANTS:
        Ab = _octant_view(A_elem, s)
        m = _inside_masks(N, s)
        unit = [tuple(s[d] if e == d else 0 for e in range(3)) for d in range(3)]
        c = [[(h / 8.0) * s[d] * s[e] * m[d] * m[e] * Ab[d, e] for e in range(3)] for d in range(3)]
        r = [c[d][0] + c[d][1] + c[d][2] for d in range(3)]
        add((0, 0, 0), r[0] + r[1] + r[2], (0, 0, 0))
        for d in range(3):
            # row q, column q + s_d e_d and its transpose
            add(unit[d], -r[d], (0, 0, 0))
            add(tuple(-o for o in unit[d]), -r[d], unit[d])
            for e in range(3):
                off = tuple(unit[e][k] - unit[d][k] for k in range(3))
                add(off, c[d][e], unit[d])
    return bands


def _axis_pair(d: int):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[d] = slice(0, -1)
    hi[d] = slice(1, None)
    return tuple(lo), tuple(hi)


def drift_edge_fluxes(grad_a: np.ndarray, B: np.ndarray, h: float) -> list:
    """Edge fluxes h^2 * mean(grad_a) * mean(B) as (lower node, upper node, flux).

    The lower node loses the flux and the upper node gains it.
    """
    out = []
    for d in range(3):
        lo, hi = _axis_pair(d)
        flux = (0.25 * h * h) * (grad_a[d][lo] + grad_a[d][hi]) * (B[lo] + B[hi])
        out.append((lo, hi, flux))
    return out


def drift_divergence(grad_a: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """Weak divergence of the drift grad_a * B (unlimited)."""
    out = np.zeros(B.shape)
    for lo, hi, flux in drift_edge_fluxes(grad_a, B, h):
        out[lo] -= flux
        out[hi] += flux
    return out


def limit_fluxes(pairs: list, base: np.ndarray, cap) -> np.ndarray:
    """Zalesak limiting of antisymmetric edge fluxes against node budgets.

    ``pairs`` holds (rows, cols, F) with F added to the row node and taken
    from the column node.  Each flux is scaled by alpha in [0, 1] so that
    ``base + sum alpha F`` stays inside [0, cap] at every node.
    """
    out = np.zeros_like(base)
    if not pairs:
        return out
    p_plus = np.zeros_like(base)
    p_minus = np.zeros_like(base)
    for rows, cols, F in pairs:
        p_plus[rows] += np.maximum(F, 0.0)
        p_minus[rows] += np.minimum(F, 0.0)
        p_plus[cols] += np.maximum(-F, 0.0)
        p_minus[cols] += np.minimum(-F, 0.0)
    q_minus = -np.maximum(base, 0.0)
    q_plus = np.maximum(cap - base, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_plus = np.where(p_plus > 0, np.minimum(1.0, q_plus / p_plus), 1.0)
        r_minus = np.where(p_minus < 0, np.minimum(1.0, q_minus / p_minus), 1.0)
    for rows, cols, F in pairs:
        alpha = np.where(
            F > 0,
            np.minimum(r_plus[rows], r_minus[cols]),
            np.minimum(r_minus[rows], r_plus[cols]),
        )
        out[rows] += alpha * F
        out[cols] -= alpha * F
    return out


class FluxCorrection:
    """Bound-preserving split of a zero-row-sum symmetric stencil.

    Positive off-diagonal entries s_ij (present wherever the nodal tensor is not
    diagonally dominant) are removed from the implicit operator, which leaves an
    M-matrix, and returned as conservative edge fluxes s_ij (z_i - z_j)
    evaluated at the lagged iterate.  These fluxes and the drift fluxes are
    limited together (:func:`limit_fluxes`) so that the right-hand side stays
    in [0, diag/eps] node by node; the M-matrix inverse is nonnegative, so
    every solve then respects 0 <= f <= 1/eps.  Where no limiting is needed
    the fixed point is that of the full stencil.
    """

    def __init__(self, bands: dict):
        n = bands[(0, 0, 0)].shape[0]
        self.edges = []
        low = {}
        for off, band in bands.items():
            if off == (0, 0, 0):
                continue
            low[off] = np.minimum(band, 0.0)
            if off > (0, 0, 0):
                s = tuple(_slices(o, n) for o in off)
                rows = tuple(q for q, _ in s)
                cols = tuple(t for _, t in s)
                anti = np.maximum(band[rows], 0.0)
                if np.any(anti > 0):
                    self.edges.append((rows, cols, anti))
        low[(0, 0, 0)] = -sum(low.values())
        self.low_bands = low

    @property
    def active(self) -> bool:
        return bool(self.edges)

    def pairs(self, z: np.ndarray) -> list:
        return [(rows, cols, anti * (z[rows] - z[cols])) for rows, cols, anti in self.edges]

    def fluxes(self, z: np.ndarray, base: np.ndarray, cap) -> np.ndarray:
        """Limited correction sum_j alpha_ij s_ij (z_i - z_j) for every node i."""
        return limit_fluxes(self.pairs(z), base, cap)


# --- linear solver -----------------------------------------------------------


def pcg(apply, b, diag, x0, tol, maxiter):
    """Jacobi-preconditioned CG stopping on ||r||_1 <= tol ||b||_1.

    The l1 test bounds the mass leaked by an inexact solve, since the operator
    has zero column sums apart from its reaction diagonal.
    """
    x = x0.copy()
    r = b - apply(x)
    bnorm = float(np.sum(np.abs(b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    target = tol * bnorm
    inv = 1.0 / diag
    z = inv * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = float(np.sum(np.abs(r)))
    it = 0
    while res > target:
        if it >= maxiter:
            raise SolverError(
                f"CG did not converge in {maxiter} iterations (l1 residual {res / bnorm:.3e})",
                it,
                res / bnorm,
            )
        Ap = apply(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        z = inv * r
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = float(np.sum(np.abs(r)))
        it += 1
    return x, it, res / bnorm


# --- stepping ----------------------------------------------------------------


def lagged_coefficients(f: np.ndarray, kernels: KernelSet) -> CoefficientField:
    """A[f(1 - eps f)] and grad a[f] for the step that starts from ``f``."""
    A = compute_A(pauli_source(f, kernels.grid.eps), kernels)
    _, grad_a = compute_potentials(f, kernels, with_potential=False)
    return CoefficientField(A=A, grad_a=grad_a)


def blocked(z: np.ndarray, eps: float) -> np.ndarray:
    """z+ (1 - eps z)+"""
    zp = np.maximum(z, 0.0)
    return zp * np.maximum(1.0 - eps * z, 0.0)


@dataclass
class StepSystem:
    """Frozen pieces of one time step: implicit operator and flux correction."""

    coeffs: CoefficientField
    op: Stencil
    correction: FluxCorrection | None


class Stepper:
    def __init__(self, grid: VelocityGrid, kernels: KernelSet, cfg: StepConfig):
        if kernels.grid != grid:
            raise ValueError("kernels were built for a different grid")
        self.grid = grid
        self.kernels = kernels
        self.cfg = cfg.resolved(grid)
        reaction = 1.0 / self.cfg.tau
        if self.cfg.delta2 > 0:
            reaction = reaction + self.cfg.delta2 * grid.speed2 ** (0.5 * self.cfg.m_loc)
        self._reaction = grid.weight * reaction * np.ones(grid.shape)
        self._cap = self._reaction / grid.eps if grid.eps > 0 else np.inf

    def system(self, coeffs: CoefficientField) -> StepSystem:
        A_elem = element_average(coeffs.A)
        if self.cfg.delta1:
            for d in range(3):
                A_elem[d, d] += self.cfg.delta1
        bands = assemble_diffusion(A_elem, self.grid.h)
        if self.cfg.bound_limiter:
            corr = FluxCorrection(bands)
            return StepSystem(coeffs, Stencil(corr.low_bands, self._reaction), corr)
        return StepSystem(coeffs, Stencil(bands, self._reaction), None)

    def drift(self, z: np.ndarray, coeffs: CoefficientField) -> np.ndarray:
        return drift_divergence(coeffs.grad_a, blocked(z, self.grid.eps), self.grid.h)

    def linearized_solve(
        self,
        f_prev: np.ndarray,
        z: np.ndarray,
        coeffs: CoefficientField,
        system: StepSystem | None = None,
        x0: np.ndarray | None = None,
    ) -> tuple[np.ndarray, int]:
        """One frozen-coefficient solve with the drift (and correction) taken at ``z``."""
        system = system or self.system(coeffs)
        base = self.grid.weight / self.cfg.tau * f_prev
        if system.correction is None:
            rhs = base + self.drift(z, coeffs)
        else:
            B = blocked(z, self.grid.eps)
            drift = [(hi, lo, F) for lo, hi, F in drift_edge_fluxes(coeffs.grad_a, B, self.grid.h)]
            rhs = base + limit_fluxes(system.correction.pairs(z) + drift, base, self._cap)
        x0 = f_prev if x0 is None else x0
        op = system.op
        f, it, _ = pcg(op.apply, rhs, op.diagonal, x0, self.cfg.lin_tol, self.cfg.lin_max)
        return f, it

    def picard_step(
        self, f_prev: np.ndarray, coeffs: CoefficientField | None = None
    ) -> tuple[np.ndarray, StepInfo]:
        grid, cfg = self.grid, self.cfg
        if coeffs is None:
            coeffs = lagged_coefficients(f_prev, self.kernels)
        system = self.system(coeffs)
        z = f_prev
        lin_total = 0
        for j in range(1, cfg.picard_max + 1):
            z_new, it = self.linearized_solve(f_prev, z, coeffs, system=system, x0=z)
            lin_total += it
            if not np.all(np.isfinite(z_new)):
                raise FloatingPointError("non-finite Picard iterate")
            change = float(np.max(np.abs(z_new - z)))
            z = z_new
            if change <= cfg.picard_tol:
                break
        else:
            raise PicardError(
                f"Picard iteration did not converge in {cfg.picard_max} sweeps "
                f"(last change {change:.3e}); reduce tau"
            )
        lo, hi = float(np.min(z)), float(np.max(z))
        over = max(0.0, -lo, hi - grid.pauli_bound)
        # mass identity ||f_k||_1 + tau delta2 ||f_k |v|^m||_1 = ||f_{k-1}||_1
        lhs = float(np.sum(self._reaction * z)) * cfg.tau
        ref = float(np.sum(f_prev)) * grid.weight
        defect = abs(lhs - ref) / ref if ref else 0.0
        f = np.clip(z, 0.0, grid.pauli_bound)
        clamp = float(np.max(np.abs(f - z)))
        return f, StepInfo(j, lin_total, over, clamp, defect)

    def diagnose(
        self,
        t: float,
        f: np.ndarray,
        coeffs: CoefficientField,
        M: np.ndarray,
        info: StepInfo | None,
    ) -> DiagRecord:
        grid = self.grid
        mv = moments(grid, f)
        D, _ = dissipation(f, self.kernels, A=coeffs.A)
        return DiagRecord(
            t=t,
            mass=mv.mass,
            px=float(mv.momentum[0]),
            py=float(mv.momentum[1]),
            pz=float(mv.momentum[2]),
            energy=mv.energy,
            H=fermi_dirac_entropy(grid, f),
            D=D,
            H_rel=relative_entropy(grid, f, M),
            wdist=weighted_distance_to(grid, f, M),
            min_f=float(np.min(f)),
            max_f=float(np.max(f)),
            picard_iters=info.picard_iters if info else 0,
            lin_iters=info.lin_iters if info else 0,
            overshoot=info.overshoot if info else 0.0,
            clamp=info.clamp if info else 0.0,
            mass_defect=info.mass_defect if info else 0.0,
        )

    def run(
        self,
        f_in: np.ndarray,
        T: float,
        cadence: int = 0,
        equilibrium: EquilibriumParams | None = None,
        start_step: int = 0,
        callback=None,
    ) -> Trajectory:
        """Advance to time T; fields are stored every ``cadence`` steps (0: none).

        Times are ``k * tau`` so that a restart from step k reproduces the
        uninterrupted run.  ``callback(k, f, traj)`` runs after every step,
        once the record of step k is in ``traj.records``.  A run resumed with
        ``start_step > 0`` does not record its starting state again, since
        the checkpoint already holds that record.
        """
        grid, cfg = self.grid, self.cfg
        f = _check_field(grid, f_in).copy()
        if np.min(f) < 0 or np.max(f) > grid.pauli_bound:
            raise ValueError("initial field violates 0 <= f <= 1/eps")
        if grid.eps > 0 and fermi_dirac_entropy(grid, f) >= 0:
            warnings.warn("initial Fermi-Dirac entropy is not negative", RuntimeWarning, stacklevel=2)
        params = equilibrium or fit_to_field(grid, f)
        M = evaluate_equilibrium(params, grid)
        traj = Trajectory(grid, cfg, params)
        n_steps = int(round(T / cfg.tau))
        if abs(n_steps * cfg.tau - T) > 1e-9 * max(T, 1.0):
            warnings.warn(f"T={T} is not a multiple of tau; running {n_steps} steps", stacklevel=2)
        k = start_step
        coeffs = lagged_coefficients(f, self.kernels)
        if start_step == 0:
            traj.records.append(self.diagnose(0.0, f, coeffs, M, None))
        if cadence and k % cadence == 0:
            traj.times.append(k * cfg.tau)
            traj.fields.append(f.copy())
        while k < n_steps:
            try:
                f, info = self.picard_step(f, coeffs)
            except FloatingPointError as exc:
                raise NumericalAbort(k + 1, str(exc)) from exc
            if not np.all(np.isfinite(f)):
                raise NumericalAbort(k + 1)
            k += 1
            coeffs = lagged_coefficients(f, self.kernels)
            traj.records.append(self.diagnose(k * cfg.tau, f, coeffs, M, info))
            if cadence and k % cadence == 0:
                traj.times.append(k * cfg.tau)
                traj.fields.append(f.copy())
            if callback is not None:
                callback(k, f, traj)
        traj.final = f
        traj.steps = k
        return traj


def linearized_solve(f_prev, z, coeffs, cfg: StepConfig, kernels: KernelSet):
    return Stepper(kernels.grid, kernels, cfg).linearized_solve(f_prev, z, coeffs)[0]


def picard_step(f_prev, kernels: KernelSet, cfg: StepConfig):
    return Stepper(kernels.grid, kernels, cfg).picard_step(f_prev)


def run(f_in, T, cfg: StepConfig, kernels: KernelSet, cadence: int = 0) -> Trajectory:
    return Stepper(kernels.grid, kernels, cfg).run(f_in, T, cadence=cadence)
