"""Fermi-Dirac steady states ``a exp(-b|v-u|^2) / (1 + eps a exp(-b|v-u|^2))``."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .grid import MomentVector, VelocityGrid


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class EquilibriumParams:
    a: float
    b: float
    u: np.ndarray
    eps: float
    residual: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"need a > 0 and b > 0, got a={self.a}, b={self.b}")
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(3))

    @property
    def peak(self) -> float:
        return self.a / (1.0 + self.eps * self.a)

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "u": [float(c) for c in self.u],
            "eps": self.eps,
            "residual": self.residual,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def centered_energy(rho: float, p, E: float) -> float:
    p = np.asarray(p, dtype=float)
    return E - float(p @ p) / rho


def saturation_epsilon(rho: float, p, E: float) -> float:
    """The one eps for which a saturated ball eps^-1 chi_B carries (rho, p, E)."""
    Ec = centered_energy(rho, p, E)
    if not Ec > 0:
        raise ValueError(f"centred energy must be positive, got {Ec}")
    R = np.sqrt(5.0 * Ec / (3.0 * rho))
    return 4.0 * np.pi * R**3 / (3.0 * rho)


# Radial integrals in s = sqrt(b)|v - u|:
#   mass = 4 pi b^{-3/2} int s^2 occ(s) ds,   Ec = 4 pi b^{-5/2} int s^4 occ(s) ds
# with occ(s) = a e^{-s^2} / (1 + q e^{-s^2}), q = eps a.


def _occupation(s, a, q):
    x = np.exp(-s * s)
    return a * x / (1.0 + q * x)


def _occupation_dloga(s, a, q):
    x = np.exp(-s * s)
    return a * x / (1.0 + q * x) ** 2


def _radial(fn, power: int, a: float, q: float) -> float:
    s_fermi = np.sqrt(np.log(q)) if q > 1 else 0.0
    upper = s_fermi + 12.0
    pts = [s_fermi] if s_fermi > 0 else None
    val, _ = quad(
        lambda s: s**power * fn(s, a, q),
        0.0,
        upper,
        points=pts,
        epsabs=0.0,
        epsrel=1e-13,
        limit=400,
    )
    return val


def _mass_energy(a: float, b: float, eps: float) -> tuple[float, float, float, float]:
    q = eps * a
    i2 = _radial(_occupation, 2, a, q)
    i4 = _radial(_occupation, 4, a, q)
    d2 = _radial(_occupation_dloga, 2, a, q)
    d4 = _radial(_occupation_dloga, 4, a, q)
    mass = 4 * np.pi * b**-1.5 * i2
    Ec = 4 * np.pi * b**-2.5 * i4
    return mass, Ec, d2 / i2, d4 / i4


def equilibrium_moments(params: EquilibriumParams) -> MomentVector:
    """Whole-space moments of the equilibrium by radial quadrature."""
    mass, Ec, _, _ = _mass_energy(params.a, params.b, params.eps)
    u = params.u
    return MomentVector(mass, mass * u, Ec + mass * float(u @ u))


def fit_fermi_dirac(
    rho: float,
    p,
    E: float,
    eps: float,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> EquilibriumParams:
    """Solve for (a, b, u) matching mass, momentum and energy.

    Damped Newton in (log a, log b) on the log-residuals of mass and centred
    energy, started from the Maxwellian closed form.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    if not rho > 0:
        raise ValueError(f"mass must be positive, got {rho}")
    Ec = centered_energy(rho, p, E)
    if not Ec > 0:
        raise ValueError(f"centred energy must be positive, got {Ec}")
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    if eps > 0:
        eps_sat = saturation_epsilon(rho, p, E)
        if eps >= eps_sat:
            raise FitError(
                f"eps={eps} is at or above the saturation threshold {eps_sat}; "
                "no smooth Fermi-Dirac equilibrium exists"
            )
    u = p / rho
    b = 1.5 * rho / Ec
    a = rho * (b / np.pi) ** 1.5
    x = np.log([a, b])
    target = np.log([rho, Ec])

    def residual(x):
        mass, ec, da, db = _mass_energy(np.exp(x[0]), np.exp(x[1]), eps)
        r = np.log([mass, ec]) - target
        J = np.array([[da, -1.5], [db, -2.5]])
        return r, J

    r, J = residual(x)
    for _ in range(max_iter):
        norm = np.max(np.abs(r))
        if norm <= tol:
            break
        step = np.linalg.solve(J, -r)
        # cap the step in log space, then backtrack
        step *= min(1.0, 2.0 / np.max(np.abs(step)))
        lam = 1.0
        while True:
            r_new, J_new = residual(x + lam * step)
            if np.max(np.abs(r_new)) < (1 - 1e-4 * lam) * norm or lam < 1e-6:
                break
            lam *= 0.5
        x = x + lam * step
        r, J = r_new, J_new
    norm = float(np.max(np.abs(r)))
    if norm > tol:
        raise FitError(f"Newton did not converge: residual {norm:.3e} after {max_iter} iterations")
    a, b = np.exp(x)
    # relative moment residual of the returned parameters
    mass, ec, _, _ = _mass_energy(a, b, eps)
    res = max(abs(mass / rho - 1), abs(ec / Ec - 1))
    return EquilibriumParams(float(a), float(b), u, float(eps), float(res))


def fit_to_field(grid: VelocityGrid, f: np.ndarray, moments_fn=None) -> EquilibriumParams:
    """Equilibrium carrying the grid moments of ``f``."""
    from .grid import moments

    m = moments(grid, f)
    return fit_fermi_dirac(m.mass, m.momentum, m.energy, grid.eps)


def evaluate_equilibrium(params: EquilibriumParams, grid: VelocityGrid) -> np.ndarray:
    v = grid.nodes - params.u[:, None, None, None]
    x = np.exp(-params.b * (v[0] ** 2 + v[1] ** 2 + v[2] ** 2))
    return params.a * x / (1.0 + params.eps * params.a * x)
