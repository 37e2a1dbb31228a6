"""Post-processing of trajectories: distances, decay fits and moment series."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .grid import VelocityGrid, _check_field, weighted_norm

# RMS log-residual above which a power-law fit is flagged as a poor description
DEFAULT_FLAG_THRESHOLD = 0.05
MIN_FIT_POINTS = 8


def weighted_distance_to(grid: VelocityGrid, f: np.ndarray, M: np.ndarray) -> float:
    """``sum (f - M)^2 / (M(1 - eps M)) h^3``."""
    m = M * (1.0 - grid.eps * M)
    return float(np.sum((f - M) ** 2 / m)) * grid.weight


def weighted_distance(f: np.ndarray, ctx) -> float:
    f = _check_field(ctx.grid, f)
    return float(np.sum((f - ctx.M) ** 2 / ctx.m_weight)) * ctx.grid.weight


def weighted_distance_h(f: np.ndarray, ctx) -> float:
    """Same quantity through ``h = (f - M)/m``: ``sum m h^2 h^3``."""
    h = (_check_field(ctx.grid, f) - ctx.M) / ctx.m_weight
    return float(np.sum(ctx.m_weight * h * h)) * ctx.grid.weight


@dataclass
class DecayFit:
    window: tuple[float, float]
    N_fit: float
    residual: float
    points: int
    flagged: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fit_decay(
    t,
    d,
    window: tuple[float, float] | None = None,
    t0: float = 1.0,
    flag_threshold: float = DEFAULT_FLAG_THRESHOLD,
) -> DecayFit:
    """Least-squares fit of ``log d = c - N log(1 + t)`` on a window.

    The default window is ``[t0, t_max]``.  ``residual`` is the RMS of the
    log-residuals; fits above ``flag_threshold`` are flagged rather than
    dropped.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    if t.shape != d.shape:
        raise ValueError("t and d must have the same length")
    lo, hi = window if window is not None else (t0, float(np.max(t)))
    sel = (t >= lo) & (t <= hi)
    if np.count_nonzero(sel) < MIN_FIT_POINTS:
        raise ValueError(
            f"need at least {MIN_FIT_POINTS} points in [{lo}, {hi}], got {np.count_nonzero(sel)}"
        )
    if np.any(d[sel] <= 0):
        raise ValueError("series must be positive on the fit window")
    x = np.log1p(t[sel])
    y = np.log(d[sel])
    coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(x), x]), y, rcond=None)
    res = y - (coef[0] + coef[1] * x)
    rms = float(np.sqrt(np.mean(res**2)))
    return DecayFit(
        window=(float(lo), float(hi)),
        N_fit=float(-coef[1]),
        residual=rms,
        points=int(np.count_nonzero(sel)),
        flagged=bool(rms > flag_threshold),
    )


def moment_series(traj, s: float) -> np.ndarray:
    """``||f(t)||_{L^1_s}`` for every stored snapshot of a trajectory."""
    if s < 0:
        raise ValueError(f"moment order must be nonnegative, got {s}")
    return np.array([weighted_norm(traj.grid, f, 1, s) for f in traj.fields])


def conservation_drift(traj) -> dict:
    """Largest deviation of mass, momentum and energy from their initial values."""
    out = {}
    for name in ("mass", "px", "py", "pz", "energy"):
        col = traj.column(name)
        out[name] = float(np.max(np.abs(col - col[0])))
    return out


def is_nonincreasing(values, slack: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= slack))
