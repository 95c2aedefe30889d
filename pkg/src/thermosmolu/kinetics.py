"""
Smoluchowski coagulation kinetics for N cluster sizes and the comparison ODE
hierarchy whose solutions bound the concentrations from above.

Species are numbered 1..N in the documentation and stored 0-based. Every function
accepts either one state vector of shape (N,) or a stack of states shaped
(N, *grid_shape), so the reaction can be evaluated over a whole grid at once.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DimensionMismatch, EnvelopeHorizonExceeded, NonPositiveStep

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BetaMatrix:
    """Symmetric, nonnegative coagulation rates beta[k][j] between sizes k+1 and j+1."""

    beta: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        beta = np.array(self.beta, dtype=np.float64, ndmin=2)
        if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
            raise ValueError(f"beta must be a square matrix, got shape {beta.shape}")
        if not np.all(np.isfinite(beta)) or np.any(beta < 0):
            raise ValueError("beta entries must be finite and nonnegative")
        asymmetric = np.argwhere(~np.isclose(beta, beta.T, rtol=1e-12, atol=0.0))
        if asymmetric.size:
            k, j = (int(i) + 1 for i in asymmetric[0])
            raise ValueError(
                f"beta must be symmetric: beta[{k}][{j}]={beta[k - 1, j - 1]!r} "
                + f"!= beta[{j}][{k}]={beta[j - 1, k - 1]!r}"
            )
        object.__setattr__(self, "beta", beta)

    @classmethod
    def constant(cls, n_species: int, value: float) -> "BetaMatrix":
        return cls(np.full((n_species, n_species), float(value)))

    @property
    def n_species(self) -> int:
        return int(self.beta.shape[0])

    @cached_property
    def beta0(self) -> float:
        """Largest rate; dominates every gain term in the comparison hierarchy."""
        return float(self.beta.max())

    def diagonal(self) -> np.ndarray:
        return np.diag(self.beta).copy()


def _check_species(u: np.ndarray, beta: BetaMatrix) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0 or u.shape[0] != beta.n_species:
        raise DimensionMismatch(beta.n_species, 0 if u.ndim == 0 else u.shape[0])
    return u


def reaction(u: np.ndarray, beta: BetaMatrix) -> np.ndarray:
    """R_i(u) = 1/2 sum_{k+j=i} beta_kj u_k+ u_j+ - sum_{j=1..N} beta_ij u_i+ u_j+."""
    u = _check_species(u, beta)
    p = np.maximum(u, 0.0)
    rates = beta.beta
    loss = p * np.tensordot(rates, p, axes=1)
    gain = np.zeros_like(p)
    for i in range(2, beta.n_species + 1):
        for k in range(1, i):
            j = i - k
            gain[i - 1] += rates[k - 1, j - 1] * p[k - 1] * p[j - 1]
    return 0.5 * gain - loss


def clamp(r: float | np.ndarray, n: float) -> float | np.ndarray:
    """sigma_n: n above n, r on [0, n], 0 below zero."""
    if n < 0:
        raise ValueError(f"Clamp level must be nonnegative, got {n!r}")
    clamped = np.clip(r, 0.0, n)
    if np.ndim(clamped) == 0:
        return float(clamped)
    return clamped


def reaction_truncated(u: np.ndarray, beta: BetaMatrix, n: float) -> np.ndarray:
    """R_in(u) = R_i(sigma_n(u_1), ..., sigma_n(u_N))."""
    u = _check_species(u, beta)
    return reaction(np.asarray(clamp(u, n)), beta)


def size_weights(n_species: int) -> np.ndarray:
    """Cluster sizes 1..N, the weights of the mass moment sum_i i u_i."""
    return np.arange(1, n_species + 1, dtype=np.float64)


def mass_moment_rate(u: np.ndarray, beta: BetaMatrix) -> np.ndarray:
    """sum_i i R_i(u); never positive since mass leaves through sizes above N."""
    rates = reaction(u, beta)
    return np.tensordot(size_weights(beta.n_species), rates, axes=1)


def envelope_rhs(beta: BetaMatrix, y: np.ndarray) -> np.ndarray:
    """y_i' = beta0/2 * sum_{k<i} y_k^2 - beta_ii y_i^2 (triangular in i)."""
    squares = y * y
    lower = np.concatenate(([0.0], np.cumsum(squares)[:-1]))
    return 0.5 * beta.beta0 * lower - beta.diagonal() * squares


@dataclass(frozen=True, eq=False)
class Envelope:
    times: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    y_inf_bound: np.ndarray
    beta: BetaMatrix = field(repr=False)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def c_star(self) -> float:
        """Largest envelope value over the horizon and all species."""
        return float(self.y_inf_bound.max()) if self.y_inf_bound.size else 0.0

    @cached_property
    def _spline(self) -> CubicHermiteSpline | None:
        if self.times.size < 2:
            return None
        slopes = np.array([envelope_rhs(self.beta, row) for row in self.y])
        return CubicHermiteSpline(self.times, self.y, slopes, axis=0)

    def at(self, t: float) -> np.ndarray:
        """Envelope values y_i(t), cubic Hermite between integrator nodes."""
        slack = 1e-12 * max(1.0, abs(self.horizon))
        if t > self.horizon + slack or t < -slack:
            raise EnvelopeHorizonExceeded(t, self.horizon)
        spline = self._spline
        if spline is None:
            return self.y[0].copy()
        return np.maximum(np.asarray(spline(min(max(t, 0.0), self.horizon))), 0.0)


def solve_envelope(
    beta: BetaMatrix, y0: np.ndarray, horizon: float, dt: float
) -> Envelope:
    """Classical RK4 on the comparison hierarchy with uniform steps no larger than dt
    that land exactly on the horizon."""
    if not dt > 0:
        raise NonPositiveStep(dt)
    y = np.array(y0, dtype=np.float64)
    if y.shape != (beta.n_species,):
        raise DimensionMismatch(beta.n_species, y.size)
    if np.any(y < 0):
        raise ValueError("Envelope initial values must be nonnegative")
    if horizon < 0:
        raise ValueError(f"Envelope horizon must be nonnegative, got {horizon!r}")

    steps = max(0, math.ceil(horizon / dt - 1e-9))
    times = np.linspace(0.0, horizon, steps + 1)
    h = horizon / steps if steps else 0.0
    trajectory = np.empty((steps + 1, beta.n_species))
    trajectory[0] = y
    for n in range(steps):
        k1 = envelope_rhs(beta, y)
        k2 = envelope_rhs(beta, y + 0.5 * h * k1)
        k3 = envelope_rhs(beta, y + 0.5 * h * k2)
        k4 = envelope_rhs(beta, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        trajectory[n + 1] = y

    logger.debug(
        f"Envelope solved to t={horizon:.6g} in {steps} steps, "
        + f"C*={trajectory.max(initial=0.0):.6g}"
    )
    return Envelope(
        times=times,
        y=trajectory,
        y_inf_bound=trajectory.max(axis=0),
        beta=beta,
    )


def default_envelope_dt(beta: BetaMatrix) -> float:
    """1e-3 * min(1, 1/max beta)."""
    return 1e-3 * min(1.0, 1.0 / beta.beta0) if beta.beta0 > 0 else 1e-3
