"""
Time integration of the coupled temperature / concentration system

    theta_t = kappa lap(theta) + tau sum_i grad^delta0(u_i) . grad(theta)
    u_i,t   = kappa_i lap(u_i) + tau_i G(theta) . grad(u_i) + R_i(u)

with homogeneous Neumann data. G(theta) is grad^epsilon(theta) for epsilon > 0 and
the raw gradient for epsilon = 0; R_i is replaced by the truncated R_in when a
clamp level n is set. Only grad(theta) is mollified in the species equations.

Two schemes are provided: IMEX (implicit diffusion, explicit upwinded transport
and reaction) and a Picard outer iteration that repeatedly solves the linearized
problem with frozen concentrations until successive iterates agree.
"""

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import scipy.sparse as sps
from humanfriendly import format_timespan
from scipy.sparse import linalg as spla

from .errors import BlowUp, InvariantViolation, LinearSolveFailure, PicardDivergence
from .grid import (
    Grid,
    ScalarField,
    VectorField,
    gradient,
    l2_distance,
    laplacian_matrix,
    upwind_transport,
    upwind_transport_matrix,
)
from .kinetics import BetaMatrix, reaction, reaction_truncated
from .mollifier import Extension, GradientMode, build_kernel, smoothed_gradient

if TYPE_CHECKING:
    from .diagnostics import Observer, SeriesRecord, Violation

logger = logging.getLogger(__name__)

# Any sup norm above this aborts the run
BLOW_UP_THRESHOLD = 1e12

# Consecutive non-decreasing Picard residuals tolerated before giving up
PICARD_STALL_LIMIT = 3


class Scheme(StrEnum):
    IMEX = "imex"
    PICARD = "picard"


class LinearSolver(StrEnum):
    DIRECT = "direct"
    ITERATIVE = "iterative"


class Problem(StrEnum):
    """Which member of the approximation family the parameters select."""

    P = "P"
    # Truncated reaction without mollification
    P_N = "P_n"
    P_EPSILON = "P_eps"
    P_EPSILON_N = "P_eps_n"


@dataclass(frozen=True, eq=False)
class ModelParams:
    kappa: float
    kappa_i: tuple[float, ...]
    tau: float
    tau_i: tuple[float, ...]
    delta0: float
    epsilon: float
    n_clamp: float | None
    beta: BetaMatrix

    def __post_init__(self) -> None:
        object.__setattr__(self, "kappa_i", tuple(float(k) for k in self.kappa_i))
        object.__setattr__(self, "tau_i", tuple(float(t) for t in self.tau_i))
        n = self.beta.n_species
        if len(self.kappa_i) != n or len(self.tau_i) != n:
            raise ValueError(
                f"kappa_i and tau_i need {n} entries, "
                + f"got {len(self.kappa_i)} and {len(self.tau_i)}"
            )
        if not self.kappa > 0 or any(not k > 0 for k in self.kappa_i):
            raise ValueError("Diffusivities must be positive")
        if self.tau < 0 or any(t < 0 for t in self.tau_i):
            raise ValueError("Coupling constants must be nonnegative")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.n_clamp is not None and self.n_clamp < 0:
            raise ValueError("n_clamp must be nonnegative")

    @property
    def n_species(self) -> int:
        return self.beta.n_species

    @property
    def problem(self) -> Problem:
        if self.epsilon == 0:
            return Problem.P if self.n_clamp is None else Problem.P_N
        if self.n_clamp is None:
            return Problem.P_EPSILON
        return Problem.P_EPSILON_N


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.IMEX
    dt: float = 1e-3
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    linear_solve_tol: float = 1e-10
    clamp_negative: bool = False
    linear_solver: LinearSolver = LinearSolver.DIRECT
    mollifier_extension: Extension = Extension.REFLECT
    mollifier_gradient: GradientMode = GradientMode.DISCRETE

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.picard_tol > 0 or not self.linear_solve_tol > 0:
            raise ValueError("Tolerances must be positive")
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class State:
    t: float
    theta: ScalarField
    u: tuple[ScalarField, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", tuple(self.u))
        for field_ in self.u:
            self.theta.grid.check(field_.grid)

    @property
    def grid(self) -> Grid:
        return self.theta.grid

    @property
    def n_species(self) -> int:
        return len(self.u)

    def species(self) -> np.ndarray:
        """Concentrations stacked as (N, *grid_shape)."""
        return np.stack([u_i.values for u_i in self.u])

    def fields(self) -> dict[str, ScalarField]:
        named = {"theta": self.theta}
        named.update({f"u{i + 1}": u_i for i, u_i in enumerate(self.u)})
        return named

    def is_finite(self) -> bool:
        return all(f.is_finite() for f in self.fields().values())


class StabilityAdvisory(NamedTuple):
    """dt <= min(h / (2 V_max), 1 / (2 beta_max U_max)); inf when a term vanishes."""

    dt_max: float
    v_max: float
    u_max: float


class PicardResult(NamedTuple):
    state: State
    iterations: int
    final_residual: float
    residuals: list[float]

    @property
    def contraction(self) -> float:
        """Largest ratio of successive residuals (0 when fewer than two)."""
        ratios = [
            b / a for a, b in zip(self.residuals, self.residuals[1:]) if a > 0.0
        ]
        return max(ratios, default=0.0)


def _jacobi(matrix: sps.csr_matrix) -> spla.LinearOperator:
    inverse = 1.0 / matrix.diagonal()
    return spla.LinearOperator(matrix.shape, matvec=lambda x: inverse * x)


class _Solve:
    """One implicit solve with a residual check."""

    def __init__(
        self, method: LinearSolver, tolerance: float, weights: np.ndarray | None
    ) -> None:
        self.method = method
        self.tolerance = tolerance
        self.weights = weights

    def __call__(
        self,
        matrix: sps.csr_matrix,
        rhs: np.ndarray,
        name: str,
        factor: Callable[[np.ndarray], np.ndarray] | None = None,
        symmetric: bool = False,
    ) -> np.ndarray:
        b = rhs.ravel()
        scale = float(np.linalg.norm(b))
        if scale == 0.0:
            return np.zeros_like(rhs)
        if self.method is LinearSolver.DIRECT:
            x = factor(b) if factor is not None else spla.spsolve(matrix.tocsc(), b)
        elif symmetric and self.weights is not None:
            # W A is symmetric positive definite for the reflecting Laplacian
            w = self.weights.ravel()
            weighted = sps.diags(w) @ matrix
            x, _ = spla.cg(
                weighted,
                w * b,
                x0=b,
                rtol=self.tolerance / 4,
                atol=0.0,
                M=_jacobi(weighted),
            )
        else:
            x, _ = spla.bicgstab(
                matrix, b, x0=b, rtol=self.tolerance / 4, atol=0.0, M=_jacobi(matrix)
            )
        residual = float(np.linalg.norm(matrix @ x - b)) / scale
        if not residual <= self.tolerance:
            raise LinearSolveFailure(name, residual, self.tolerance)
        return x.reshape(rhs.shape)


class Stepper:
    """Holds the grid operators, mollifiers and factorizations for one run."""

    def __init__(self, grid: Grid, params: ModelParams, cfg: SchemeConfig) -> None:
        self.grid = grid
        self.params = params
        self.cfg = cfg
        self.kernel_delta0 = build_kernel(
            params.delta0, grid, cfg.mollifier_extension, cfg.mollifier_gradient
        )
        self.kernel_epsilon = (
            build_kernel(
                params.epsilon, grid, cfg.mollifier_extension, cfg.mollifier_gradient
            )
            if params.epsilon > 0
            else None
        )
        self.laplacian = laplacian_matrix(grid)
        self.identity = sps.identity(grid.size, format="csr")
        self.solve = _Solve(cfg.linear_solver, cfg.linear_solve_tol, grid.weights)
        self._diffusion: dict[tuple[float, float], tuple[sps.csr_matrix, Callable]] = {}
        self._advisory_warned = False

    # -- operator pieces -------------------------------------------------------

    def theta_velocity(self, u: Sequence[ScalarField]) -> VectorField:
        """tau * sum_i grad^delta0(u_i)."""
        velocity = VectorField.zeros(self.grid)
        if self.params.tau == 0:
            return velocity
        for u_i in u:
            velocity = velocity + smoothed_gradient(self.kernel_delta0, u_i)
        return velocity.scaled(self.params.tau)

    def theta_gradient(self, theta: ScalarField) -> VectorField:
        """grad^epsilon(theta), or grad(theta) for problem P."""
        if self.kernel_epsilon is None:
            return gradient(theta)
        return smoothed_gradient(self.kernel_epsilon, theta)

    def reaction_terms(self, species: np.ndarray) -> np.ndarray:
        if self.params.n_clamp is None:
            return reaction(species, self.params.beta)
        return reaction_truncated(species, self.params.beta, self.params.n_clamp)

    def advisory(self, state: State) -> StabilityAdvisory:
        theta_grad = self.theta_gradient(state.theta)
        v_max = float(self.theta_velocity(state.u).l1_magnitude().max())
        grad_max = float(theta_grad.l1_magnitude().max())
        v_max = max(v_max, max(self.params.tau_i, default=0.0) * grad_max)
        u_max = float(np.maximum(state.species(), 0.0).sum(axis=0).max(initial=0.0))
        beta_max = self.params.beta.beta0
        h = min(self.grid.spacing)
        limits = [math.inf]
        if v_max > 0:
            limits.append(h / (2.0 * v_max))
        if beta_max * u_max > 0:
            limits.append(1.0 / (2.0 * beta_max * u_max))
        return StabilityAdvisory(min(limits), v_max, u_max)

    def _check_advisory(self, state: State) -> None:
        advisory = self.advisory(state)
        if self.cfg.dt <= advisory.dt_max * (1 + 1e-12):
            return
        message = (
            f"dt={self.cfg.dt:.3e} exceeds the stability advisory "
            + f"{advisory.dt_max:.3e} at t={state.t:.6g} "
            + f"(V_max={advisory.v_max:.3e}, U_max={advisory.u_max:.3e})"
        )
        if not self._advisory_warned:
            logger.warning(message)
            self._advisory_warned = True
        else:
            logger.debug(message)

    def _diffusion_operator(
        self, diffusivity: float
    ) -> tuple[sps.csr_matrix, Callable | None]:
        key = (diffusivity, self.cfg.dt)
        if key not in self._diffusion:
            matrix = self.identity - self.cfg.dt * diffusivity * self.laplacian
            matrix = matrix.tocsr()
            factor = (
                spla.factorized(matrix.tocsc())
                if self.cfg.linear_solver is LinearSolver.DIRECT
                else None
            )
            self._diffusion[key] = (matrix, factor)
        return self._diffusion[key]

    def _diffuse(self, rhs: np.ndarray, diffusivity: float, name: str) -> np.ndarray:
        matrix, factor = self._diffusion_operator(diffusivity)
        return self.solve(matrix, rhs, name, factor=factor, symmetric=True)

    def _implicit(
        self, rhs: np.ndarray, diffusivity: float, velocity: VectorField, name: str
    ) -> np.ndarray:
        """Solve (I - dt (D lap + velocity . grad_upwind)) x = rhs."""
        if not any(np.any(c) for c in velocity.components):
            return self._diffuse(rhs, diffusivity, name)
        matrix = (
            self.identity
            - self.cfg.dt
            * (diffusivity * self.laplacian + upwind_transport_matrix(velocity))
        ).tocsr()
        factor = (
            spla.factorized(matrix.tocsc())
            if self.cfg.linear_solver is LinearSolver.DIRECT
            else None
        )
        return self.solve(matrix, rhs, name, factor=factor)

    def _finish(self, t: float, theta: np.ndarray, u: list[np.ndarray]) -> State:
        if self.cfg.clamp_negative:
            theta = np.maximum(theta, 0.0)
            u = [np.maximum(u_i, 0.0) for u_i in u]
        state = State(
            t,
            ScalarField(self.grid, theta),
            tuple(ScalarField(self.grid, u_i) for u_i in u),
        )
        for name, f in state.fields().items():
            sup = float(np.max(np.abs(f.values)))
            if not math.isfinite(sup) or sup > BLOW_UP_THRESHOLD:
                raise BlowUp(name, t, sup)
        return state

    # -- schemes ---------------------------------------------------------------

    def step_imex(self, state: State) -> State:
        dt = self.cfg.dt
        self._check_advisory(state)
        theta = state.theta
        theta_rhs = theta.values + dt * upwind_transport(
            self.theta_velocity(state.u), theta
        )
        theta_grad = self.theta_gradient(theta)
        rates = self.reaction_terms(state.species())
        u_new = []
        for i, u_i in enumerate(state.u):
            rhs = u_i.values + dt * rates[i]
            if self.params.tau_i[i] != 0:
                rhs = rhs + dt * upwind_transport(
                    theta_grad.scaled(self.params.tau_i[i]), u_i
                )
            u_new.append(self._diffuse(rhs, self.params.kappa_i[i], f"u{i + 1}"))
        theta_new = self._diffuse(theta_rhs, self.params.kappa, "theta")
        return self._finish(state.t + dt, theta_new, u_new)

    def step_picard(self, state: State) -> PicardResult:
        dt = self.cfg.dt
        self._check_advisory(state)
        theta_k, u_k = state.theta, state.u
        residuals: list[float] = []
        stalled = 0
        for iteration in range(1, self.cfg.picard_max_iters + 1):
            theta_values = self._implicit(
                state.theta.values,
                self.params.kappa,
                self.theta_velocity(u_k),
                "theta",
            )
            theta_next = ScalarField(self.grid, theta_values)
            theta_grad = self.theta_gradient(theta_next)
            rates = self.reaction_terms(np.stack([f.values for f in u_k]))
            u_next = []
            for i, u_i in enumerate(state.u):
                values = self._implicit(
                    u_i.values + dt * rates[i],
                    self.params.kappa_i[i],
                    theta_grad.scaled(self.params.tau_i[i]),
                    f"u{i + 1}",
                )
                u_next.append(ScalarField(self.grid, values))

            residual = math.sqrt(
                l2_distance(theta_next, theta_k) ** 2
                + sum(l2_distance(a, b) ** 2 for a, b in zip(u_next, u_k))
            )
            if residuals and residual >= residuals[-1]:
                stalled += 1
            else:
                stalled = 0
            residuals.append(residual)
            theta_k, u_k = theta_next, tuple(u_next)

            if residual < self.cfg.picard_tol:
                new_state = self._finish(
                    state.t + dt, theta_k.values, [f.values for f in u_k]
                )
                return PicardResult(new_state, iteration, residual, residuals)
            if stalled >= PICARD_STALL_LIMIT:
                break
        raise PicardDivergence(state.t, len(residuals), residuals)

    def step(self, state: State) -> tuple[State, PicardResult | None]:
        if self.cfg.scheme is Scheme.PICARD:
            result = self.step_picard(state)
            return result.state, result
        return self.step_imex(state), None


def step_imex(state: State, params: ModelParams, cfg: SchemeConfig) -> State:
    if cfg.scheme is not Scheme.IMEX:
        raise ValueError(f"step_imex called with scheme={cfg.scheme}")
    return Stepper(state.grid, params, cfg).step_imex(state)


def step_picard(state: State, params: ModelParams, cfg: SchemeConfig) -> PicardResult:
    if cfg.scheme is not Scheme.PICARD:
        raise ValueError(f"step_picard called with scheme={cfg.scheme}")
    return Stepper(state.grid, params, cfg).step_picard(state)


@dataclass
class Trajectory:
    """Result of simulate: the final state and everything the observers saw."""

    initial: State
    final: State
    steps: int
    dt: float
    series: list["SeriesRecord"] = field(default_factory=list)
    violations: list["Violation"] = field(default_factory=list)
    picard: list[tuple[float, int, float, float]] = field(default_factory=list)
    advisory: StabilityAdvisory | None = None
    wall_time: float = 0.0

    def summary(self) -> dict[str, float]:
        """Maximum over the run of every recorded series value, plus run totals."""
        maxima: dict[str, float] = {}
        for record in self.series:
            for key, value in record.values.items():
                maxima[key] = max(value, maxima.get(key, -math.inf))
        summary = {f"max_{key}": value for key, value in sorted(maxima.items())}
        summary["steps"] = float(self.steps)
        summary["dt"] = self.dt
        summary["t_final"] = self.final.t
        summary["soft_violations"] = float(len(self.violations))
        if self.picard:
            summary["max_picard_iterations"] = float(max(p[1] for p in self.picard))
            summary["max_picard_contraction"] = max(p[3] for p in self.picard)
        return summary


def resolve_steps(horizon: float, dt: float) -> tuple[int, float]:
    """Number of uniform steps reaching the horizon exactly, and their size."""
    if horizon <= 0:
        return 0, dt
    steps = max(1, math.ceil(horizon / dt - 1e-9))
    return steps, horizon / steps


def simulate(
    initial: State,
    params: ModelParams,
    cfg: SchemeConfig,
    horizon: float,
    observers: Sequence["Observer"] = (),
    snapshot_every: int = 0,
    on_snapshot: Callable[[int, State], None] | None = None,
) -> Trajectory:
    """Advance `initial` to t + horizon, calling observers after every step whose
    index is a multiple of their stride (and after the last step)."""
    if horizon < 0:
        raise ValueError(f"Horizon must be nonnegative, got {horizon!r}")
    steps, dt = resolve_steps(horizon, cfg.dt)
    if dt != cfg.dt:
        logger.debug(f"Adjusted dt from {cfg.dt!r} to {dt!r} to land on T={horizon}")
        cfg = replace(cfg, dt=dt)

    stepper = Stepper(initial.grid, params, cfg)
    trajectory = Trajectory(
        initial=initial,
        final=initial,
        steps=steps,
        dt=dt,
        advisory=stepper.advisory(initial),
    )
    if on_snapshot is not None:
        on_snapshot(0, initial)

    start = time.monotonic()
    state = initial
    for n in range(1, steps + 1):
        state, picard = stepper.step(state)
        if picard is not None:
            trajectory.picard.append(
                (state.t, picard.iterations, picard.final_residual, picard.contraction)
            )

        values: dict[str, float] = {}
        for observer in observers:
            if not observer.due(n, last=n == steps):
                continue
            record, violation = observer(state)
            values.update(record.values)
            if violation is None:
                continue
            if violation.hard:
                raise InvariantViolation(
                    violation.kind, violation.t, violation.margin, violation.detail
                )
            logger.warning(f"Soft invariant violation: {violation}")
            trajectory.violations.append(violation)
        if values:
            if picard is not None:
                values["picard_iterations"] = float(picard.iterations)
                values["picard_residual"] = picard.final_residual
                values["picard_contraction"] = picard.contraction
            from .diagnostics import SeriesRecord

            trajectory.series.append(SeriesRecord(state.t, values))

        if on_snapshot is not None and (
            n == steps or (snapshot_every > 0 and n % snapshot_every == 0)
        ):
            on_snapshot(n, state)

    trajectory.final = state
    trajectory.wall_time = time.monotonic() - start
    logger.info(
        f"Simulated {params.problem} with {cfg.scheme} to t={state.t:.6g} in "
        + f"{steps} steps ({format_timespan(trajectory.wall_time)})"
    )
    return trajectory
