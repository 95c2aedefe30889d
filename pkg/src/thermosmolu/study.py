"""
Convergence studies: a family of runs ("levels") differing by a factor of 2 in one
parameter, compared in the discrete L2(Q(T)) norm on the coarsest grid at common
sample times.

    dt_refinement     dt halves per level
    h_refinement      grid spacing halves per level, dt fixed
    epsilon_sweep     epsilon halves per level, plus one run with epsilon = 0
    scheme_agreement  dt halves per level, IMEX and Picard run at every level

When the run is a pure heat mode (no coupling, no reaction, constant or cosine
initial data) the refinement studies compare each level with the exact solution
instead of with the next level.
"""

import concurrent.futures
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .config.exceptions import ConsistencyError
from .configuration import RunConfig, StudyKind, StudySpec
from .errors import InvariantViolation, NumericalFailure
from .grid import Grid, ScalarField, l2_distance, restrict
from .initial import FieldKind, FieldSpec, cosine_mode, per_axis
from .simulation import run_simulation
from .timestepper import Scheme, State, resolve_steps
from .utils import worker_count

logger = logging.getLogger(__name__)

REFINEMENT_FACTOR = 2


@dataclass(frozen=True)
class Level:
    label: str
    config: RunConfig


@dataclass
class LevelResult:
    label: str
    dt: float
    cells: tuple[int, ...]
    epsilon: float
    scheme: str
    samples: list[State] = field(default_factory=list, repr=False)
    soft_violations: int = 0
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def as_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "dt": self.dt,
            "cells": list(self.cells),
            "epsilon": self.epsilon,
            "scheme": self.scheme,
            "soft_violations": self.soft_violations,
            "failure": self.failure,
        }


@dataclass
class StudyReport:
    kind: StudyKind
    reference: str
    levels: list[LevelResult]
    # One entry per compared level (or level pair); None where a run failed
    parameters: list[float]
    errors: list[float | None]
    order: float | None
    # epsilon_sweep only: distance of every level from the epsilon = 0 run
    distance_to_limit: list[float | None] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "reference": self.reference,
            "levels": [level.as_dict() for level in self.levels],
            "parameters": self.parameters,
            "errors": self.errors,
            "order": self.order,
            "distance_to_limit": self.distance_to_limit,
        }


def observed_order(
    parameters: Sequence[float], errors: Sequence[float | None]
) -> float | None:
    """Least-squares slope of log(error) against log(parameter)."""
    pairs = [
        (p, e) for p, e in zip(parameters, errors) if e is not None and e > 0 and p > 0
    ]
    if len(pairs) < 2:
        return None
    x = np.log([p for p, _ in pairs])
    y = np.log([e for _, e in pairs])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def sample_times(horizon: float, samples: int) -> list[float]:
    return [horizon * j / samples for j in range(1, samples + 1)]


def sample_steps(steps: int, samples: int) -> list[int]:
    """Steps at which a run of `steps` uniform steps is sampled.

    Every level of a study takes a multiple of the base step count, so requiring
    an exact division here puts all levels' samples at the same times.
    """
    if steps < samples or steps % samples:
        raise ConsistencyError(
            f"{samples} samples need a step count divisible by them, got {steps} steps"
        )
    return [steps * j // samples for j in range(1, samples + 1)]


def base_steps(spec: StudySpec) -> int:
    """Step count of the coarsest level, checked against the sample count."""
    steps, _ = resolve_steps(spec.base.horizon, spec.base.scheme.dt)
    sample_steps(steps, spec.samples)
    return steps


def run_level(level: Level, samples: int) -> LevelResult:
    config = level.config
    steps, dt = resolve_steps(config.horizon, config.scheme.dt)
    wanted = set(sample_steps(steps, samples))
    result = LevelResult(
        label=level.label,
        dt=dt,
        cells=config.grid.cells,
        epsilon=config.params.epsilon,
        scheme=str(config.scheme.scheme),
    )

    def collect(step: int, state: State) -> None:
        if step in wanted:
            result.samples.append(state)

    try:
        trajectory = run_simulation(
            replace(config, snapshot_every=1), on_snapshot=collect
        )
        result.soft_violations = len(trajectory.violations)
    except (NumericalFailure, InvariantViolation) as err:
        logger.warning(f"Study level {level.label} failed: {err}")
        result.failure = str(err)
    return result


def q_distance(
    a: Sequence[State], b: Sequence[State], coarse: Grid, horizon: float
) -> float:
    """Discrete L2(Q(T)) distance over all fields at the sample times."""
    if len(a) != len(b):
        raise ValueError(f"Cannot compare {len(a)} samples with {len(b)}")
    total = 0.0
    for state_a, state_b in zip(a, b):
        for f_a, f_b in zip(state_a.fields().values(), state_b.fields().values()):
            total += l2_distance(restrict(f_a, coarse), restrict(f_b, coarse)) ** 2
    return math.sqrt(total * horizon / max(len(a), 1))


# -- analytic heat-mode reference --------------------------------------------------


def is_heat_mode(config: RunConfig) -> bool:
    params = config.params
    fields = (config.initial.theta, *config.initial.species)
    return (
        params.tau == 0
        and all(t == 0 for t in params.tau_i)
        and params.beta.beta0 == 0
        and all(f.kind in (FieldKind.CONSTANT, FieldKind.COSINE) for f in fields)
    )


def _mode_field(grid: Grid, spec: FieldSpec, decay: float) -> ScalarField:
    params = spec.resolved()
    if spec.kind is FieldKind.CONSTANT:
        return ScalarField.constant(grid, float(params["value"]))  # type: ignore
    offset = float(params["offset"])  # type: ignore
    amplitude = float(params["amplitude"])  # type: ignore
    mode = per_axis(params["mode"], grid.dim, (1.0,))
    return ScalarField(grid, offset + amplitude * decay * cosine_mode(grid, mode))


def _mode_eigenvalue(spec: FieldSpec, grid: Grid) -> float:
    if spec.kind is FieldKind.CONSTANT:
        return 0.0
    mode = per_axis(spec.resolved()["mode"], grid.dim, (1.0,))
    return math.pi**2 * sum((k / e) ** 2 for k, e in zip(mode, grid.extents))


def heat_mode_reference(
    config: RunConfig,
    grid: Grid,
    samples: int,
    time_discrete_dt: float | None = None,
) -> list[State]:
    """Exact samples of a pure heat mode. With `time_discrete_dt` the time
    evolution is that of backward Euler with the exact Laplacian eigenvalue, so
    only the spatial error remains in a comparison."""
    diffusivities = (config.params.kappa, *config.params.kappa_i)
    specs = (config.initial.theta, *config.initial.species)
    states = []
    for t in sample_times(config.horizon, samples):
        fields = []
        for spec, kappa in zip(specs, diffusivities):
            rate = kappa * _mode_eigenvalue(spec, grid)
            if time_discrete_dt is None:
                decay = math.exp(-rate * t)
            else:
                steps = round(t / time_discrete_dt)
                decay = (1.0 + time_discrete_dt * rate) ** (-steps)
            fields.append(_mode_field(grid, spec, decay))
        states.append(State(t, fields[0], tuple(fields[1:])))
    return states


# -- level construction ------------------------------------------------------------


def _refine_dt(base: RunConfig, steps: int, k: int) -> RunConfig:
    # From the step count, so that level k takes exactly steps * 2**k steps
    dt = base.horizon / (steps * REFINEMENT_FACTOR**k)
    scheme = replace(base.scheme, dt=dt)
    return replace(base, scheme=scheme)


def _refine_grid(base: RunConfig, k: int) -> RunConfig:
    grid = base.grid
    for _ in range(k):
        grid = grid.refined()
    return replace(base, grid=grid)


def _with_epsilon(base: RunConfig, epsilon: float) -> RunConfig:
    return replace(base, params=replace(base.params, epsilon=epsilon))


def _with_scheme(config: RunConfig, scheme: Scheme) -> RunConfig:
    return replace(config, scheme=replace(config.scheme, scheme=scheme))


def study_levels(spec: StudySpec) -> list[Level]:
    base = spec.base
    steps = base_steps(spec)
    levels: list[Level] = []
    if spec.kind is StudyKind.DT_REFINEMENT:
        for k in range(spec.levels):
            config = _refine_dt(base, steps, k)
            levels.append(Level(f"dt={config.scheme.dt!r}", config))
    elif spec.kind is StudyKind.H_REFINEMENT:
        for k in range(spec.levels):
            config = _refine_grid(base, k)
            levels.append(Level(f"cells={config.grid.cells}", config))
    elif spec.kind is StudyKind.EPSILON_SWEEP:
        if not base.params.epsilon > 0:
            raise ConsistencyError("epsilon_sweep needs a positive base epsilon")
        for k in range(spec.levels):
            epsilon = base.params.epsilon / REFINEMENT_FACTOR**k
            levels.append(Level(f"epsilon={epsilon!r}", _with_epsilon(base, epsilon)))
        levels.append(Level("epsilon=0", _with_epsilon(base, 0.0)))
    else:
        for k in range(spec.levels):
            config = _refine_dt(base, steps, k)
            for scheme in (Scheme.IMEX, Scheme.PICARD):
                levels.append(
                    Level(
                        f"{scheme} dt={config.scheme.dt!r}",
                        _with_scheme(config, scheme),
                    )
                )
    return levels


def _distance(
    a: LevelResult, b: LevelResult, coarse: Grid, horizon: float
) -> float | None:
    if a.failed or b.failed:
        return None
    return q_distance(a.samples, b.samples, coarse, horizon)


def run_study(spec: StudySpec, workers: int | None = None) -> StudyReport:
    """Run every level (concurrently, up to `workers` or THERMOSMOLU_THREADS) and
    compare them."""
    base = spec.base
    levels = study_levels(spec)
    max_workers = worker_count(base.workers if workers is None else workers)
    logger.info(
        f"Running {spec.kind} study with {len(levels)} runs on {max_workers} workers"
    )
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        results = list(executor.map(lambda lv: run_level(lv, spec.samples), levels))

    coarse = base.grid
    horizon = base.horizon
    heat = is_heat_mode(base)
    parameters: list[float] = []
    errors: list[float | None] = []
    reference = "pairwise"
    distance_to_limit: list[float | None] = []

    if spec.kind is StudyKind.SCHEME_AGREEMENT:
        reference = "imex-picard"
        for imex, picard in zip(results[::2], results[1::2]):
            parameters.append(imex.dt)
            errors.append(_distance(imex, picard, coarse, horizon))
    elif heat and spec.kind is StudyKind.DT_REFINEMENT:
        reference = "analytic"
        exact = heat_mode_reference(base, coarse, spec.samples)
        for result in results:
            parameters.append(result.dt)
            errors.append(
                None
                if result.failed
                else q_distance(result.samples, exact, coarse, horizon)
            )
    elif heat and spec.kind is StudyKind.H_REFINEMENT:
        reference = "analytic-time-discrete"
        exact = heat_mode_reference(
            base, coarse, spec.samples, time_discrete_dt=results[0].dt
        )
        for level, result in zip(levels, results):
            parameters.append(min(level.config.grid.spacing))
            errors.append(
                None
                if result.failed
                else q_distance(result.samples, exact, coarse, horizon)
            )
    else:
        compared = results[:-1] if spec.kind is StudyKind.EPSILON_SWEEP else results
        for k, (a, b) in enumerate(zip(compared, compared[1:])):
            config = levels[k].config
            parameters.append(
                {
                    StudyKind.DT_REFINEMENT: a.dt,
                    StudyKind.H_REFINEMENT: min(config.grid.spacing),
                    StudyKind.EPSILON_SWEEP: a.epsilon,
                }[spec.kind]
            )
            errors.append(_distance(a, b, coarse, horizon))
        if spec.kind is StudyKind.EPSILON_SWEEP:
            limit = results[-1]
            distance_to_limit = [
                _distance(result, limit, coarse, horizon) for result in compared
            ]

    order = observed_order(parameters, errors)
    report = StudyReport(
        kind=spec.kind,
        reference=reference,
        levels=results,
        parameters=parameters,
        errors=errors,
        order=order,
        distance_to_limit=distance_to_limit,
    )
    logger.info(
        f"{spec.kind} study ({reference}): errors {errors}, observed order {order}"
    )
    return report
