"""
Initial data menu: constants, Neumann-compatible cosine modes, Gaussian bumps and
seeded random smooth fields built from low cosine modes.
"""

import itertools
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from .grid import Grid, ScalarField
from .timestepper import State

logger = logging.getLogger(__name__)


class FieldKind(StrEnum):
    CONSTANT = "constant"
    COSINE = "cosine"
    GAUSSIAN = "gaussian"
    RANDOM = "random"


# Parameters each kind accepts, with their defaults
FIELD_PARAMETERS: dict[FieldKind, dict[str, float | tuple[float, ...] | None]] = {
    FieldKind.CONSTANT: {"value": 1.0},
    FieldKind.COSINE: {"offset": 1.0, "amplitude": 0.5, "mode": (1.0,)},
    FieldKind.GAUSSIAN: {
        "offset": 0.0,
        "amplitude": 1.0,
        "centre": None,
        "width": None,
    },
    FieldKind.RANDOM: {"offset": 1.0, "amplitude": 0.5, "modes": (3.0,)},
}


@dataclass(frozen=True)
class FieldSpec:
    kind: FieldKind = FieldKind.CONSTANT
    params: Mapping[str, float | tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FieldKind(self.kind))
        unknown = set(self.params) - set(FIELD_PARAMETERS[self.kind])
        if unknown:
            raise ValueError(
                f"Unknown parameter(s) for {self.kind} field: "
                + ", ".join(sorted(unknown))
            )

    def resolved(self) -> dict[str, float | tuple[float, ...] | None]:
        """Parameters with defaults filled in."""
        values = dict(FIELD_PARAMETERS[self.kind])
        values.update(self.params)
        return values


@dataclass(frozen=True)
class InitialCondition:
    theta: FieldSpec
    species: tuple[FieldSpec, ...]
    seed: int = 0

    @property
    def n_species(self) -> int:
        return len(self.species)


def per_axis(
    value: float | Sequence[float] | None, dim: int, default: Sequence[float]
) -> tuple[float, ...]:
    if value is None:
        return tuple(default)
    items = (value,) if isinstance(value, (int, float)) else tuple(value)
    if len(items) == 1:
        return tuple(float(items[0]) for _ in range(dim))
    if len(items) != dim:
        raise ValueError(f"Expected 1 or {dim} values per axis, got {len(items)}")
    return tuple(float(v) for v in items)


def cosine_mode(grid: Grid, mode: Sequence[float]) -> np.ndarray:
    """prod_a cos(k_a pi x_a / L_a); satisfies the Neumann condition for integer k."""
    values = np.ones(grid.shape)
    for x, k, extent in zip(grid.mesh(), mode, grid.extents):
        values = values * np.cos(k * math.pi * x / extent)
    return values


def random_smooth_values(
    grid: Grid, rng: np.random.Generator, modes: Sequence[int] | int = 3
) -> np.ndarray:
    """Random combination of cosine modes 0..modes per axis, scaled into [-1, 1]."""
    counts = per_axis(modes, grid.dim, (3,) * grid.dim)
    combinations = list(itertools.product(*(range(int(m) + 1) for m in counts)))
    coefficients = rng.uniform(-1.0, 1.0, size=len(combinations))
    total = np.zeros(grid.shape)
    for coefficient, mode in zip(coefficients, combinations):
        total += coefficient * cosine_mode(grid, mode)
    return total / np.abs(coefficients).sum()


def random_smooth_field(
    grid: Grid,
    rng: np.random.Generator,
    offset: float = 1.0,
    amplitude: float = 0.5,
    modes: Sequence[int] | int = 3,
) -> ScalarField:
    """Values in [offset - amplitude, offset + amplitude]."""
    values = random_smooth_values(grid, rng, modes)
    return ScalarField(grid, offset + amplitude * values)


def build_field(grid: Grid, spec: FieldSpec, rng: np.random.Generator) -> ScalarField:
    params = spec.resolved()
    if spec.kind is FieldKind.CONSTANT:
        return ScalarField.constant(grid, float(params["value"]))  # type: ignore
    offset = float(params["offset"])  # type: ignore
    amplitude = float(params["amplitude"])  # type: ignore
    if spec.kind is FieldKind.COSINE:
        mode = per_axis(params["mode"], grid.dim, (1.0,))
        return ScalarField(grid, offset + amplitude * cosine_mode(grid, mode))
    if spec.kind is FieldKind.GAUSSIAN:
        centre = per_axis(params["centre"], grid.dim, [e / 2 for e in grid.extents])
        width = per_axis(params["width"], grid.dim, [e / 10 for e in grid.extents])
        exponent = sum(
            (x - c) ** 2 / (2.0 * w * w) for x, c, w in zip(grid.mesh(), centre, width)
        )
        return ScalarField(grid, offset + amplitude * np.exp(-exponent))
    modes = tuple(int(m) for m in per_axis(params["modes"], grid.dim, (3,)))
    return random_smooth_field(grid, rng, offset, amplitude, modes)


def build_state(grid: Grid, initial: InitialCondition) -> State:
    """The t = 0 state. Random fields draw from one generator seeded once, in the
    order theta, u1, ..., uN."""
    rng = np.random.default_rng(initial.seed)
    theta = build_field(grid, initial.theta, rng)
    species = tuple(build_field(grid, spec, rng) for spec in initial.species)
    state = State(0.0, theta, species)
    for name, f in state.fields().items():
        if f.min() < 0:
            logger.warning(f"Initial {name} has negative values (min {f.min():.3e})")
    return state
