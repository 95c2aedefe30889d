"""
Discrete box domain, grid functions and the finite difference operators used by
every other module.

Fields are stored as arrays shaped like the grid (row-major, axis 0 slowest). The
homogeneous Neumann condition is realized by even reflection across the boundary
nodes: the ghost value at -h equals the value at +h.
"""

import functools
import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sps

from .errors import GridMismatch

logger = logging.getLogger(__name__)

_HEADER_PREFIX = "# grid:"
_HEADER_RE = re.compile(r"^#\s*grid:\s*(?P<body>.+)$")


@dataclass(frozen=True)
class Grid:
    """Axis-aligned box [0, L_0] x ... x [0, L_{d-1}] sampled at `cells[a]`
    equally spaced points (boundary nodes included) along each axis."""

    dim: int
    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.dim not in (1, 2, 3):
            raise ValueError(f"Grid dimension must be 1, 2 or 3, got {self.dim}")
        object.__setattr__(self, "extents", tuple(float(e) for e in self.extents))
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        if len(self.extents) != self.dim or len(self.cells) != self.dim:
            raise ValueError(
                f"Grid of dimension {self.dim} needs {self.dim} extents and cells, "
                + f"got {self.extents} and {self.cells}"
            )
        if any(n < 3 for n in self.cells):
            raise ValueError(f"Need at least 3 points per axis, got {self.cells}")
        if any(not (e > 0 and math.isfinite(e)) for e in self.extents):
            raise ValueError(f"Extents must be positive, got {self.extents}")

    @classmethod
    def uniform(cls, dim: int, extent: float, points: int) -> "Grid":
        return cls(dim, (extent,) * dim, (points,) * dim)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return math.prod(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / (n - 1) for e, n in zip(self.extents, self.cells))

    @property
    def volume(self) -> float:
        return math.prod(self.extents)

    def coordinates(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.extents[axis], self.cells[axis])

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(
            np.meshgrid(*(self.coordinates(a) for a in range(self.dim)), indexing="ij")
        )

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights (half weight on faces)."""
        per_axis = []
        for n, h in zip(self.cells, self.spacing):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2
            per_axis.append(w)
        return functools.reduce(np.multiply.outer, per_axis)

    def refined(self) -> "Grid":
        """Grid with half the spacing whose nodes contain this grid's nodes."""
        return Grid(self.dim, self.extents, tuple(2 * (n - 1) + 1 for n in self.cells))

    def header(self) -> str:
        parts = [str(self.dim)]
        parts.extend(str(n) for n in self.cells)
        parts.extend(repr(h) for h in self.spacing)
        return f"{_HEADER_PREFIX} " + ",".join(parts)

    @classmethod
    def from_header(cls, line: str) -> "Grid":
        match = _HEADER_RE.match(line.strip())
        if match is None:
            raise ValueError(f"Not a grid header: {line!r}")
        items = [item.strip() for item in match.group("body").split(",")]
        dim = int(items[0])
        if len(items) != 1 + 2 * dim:
            raise ValueError(f"Grid header has wrong number of entries: {line!r}")
        cells = tuple(int(n) for n in items[1 : 1 + dim])
        spacing = tuple(float(h) for h in items[1 + dim :])
        extents = tuple(h * (n - 1) for h, n in zip(spacing, cells))
        return cls(dim, extents, cells)

    def same_spacing(self, spacing: tuple[float, ...]) -> bool:
        return len(spacing) == self.dim and all(
            math.isclose(a, b, rel_tol=1e-12) for a, b in zip(spacing, self.spacing)
        )

    def check(self, other: "Grid") -> None:
        if other != self:
            raise GridMismatch(self, other)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One grid function, e.g. the temperature or one species concentration."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise ValueError(
                f"Field has {values.size} values but the grid has "
                + f"{self.grid.size} points"
            )
        object.__setattr__(self, "values", values.reshape(self.grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(
        cls, grid: Grid, function: Callable[..., np.ndarray]
    ) -> "ScalarField":
        """Sample `function(x0, x1, ...)` on the grid nodes."""
        values = np.broadcast_to(function(*grid.mesh()), grid.shape)
        return cls(grid, np.array(values, dtype=np.float64))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class VectorField:
    """d grid functions, one per axis."""

    grid: Grid
    components: tuple[np.ndarray, ...] = field(repr=False)

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.components[axis])

    def magnitude(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.components))

    def l1_magnitude(self) -> np.ndarray:
        return sum(np.abs(c) for c in self.components)

    def dot(self, other: "VectorField") -> np.ndarray:
        return sum(a * b for a, b in zip(self.components, other.components))

    def scaled(self, factor: float) -> "VectorField":
        return VectorField(self.grid, tuple(factor * c for c in self.components))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(
            self.grid, tuple(a + b for a, b in zip(self.components, other.components))
        )

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, tuple(np.zeros(grid.shape) for _ in range(grid.dim)))


class NormReport(NamedTuple):
    linf: float
    l2: float
    l4: float
    h1_semi: float


def _axis_slice(ndim: int, axis: int, part: slice) -> tuple[slice, ...]:
    index = [slice(None)] * ndim
    index[axis] = part
    return tuple(index)


def _reflected_neighbours(
    values: np.ndarray, axis: int
) -> tuple[np.ndarray, np.ndarray]:
    """Values at i-1 and i+1 along `axis`, ghosts filled by even reflection."""
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    padded = np.pad(values, pad, mode="reflect")
    backward = padded[_axis_slice(values.ndim, axis, slice(0, -2))]
    forward = padded[_axis_slice(values.ndim, axis, slice(2, None))]
    return backward, forward


def gradient(f: ScalarField) -> VectorField:
    """Second-order central differences. On faces the normal component uses the
    reflected ghost and is therefore exactly zero."""
    components = []
    for axis, h in enumerate(f.grid.spacing):
        backward, forward = _reflected_neighbours(f.values, axis)
        components.append((forward - backward) / (2.0 * h))
    return VectorField(f.grid, tuple(components))


def laplacian_neumann(f: ScalarField) -> ScalarField:
    result = np.zeros_like(f.values)
    for axis, h in enumerate(f.grid.spacing):
        backward, forward = _reflected_neighbours(f.values, axis)
        result += (forward - 2.0 * f.values + backward) / (h * h)
    return ScalarField(f.grid, result)


def upwind_transport(velocity: VectorField, f: ScalarField) -> np.ndarray:
    """First-order upwind discretization of velocity . grad f for the evolution
    f_t = velocity . grad f. Forward differences where a velocity component is
    positive, backward where it is negative."""
    result = np.zeros_like(f.values)
    for axis, h in enumerate(f.grid.spacing):
        backward, forward = _reflected_neighbours(f.values, axis)
        v = velocity.components[axis]
        result += np.maximum(v, 0.0) * (forward - f.values) / h
        result += np.minimum(v, 0.0) * (f.values - backward) / h
    return result


def integral(f: ScalarField) -> float:
    return float(np.sum(f.grid.weights * f.values))


def lp_norm(grid: Grid, values: np.ndarray, p: float) -> float:
    """Trapezoidal L^p norm of a grid function (p = inf gives the max norm)."""
    magnitude = np.abs(values)
    if math.isinf(p):
        return float(magnitude.max())
    return float(np.sum(grid.weights * magnitude**p) ** (1.0 / p))


def vector_lp_norm(v: VectorField, p: float) -> float:
    return lp_norm(v.grid, v.magnitude(), p)


def norms(f: ScalarField) -> NormReport:
    return NormReport(
        linf=lp_norm(f.grid, f.values, math.inf),
        l2=lp_norm(f.grid, f.values, 2),
        l4=lp_norm(f.grid, f.values, 4),
        h1_semi=vector_lp_norm(gradient(f), 2),
    )


def l2_distance(a: ScalarField, b: ScalarField) -> float:
    a.grid.check(b.grid)
    return lp_norm(a.grid, a.values - b.values, 2)


def restrict(f: ScalarField, coarse: Grid) -> ScalarField:
    """Sample a field at the nodes it shares with a coarser nested grid."""
    if coarse.dim != f.grid.dim or coarse.extents != f.grid.extents:
        raise GridMismatch(coarse, f.grid)
    index = []
    for n_fine, n_coarse in zip(f.grid.cells, coarse.cells):
        stride, remainder = divmod(n_fine - 1, n_coarse - 1)
        if remainder:
            raise GridMismatch(coarse, f.grid)
        index.append(slice(None, None, stride))
    return ScalarField(coarse, f.values[tuple(index)])


def _axis_operator(grid: Grid, axis: int, matrix: sps.spmatrix) -> sps.csr_matrix:
    """Lift a 1D operator acting along `axis` to the flattened (row-major) grid."""
    factors = [
        matrix if a == axis else sps.identity(n, format="csr")
        for a, n in enumerate(grid.cells)
    ]
    return functools.reduce(lambda x, y: sps.kron(x, y, format="csr"), factors)


def _reflected_shifts(n: int) -> tuple[sps.csr_matrix, sps.csr_matrix]:
    """Sparse shift-to-(i+1) and shift-to-(i-1) matrices with reflecting ghosts."""
    rows = np.arange(n)
    forward_cols = np.append(np.arange(1, n), n - 2)
    backward_cols = np.insert(np.arange(0, n - 1), 0, 1)
    ones = np.ones(n)
    forward = sps.csr_matrix((ones, (rows, forward_cols)), shape=(n, n))
    backward = sps.csr_matrix((ones, (rows, backward_cols)), shape=(n, n))
    return forward, backward


@functools.lru_cache(maxsize=32)
def laplacian_matrix(grid: Grid) -> sps.csr_matrix:
    """Sparse Neumann Laplacian matching laplacian_neumann on flattened fields."""
    total = sps.csr_matrix((grid.size, grid.size))
    for axis, (n, h) in enumerate(zip(grid.cells, grid.spacing)):
        forward, backward = _reflected_shifts(n)
        one_d = (forward + backward - 2.0 * sps.identity(n, format="csr")) / (h * h)
        total = total + _axis_operator(grid, axis, one_d)
    return total.tocsr()


@functools.lru_cache(maxsize=32)
def _shift_operators(
    grid: Grid,
) -> tuple[tuple[sps.csr_matrix, sps.csr_matrix], ...]:
    operators = []
    for axis, n in enumerate(grid.cells):
        forward, backward = _reflected_shifts(n)
        identity = sps.identity(n, format="csr")
        operators.append(
            (
                _axis_operator(grid, axis, forward - identity),
                _axis_operator(grid, axis, identity - backward),
            )
        )
    return tuple(operators)


def upwind_transport_matrix(velocity: VectorField) -> sps.csr_matrix:
    """Sparse matrix T with T @ f.ravel() == upwind_transport(velocity, f).ravel()."""
    grid = velocity.grid
    total = sps.csr_matrix((grid.size, grid.size))
    for axis, h in enumerate(grid.spacing):
        forward_diff, backward_diff = _shift_operators(grid)[axis]
        v = velocity.components[axis].ravel()
        total = total + sps.diags(np.maximum(v, 0.0) / h) @ forward_diff
        total = total + sps.diags(np.minimum(v, 0.0) / h) @ backward_diff
    return total.tocsr()
