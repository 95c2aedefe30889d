"""
Discrete mollifier J_delta, smoothing J_delta * f and the smoothed gradient
grad^delta f = grad(J_delta * f).

The continuous bump is J(x) = C_m exp(-1 / (1 - |x|^2)) for |x| < 1 and 0
otherwise, with J_delta(x) = delta^-d J(x / delta). On the grid the samples are
renormalized to unit sum so that smoothing is a convex combination of values.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy import integrate, ndimage

from .errors import GridMismatch, NonPositiveDelta
from .grid import Grid, ScalarField, VectorField, gradient

logger = logging.getLogger(__name__)

# Unit sphere surface measure in 1, 2 and 3 dimensions
_SPHERE_MEASURE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class Extension(StrEnum):
    """How a field is continued beyond the box before convolving."""

    REFLECT = "reflect"
    ZERO = "zero"


class GradientMode(StrEnum):
    """DISCRETE differentiates the smoothed field; ANALYTIC convolves with grad J."""

    DISCRETE = "discrete"
    ANALYTIC = "analytic"


def bump(s: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - s^2)) inside the unit ball, 0 outside."""
    s = np.asarray(s, dtype=np.float64)
    inside = s < 1.0
    safe = np.where(inside, 1.0 - s * s, 1.0)
    return np.where(inside, np.exp(-1.0 / safe), 0.0)


@functools.lru_cache(maxsize=4)
def continuum_normalizer(dim: int) -> float:
    """C_m such that the integral of C_m * bump(|x|) over R^dim equals 1."""
    radial, _ = integrate.quad(
        lambda r: float(bump(np.float64(r))) * r ** (dim - 1),
        0.0,
        1.0,
        epsabs=1e-14,
        epsrel=1e-12,
    )
    return 1.0 / (_SPHERE_MEASURE[dim] * radial)


@dataclass(frozen=True, eq=False)
class MollifierKernel:
    delta: float
    spacing: tuple[float, ...]
    support_radius_cells: tuple[int, ...]
    weights: np.ndarray = field(repr=False)
    cm: float
    extension: Extension = Extension.REFLECT
    gradient_mode: GradientMode = GradientMode.DISCRETE
    gradient_weights: tuple[np.ndarray, ...] = field(default=(), repr=False)

    @property
    def is_identity(self) -> bool:
        return self.weights.size == 1 or np.count_nonzero(self.weights) == 1

    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        """Nonzero (offset, weight) pairs in lexicographic offset order."""
        centre = np.array(self.support_radius_cells)
        return [
            (tuple(int(k) for k in np.array(index) - centre), float(w))
            for index, w in np.ndenumerate(self.weights)
            if w != 0.0
        ]

    def _check(self, f: ScalarField) -> None:
        if not f.grid.same_spacing(self.spacing):
            raise GridMismatch(self.spacing, f.grid.spacing)


def build_kernel(
    delta: float,
    grid: Grid,
    extension: Extension = Extension.REFLECT,
    gradient_mode: GradientMode = GradientMode.DISCRETE,
) -> MollifierKernel:
    if not (delta > 0 and math.isfinite(delta)):
        raise NonPositiveDelta(delta)
    spacing = grid.spacing
    if delta < 2.0 * max(spacing):
        logger.warning(
            f"Mollifier under-resolved: delta={delta:.4g} "
            + f"< 2*h={2.0 * max(spacing):.4g}"
        )

    radius = tuple(math.ceil(delta / h) for h in spacing)
    offsets = np.meshgrid(
        *(np.arange(-r, r + 1) * h for r, h in zip(radius, spacing)), indexing="ij"
    )
    s = np.sqrt(sum((x / delta) ** 2 for x in offsets))
    cm = continuum_normalizer(grid.dim)
    cell = math.prod(spacing)
    samples = cm * delta ** (-grid.dim) * bump(s) * cell
    mass = math.fsum(samples.ravel())
    weights = samples / mass

    gradient_weights: tuple[np.ndarray, ...] = ()
    if gradient_mode is GradientMode.ANALYTIC:
        if np.count_nonzero(weights) == 1:
            logger.warning(
                "Analytic mollifier gradient has no support on this grid, "
                + "falling back to the discrete gradient"
            )
            gradient_mode = GradientMode.DISCRETE
        else:
            inside = s < 1.0
            factor = np.where(
                inside,
                -2.0 / (delta * delta * np.where(inside, 1 - s * s, 1.0) ** 2),
                0.0,
            )
            gradient_weights = tuple(weights * factor * x for x in offsets)

    kernel = MollifierKernel(
        delta=float(delta),
        spacing=spacing,
        support_radius_cells=radius,
        weights=weights,
        cm=cm,
        extension=extension,
        gradient_mode=gradient_mode,
        gradient_weights=gradient_weights,
    )
    logger.debug(
        f"Built mollifier delta={delta:.4g} radius={radius} "
        + f"nonzero={np.count_nonzero(weights)}"
    )
    return kernel


def _convolve(
    kernel: MollifierKernel, values: np.ndarray, stencil: np.ndarray
) -> np.ndarray:
    pad = [(r, r) for r in kernel.support_radius_cells]
    if kernel.extension is Extension.REFLECT:
        padded = np.pad(values, pad, mode="reflect")
    else:
        padded = np.pad(values, pad, mode="constant", constant_values=0.0)
    convolved = ndimage.convolve(padded, stencil, mode="constant", cval=0.0)
    crop = tuple(
        slice(r, r + n) for r, n in zip(kernel.support_radius_cells, values.shape)
    )
    return convolved[crop]


def smooth(kernel: MollifierKernel, f: ScalarField) -> ScalarField:
    """J_delta * f."""
    kernel._check(f)
    if kernel.is_identity:
        return f.copy()
    return f.with_values(_convolve(kernel, f.values, kernel.weights))


def smoothed_gradient(kernel: MollifierKernel, f: ScalarField) -> VectorField:
    """grad(J_delta * f)."""
    kernel._check(f)
    if kernel.gradient_mode is GradientMode.ANALYTIC and kernel.gradient_weights:
        return VectorField(
            f.grid,
            tuple(_convolve(kernel, f.values, g) for g in kernel.gradient_weights),
        )
    return gradient(smooth(kernel, f))
