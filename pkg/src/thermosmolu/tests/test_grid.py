import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermosmolu.errors import GridMismatch
from thermosmolu.grid import (
    Grid,
    ScalarField,
    VectorField,
    gradient,
    integral,
    l2_distance,
    laplacian_matrix,
    laplacian_neumann,
    lp_norm,
    norms,
    restrict,
    upwind_transport,
    upwind_transport_matrix,
)

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


def test_grid_rejects_bad_shapes() -> None:
    with pytest.raises(ValueError):
        Grid(4, (1.0,) * 4, (5,) * 4)
    with pytest.raises(ValueError):
        Grid(2, (1.0,), (5, 5))
    with pytest.raises(ValueError):
        Grid(1, (1.0,), (2,))
    with pytest.raises(ValueError):
        Grid(1, (0.0,), (5,))


def test_grid_geometry() -> None:
    grid = Grid(2, (1.0, 2.0), (11, 21))
    assert grid.shape == (11, 21)
    assert grid.size == 231
    assert grid.spacing == (0.1, 0.1)
    assert grid.volume == 2.0
    assert math.isclose(grid.weights.sum(), grid.volume, rel_tol=1e-14)
    assert grid.weights[0, 0] == pytest.approx(0.0025)
    assert grid.weights[5, 5] == pytest.approx(0.01)


def test_refined_grid_contains_coarse_nodes() -> None:
    grid = Grid.uniform(1, 1.0, 21)
    fine = grid.refined()
    assert fine.cells == (41,)
    assert np.allclose(fine.coordinates(0)[::2], grid.coordinates(0))


def test_header_round_trip() -> None:
    grid = Grid(2, (1.0, 0.5), (5, 3))
    assert grid.header() == "# grid: 2,5,3,0.25,0.25"
    assert Grid.from_header(grid.header()) == grid
    with pytest.raises(ValueError):
        Grid.from_header("grid 1,5,0.25")


def test_field_needs_one_value_per_node(line: Grid) -> None:
    with pytest.raises(ValueError):
        ScalarField(line, np.zeros(line.size + 1))


def test_gradient_of_constant_vanishes(square: Grid) -> None:
    grad = gradient(ScalarField.constant(square, 3.5))
    assert all(np.all(c == 0.0) for c in grad.components)


def test_gradient_is_exact_on_quadratics_with_zero_normal_on_faces(
    line: Grid,
) -> None:
    f = ScalarField.from_function(line, lambda x: x * x)
    derivative = gradient(f).components[0]
    x = line.coordinates(0)
    assert np.allclose(derivative[1:-1], 2.0 * x[1:-1], atol=1e-12)
    assert derivative[0] == 0.0
    assert derivative[-1] == 0.0


def test_gradient_tangential_component_on_faces(square: Grid) -> None:
    f = ScalarField.from_function(square, lambda x, y: x + np.cos(np.pi * y))
    dx, dy = gradient(f).components
    # normal derivative on the x faces is zero, the tangential one is not
    assert np.all(dx[0, :] == 0.0)
    assert np.allclose(dx[1:-1, 3], 1.0)
    assert np.any(np.abs(dy[0, 1:-1]) > 0.1)


def test_laplacian_is_second_order_on_cosine() -> None:
    errors = []
    for points in (41, 81):
        grid = Grid.uniform(1, 1.0, points)
        f = ScalarField.from_function(grid, lambda x: np.cos(np.pi * x))
        exact = -(np.pi**2) * f.values
        errors.append(np.abs(laplacian_neumann(f).values - exact).max())
    assert 3.5 < errors[0] / errors[1] < 4.5


def test_laplacian_matrix_matches_stencil(square: Grid) -> None:
    rng = np.random.default_rng(3)
    f = ScalarField(square, rng.standard_normal(square.shape))
    from_matrix = laplacian_matrix(square) @ f.values.ravel()
    assert np.allclose(from_matrix, laplacian_neumann(f).values.ravel(), atol=1e-9)


def test_upwind_matrix_matches_stencil(square: Grid) -> None:
    rng = np.random.default_rng(5)
    f = ScalarField(square, rng.standard_normal(square.shape))
    velocity = VectorField(
        square, tuple(rng.standard_normal(square.shape) for _ in range(2))
    )
    from_matrix = upwind_transport_matrix(velocity) @ f.values.ravel()
    assert np.allclose(from_matrix, upwind_transport(velocity, f).ravel(), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    values=arrays(np.float64, (21,), elements=finite),
    velocity=arrays(np.float64, (21,), elements=finite),
)
def test_upwind_step_is_a_convex_combination(
    values: np.ndarray, velocity: np.ndarray
) -> None:
    grid = Grid.uniform(1, 1.0, 21)
    f = ScalarField(grid, values)
    v = VectorField(grid, (velocity,))
    v_max = float(np.abs(velocity).max())
    dt = grid.spacing[0] / (2.0 * v_max) if v_max > 0 else 1.0
    stepped = values + dt * upwind_transport(v, f)
    slack = 1e-12 * max(1.0, float(np.abs(values).max()))
    assert stepped.min() >= values.min() - slack
    assert stepped.max() <= values.max() + slack


@settings(max_examples=25, deadline=None)
@given(value=finite, velocity=arrays(np.float64, (11, 11), elements=finite))
def test_transport_of_constant_vanishes(value: float, velocity: np.ndarray) -> None:
    grid = Grid.uniform(2, 1.0, 11)
    v = VectorField(grid, (velocity, -velocity))
    assert np.all(upwind_transport(v, ScalarField.constant(grid, value)) == 0.0)


def test_integral_and_norms(line: Grid) -> None:
    one = ScalarField.constant(line, 2.0)
    assert integral(one) == pytest.approx(2.0, rel=1e-14)
    report = norms(one)
    assert report.linf == 2.0
    assert report.l2 == pytest.approx(2.0, rel=1e-14)
    assert report.l4 == pytest.approx(2.0, rel=1e-14)
    assert report.h1_semi == 0.0
    cosine = ScalarField.from_function(line, lambda x: np.cos(np.pi * x))
    assert abs(integral(cosine)) < 1e-14
    assert lp_norm(line, cosine.values, 2) == pytest.approx(math.sqrt(0.5), rel=1e-3)


def test_restrict_samples_shared_nodes() -> None:
    coarse = Grid.uniform(2, 1.0, 11)
    fine = coarse.refined()
    f = ScalarField.from_function(fine, lambda x, y: x + 10 * y)
    g = ScalarField.from_function(coarse, lambda x, y: x + 10 * y)
    assert np.allclose(restrict(f, coarse).values, g.values)
    with pytest.raises(GridMismatch):
        restrict(f, Grid.uniform(2, 1.0, 12))


def test_l2_distance_requires_same_grid(line: Grid) -> None:
    a = ScalarField.constant(line, 1.0)
    b = ScalarField.constant(line.refined(), 1.0)
    with pytest.raises(GridMismatch):
        l2_distance(a, b)
    assert l2_distance(a, ScalarField.constant(line, 0.0)) == pytest.approx(1.0)
