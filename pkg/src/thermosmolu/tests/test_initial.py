import numpy as np
import pytest
from _pytest.logging import LogCaptureFixture

from thermosmolu.grid import Grid, gradient
from thermosmolu.initial import (
    FieldKind,
    FieldSpec,
    InitialCondition,
    build_field,
    build_state,
    cosine_mode,
    per_axis,
    random_smooth_field,
)


def test_per_axis() -> None:
    assert per_axis(None, 2, (1.0,)) == (1.0,)
    assert per_axis(2, 3, (1.0,)) == (2.0, 2.0, 2.0)
    assert per_axis((1, 2), 2, (0.0,)) == (1.0, 2.0)
    with pytest.raises(ValueError):
        per_axis((1, 2), 3, (0.0,))


def test_field_spec_rejects_unknown_parameters() -> None:
    with pytest.raises(ValueError, match="width"):
        FieldSpec(FieldKind.COSINE, {"width": 0.1})


def test_field_spec_resolves_defaults() -> None:
    spec = FieldSpec(FieldKind.COSINE, {"amplitude": 0.25})
    assert spec.resolved() == {"offset": 1.0, "amplitude": 0.25, "mode": (1.0,)}


def test_cosine_mode_satisfies_neumann(square: Grid) -> None:
    values = cosine_mode(square, (1.0, 2.0))
    assert values[0, 0] == 1.0
    assert values[-1, 0] == pytest.approx(-1.0)
    f = build_field(
        square,
        FieldSpec(FieldKind.COSINE, {"mode": (1.0, 2.0)}),
        np.random.default_rng(0),
    )
    assert f.max() == pytest.approx(1.5)
    assert f.min() == pytest.approx(0.5)
    dx, dy = gradient(f).components
    assert np.all(dx[0, :] == 0.0) and np.all(dy[:, -1] == 0.0)


def test_gaussian_peaks_at_centre(line: Grid) -> None:
    f = build_field(
        line,
        FieldSpec(FieldKind.GAUSSIAN, {"offset": 0.1, "amplitude": 2.0}),
        np.random.default_rng(0),
    )
    assert int(np.argmax(f.values)) == 20
    assert f.max() == pytest.approx(2.1)


def test_random_field_stays_within_amplitude(square: Grid) -> None:
    rng = np.random.default_rng(11)
    for _ in range(20):
        f = random_smooth_field(square, rng, offset=1.0, amplitude=0.5, modes=4)
        assert 0.5 - 1e-12 <= f.min() and f.max() <= 1.5 + 1e-12


def test_build_state_is_deterministic(line: Grid) -> None:
    random = FieldSpec(FieldKind.RANDOM)
    initial = InitialCondition(random, (random, random), seed=5)
    first = build_state(line, initial)
    second = build_state(line, initial)
    for a, b in zip(first.fields().values(), second.fields().values()):
        assert np.array_equal(a.values, b.values)
    # one generator drawn in order theta, u1, u2
    assert not np.array_equal(first.u[0].values, first.u[1].values)
    other = build_state(line, InitialCondition(random, (random, random), seed=6))
    assert not np.array_equal(first.theta.values, other.theta.values)
    assert first.t == 0.0
    assert list(first.fields()) == ["theta", "u1", "u2"]


def test_negative_initial_data_warns(caplog: LogCaptureFixture, line: Grid) -> None:
    initial = InitialCondition(
        FieldSpec(FieldKind.CONSTANT), (FieldSpec(FieldKind.CONSTANT, {"value": -1.0}),)
    )
    state = build_state(line, initial)
    assert state.u[0].min() == -1.0
    assert "Initial u1 has negative values" in caplog.text
