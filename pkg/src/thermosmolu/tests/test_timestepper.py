import math
from dataclasses import replace

import numpy as np
import pytest
from _pytest.logging import LogCaptureFixture

from thermosmolu.errors import BlowUp, LinearSolveFailure, PicardDivergence
from thermosmolu.grid import Grid, ScalarField
from thermosmolu.kinetics import BetaMatrix
from thermosmolu.tests.states import constant_state, cosine_state, make_params
from thermosmolu.timestepper import (
    LinearSolver,
    ModelParams,
    Problem,
    Scheme,
    SchemeConfig,
    State,
    Stepper,
    resolve_steps,
    simulate,
    step_imex,
    step_picard,
)


def test_model_params_validation() -> None:
    beta = BetaMatrix.constant(2, 1.0)
    with pytest.raises(ValueError):
        ModelParams(1.0, (1.0,), 0.0, (0.0, 0.0), 0.1, 0.0, None, beta)
    with pytest.raises(ValueError):
        ModelParams(0.0, (1.0, 1.0), 0.0, (0.0, 0.0), 0.1, 0.0, None, beta)
    with pytest.raises(ValueError):
        ModelParams(1.0, (1.0, 1.0), -1.0, (0.0, 0.0), 0.1, 0.0, None, beta)
    with pytest.raises(ValueError):
        ModelParams(1.0, (1.0, 1.0), 0.0, (0.0, 0.0), 0.0, 0.0, None, beta)


def test_problem_selection() -> None:
    assert make_params().problem is Problem.P
    assert make_params(epsilon=0.1).problem is Problem.P_EPSILON
    assert make_params(epsilon=0.1, n_clamp=3.0).problem is Problem.P_EPSILON_N
    assert make_params(n_clamp=3.0).problem is Problem.P_N


def test_truncation_applies_without_mollification() -> None:
    params = make_params(n_species=2, n_clamp=1.0)
    stepper = Stepper(Grid.uniform(1, 1.0, 5), params, SchemeConfig())
    assert stepper.kernel_epsilon is None
    rates = stepper.reaction_terms(np.full((2, 5), 10.0))
    assert np.allclose(rates[0], -2.0) and np.allclose(rates[1], -1.5)


def test_scheme_config_validation() -> None:
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(picard_max_iters=0)


def test_state_requires_one_grid(line: Grid) -> None:
    with pytest.raises(ValueError):
        State(
            0.0,
            ScalarField.constant(line, 1.0),
            (ScalarField.constant(line.refined(), 1.0),),
        )


def test_resolve_steps() -> None:
    assert resolve_steps(1.0, 0.3) == (4, 0.25)
    assert resolve_steps(1.0, 0.25) == (4, 0.25)
    assert resolve_steps(0.0, 0.1) == (0, 0.1)


def test_module_steppers_check_the_scheme(line: Grid) -> None:
    state = constant_state(line, 1.0, 1.0)
    with pytest.raises(ValueError):
        step_imex(state, make_params(), SchemeConfig(scheme=Scheme.PICARD))
    with pytest.raises(ValueError):
        step_picard(state, make_params(), SchemeConfig(scheme=Scheme.IMEX))


@pytest.mark.parametrize("solver", list(LinearSolver))
@pytest.mark.parametrize("scheme", list(Scheme))
def test_constants_without_reaction_are_steady(
    square: Grid, scheme: Scheme, solver: LinearSolver
) -> None:
    state = constant_state(square, 2.0, 0.5, 0.25)
    params = make_params(n_species=2, beta=0.0, tau=0.3, tau_i=0.3, epsilon=0.2)
    cfg = SchemeConfig(scheme, dt=1e-2, linear_solver=solver)
    stepper = Stepper(square, params, cfg)
    new, _ = stepper.step(state)
    assert new.t == pytest.approx(1e-2)
    assert np.allclose(new.theta.values, 2.0, rtol=0.0, atol=1e-12)
    assert np.allclose(new.u[0].values, 0.5, rtol=0.0, atol=1e-12)
    assert np.allclose(new.u[1].values, 0.25, rtol=0.0, atol=1e-12)


def test_uniform_imex_step_is_explicit_reaction(line: Grid) -> None:
    state = constant_state(line, 1.0, 1.0)
    new = step_imex(state, make_params(beta=2.0), SchemeConfig(dt=0.01))
    # u + dt R(u) = 1 - 0.01 * 2
    assert np.allclose(new.u[0].values, 0.98, atol=1e-13)


def test_uniform_picard_step_is_implicit_reaction(line: Grid) -> None:
    state = constant_state(line, 1.0, 1.0)
    cfg = SchemeConfig(Scheme.PICARD, dt=0.01, picard_tol=1e-13)
    result = step_picard(state, make_params(beta=2.0), cfg)
    # backward Euler fixed point of u = 1 - 0.02 u^2
    expected = (-1.0 + math.sqrt(1.0 + 0.08)) / 0.04
    assert np.allclose(result.state.u[0].values, expected, atol=1e-12)
    assert result.iterations > 1
    assert result.final_residual < 1e-13
    assert 0 < result.contraction < 0.1


def test_picard_divergence_after_max_iterations(line: Grid) -> None:
    state = cosine_state(line)
    cfg = SchemeConfig(Scheme.PICARD, dt=0.01, picard_tol=1e-300, picard_max_iters=2)
    with pytest.raises(PicardDivergence) as excinfo:
        step_picard(state, make_params(tau=0.1, tau_i=0.1), cfg)
    assert excinfo.value.iterations == 2
    assert len(excinfo.value.residuals) == 2


def test_linear_solve_failure_is_reported(line: Grid) -> None:
    state = cosine_state(line)
    cfg = SchemeConfig(
        dt=0.1, linear_solver=LinearSolver.ITERATIVE, linear_solve_tol=1e-300
    )
    with pytest.raises(LinearSolveFailure):
        step_imex(state, make_params(), cfg)


def test_blow_up_is_detected(line: Grid) -> None:
    state = constant_state(line, 1.0, 1e13)
    with pytest.raises(BlowUp) as excinfo:
        step_imex(state, make_params(beta=1.0), SchemeConfig(dt=1e-20))
    assert excinfo.value.field == "u1"
    assert excinfo.value.value > 1e12


def test_clamp_negative(line: Grid) -> None:
    state = constant_state(line, 1.0, -0.5)
    new = step_imex(state, make_params(), SchemeConfig(dt=0.01, clamp_negative=True))
    assert new.u[0].min() == 0.0


def test_advisory(line: Grid) -> None:
    stepper = Stepper(line, make_params(beta=2.0), SchemeConfig())
    advisory = stepper.advisory(constant_state(line, 1.0, 0.5))
    assert advisory.v_max == 0.0
    assert advisory.u_max == 0.5
    assert advisory.dt_max == pytest.approx(0.5)
    quiet = Stepper(line, make_params(beta=0.0), SchemeConfig())
    assert math.isinf(quiet.advisory(constant_state(line, 1.0, 0.5)).dt_max)


def test_advisory_warning_is_logged_once(
    caplog: LogCaptureFixture, line: Grid
) -> None:
    stepper = Stepper(line, make_params(beta=1.0), SchemeConfig(dt=0.6))
    state = constant_state(line, 1.0, 1.0)
    stepper.step(state)
    stepper.step(state)
    warnings = [
        record
        for record in caplog.records
        if record.levelname == "WARNING"
        and "exceeds the stability advisory" in record.getMessage()
    ]
    assert len(warnings) == 1


def test_heat_mode_matches_exact_decay() -> None:
    grid = Grid.uniform(1, 1.0, 201)
    x = grid.coordinates(0)
    state = State(
        0.0,
        ScalarField(grid, np.cos(np.pi * x)),
        (ScalarField.constant(grid, 1.0),),
    )
    trajectory = simulate(state, make_params(beta=0.0), SchemeConfig(dt=1e-4), 0.1)
    exact = math.exp(-(np.pi**2) * 0.1) * np.cos(np.pi * x)
    difference = trajectory.final.theta.values - exact
    error = np.sqrt(np.sum(grid.weights * difference**2))
    assert error < 0.02 * np.sqrt(np.sum(grid.weights * exact**2))
    assert trajectory.steps == 1000
    assert trajectory.final.t == pytest.approx(0.1)


def test_simulate_with_zero_horizon_records_nothing(line: Grid) -> None:
    state = cosine_state(line)
    seen = []
    trajectory = simulate(
        state,
        make_params(),
        SchemeConfig(),
        0.0,
        on_snapshot=lambda step, s: seen.append(step),
    )
    assert trajectory.steps == 0
    assert trajectory.series == []
    assert trajectory.final is state
    assert seen == [0]


def test_simulate_snapshot_schedule(line: Grid) -> None:
    seen: list[int] = []
    trajectory = simulate(
        cosine_state(line),
        make_params(),
        SchemeConfig(dt=0.01),
        0.07,
        snapshot_every=3,
        on_snapshot=lambda step, s: seen.append(step),
    )
    assert seen == [0, 3, 6, 7]
    assert trajectory.dt == pytest.approx(0.01)


def test_simulate_adjusts_dt_to_land_on_horizon(line: Grid) -> None:
    trajectory = simulate(cosine_state(line), make_params(), SchemeConfig(dt=0.3), 1.0)
    assert trajectory.steps == 4
    assert trajectory.dt == 0.25
    assert trajectory.final.t == pytest.approx(1.0)


def test_picard_diagnostics_are_recorded(line: Grid) -> None:
    cfg = replace(SchemeConfig(dt=0.01), scheme=Scheme.PICARD)
    params = make_params(tau=0.1, tau_i=0.1)
    trajectory = simulate(cosine_state(line), params, cfg, 0.03)
    assert len(trajectory.picard) == 3
    summary = trajectory.summary()
    assert summary["max_picard_iterations"] >= 2
    assert summary["max_picard_contraction"] < 1
    assert summary["steps"] == 3.0
