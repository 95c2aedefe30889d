"""
Single runs: initial state, comparison envelope and observers from a RunConfig,
then simulate and (optionally) write everything to a run directory.
"""

import logging
from collections.abc import Callable
from configparser import ConfigParser

import numpy as np

from .configuration import RunConfig
from .diagnostics import ObserverKind, make_observers
from .initial import build_state
from .kinetics import Envelope, solve_envelope
from .storage import RunDirectory, emit_outputs
from .timestepper import State, Trajectory, simulate

logger = logging.getLogger(__name__)

# Observers evaluating the envelope
_ENVELOPE_KINDS = {ObserverKind.ENVELOPE, ObserverKind.DECAY}


def initial_envelope(config: RunConfig, state: State) -> Envelope:
    """Comparison envelope started from the per-species sup of the initial data."""
    y0 = np.array([max(u_i.max(), 0.0) for u_i in state.u])
    return solve_envelope(config.params.beta, y0, config.horizon, config.envelope_dt)


def run_simulation(
    config: RunConfig,
    run_dir: RunDirectory | None = None,
    effective_config: ConfigParser | None = None,
    on_snapshot: Callable[[int, State], None] | None = None,
) -> Trajectory:
    state = build_state(config.grid, config.initial)
    envelope = None
    if any(spec.kind in _ENVELOPE_KINDS for spec in config.observers):
        envelope = initial_envelope(config, state)
    observers = make_observers(config.observers, state, envelope)

    callbacks: list[Callable[[int, State], object]] = []
    if on_snapshot is not None:
        callbacks.append(on_snapshot)
    if run_dir is not None:
        callbacks.append(run_dir.write_snapshot)

    def snapshot(step: int, current: State) -> None:
        for callback in callbacks:
            callback(step, current)

    try:
        trajectory = simulate(
            state,
            config.params,
            config.scheme,
            config.horizon,
            observers,
            snapshot_every=config.snapshot_every,
            on_snapshot=snapshot if callbacks else None,
        )
    finally:
        if run_dir is not None:
            run_dir.write_index()
    if run_dir is not None:
        emit_outputs(run_dir, config, trajectory, effective_config)
    return trajectory
