import numpy as np

from thermosmolu.grid import Grid, ScalarField
from thermosmolu.kinetics import BetaMatrix
from thermosmolu.timestepper import ModelParams, State


def make_params(
    n_species: int = 1,
    beta: float = 1.0,
    tau: float = 0.0,
    tau_i: float = 0.0,
    epsilon: float = 0.0,
    kappa: float = 1.0,
    kappa_i: float = 1.0,
    delta0: float = 0.1,
    n_clamp: float | None = None,
) -> ModelParams:
    return ModelParams(
        kappa=kappa,
        kappa_i=(kappa_i,) * n_species,
        tau=tau,
        tau_i=(tau_i,) * n_species,
        delta0=delta0,
        epsilon=epsilon,
        n_clamp=n_clamp,
        beta=BetaMatrix.constant(n_species, beta),
    )


def constant_state(grid: Grid, theta: float, *u: float) -> State:
    return State(
        0.0,
        ScalarField.constant(grid, theta),
        tuple(ScalarField.constant(grid, value) for value in u),
    )


def cosine_state(grid: Grid, n_species: int = 1) -> State:
    """theta = 1 + cos(pi x)/2, u_i = 1/2 + cos(2 pi x)/4 along the first axis."""
    x = grid.mesh()[0]
    theta = ScalarField(grid, 1.0 + 0.5 * np.cos(np.pi * x))
    u = tuple(
        ScalarField(grid, 0.5 + 0.25 * np.cos(2 * np.pi * x)) for _ in range(n_species)
    )
    return State(0.0, theta, u)
