"""
Observers: quantities computed from a State after a step, recorded as a time
series and optionally checked against the bounds the solution is known to obey.
"""

import logging
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, NamedTuple

import numpy as np

from .grid import Grid, ScalarField, gradient, integral, lp_norm, norms, vector_lp_norm
from .initial import cosine_mode, random_smooth_values
from .kinetics import Envelope, size_weights
from .mollifier import MollifierKernel, smooth, smoothed_gradient
from .timestepper import State

logger = logging.getLogger(__name__)

# Absolute slack added to the envelope bound
ENVELOPE_SLACK = 1e-8


class ObserverKind(StrEnum):
    NORMS = "norms"
    MAX_PRINCIPLE = "max_principle"
    POSITIVITY = "positivity"
    ENVELOPE = "envelope"
    MASS_MOMENT = "mass_moment"
    L4_GRADIENT = "l4_gradient"
    DECAY = "decay"
    REGULARITY = "regularity"
    LIPSCHITZ = "lipschitz"


class Severity(StrEnum):
    HARD = "hard"
    SOFT = "soft"


DEFAULT_TOLERANCE = {
    ObserverKind.MAX_PRINCIPLE: 1e-10,
    ObserverKind.POSITIVITY: 1e-8,
    ObserverKind.ENVELOPE: 1e-6,
    ObserverKind.MASS_MOMENT: 1e-10,
    ObserverKind.DECAY: 1e-6,
}


@dataclass(frozen=True)
class ObserverSpec:
    kind: ObserverKind
    stride: int = 1
    severity: Severity = Severity.HARD
    tolerance: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ObserverKind(self.kind))
        object.__setattr__(self, "severity", Severity(self.severity))
        if self.tolerance is None:
            object.__setattr__(self, "tolerance", DEFAULT_TOLERANCE.get(self.kind, 0.0))
        if self.stride < 1:
            raise ValueError(f"Observer stride must be at least 1, got {self.stride}")
        if not (math.isfinite(self.tolerance) and self.tolerance >= 0):  # type: ignore
            raise ValueError(
                f"Observer tolerance must be finite and >= 0, got {self.tolerance}"
            )

    @property
    def checked_tolerance(self) -> float:
        return float(self.tolerance)  # type: ignore


@dataclass(frozen=True)
class SeriesRecord:
    t: float
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        bad = sorted(k for k, v in self.values.items() if not math.isfinite(v))
        if bad:
            raise ValueError(f"Non-finite series values at t={self.t}: {bad}")

    def as_dict(self) -> dict[str, float]:
        return {"t": self.t, **self.values}


@dataclass(frozen=True)
class Violation:
    kind: ObserverKind
    t: float
    margin: float
    severity: Severity
    detail: str = ""

    @property
    def hard(self) -> bool:
        return self.severity is Severity.HARD

    def as_dict(self) -> dict[str, Any]:
        return {
            "kind": str(self.kind),
            "t": self.t,
            "margin": self.margin,
            "severity": str(self.severity),
            "detail": self.detail,
        }

    def __str__(self) -> str:
        message = f"{self.kind} at t={self.t:.6g} (margin {self.margin:.3e})"
        return f"{message}: {self.detail}" if self.detail else message


class Observer:
    """One configured observer for one run.

    Bounds that refer to the initial data (|theta0|_inf, |u0i|_inf) are taken from
    `initial`. Regularity integrals and the mass moment history are accumulated
    across calls, so an Observer must not be shared between runs.
    """

    def __init__(
        self, spec: ObserverSpec, initial: State, envelope: Envelope | None = None
    ) -> None:
        if spec.kind is ObserverKind.ENVELOPE and envelope is None:
            raise ValueError("The envelope observer needs an envelope")
        self.spec = spec
        self.envelope = envelope
        self.theta0_sup = initial.theta.sup()
        self.u0_sup = [u_i.sup() for u_i in initial.u]
        self._previous: State = initial
        self._last_moment: float | None = None
        self._theta_dt_sq = 0.0
        self._h1_sq = [0.0] * initial.n_species

    def due(self, step: int, last: bool = False) -> bool:
        return last or step % self.spec.stride == 0

    def __call__(self, state: State) -> tuple[SeriesRecord, Violation | None]:
        values: dict[str, float] = {}
        margin, detail = getattr(self, f"_{self.spec.kind}")(state, values)
        self._previous = state
        violation = None
        if margin is not None and margin > self.spec.checked_tolerance:
            violation = Violation(
                self.spec.kind, state.t, margin, self.spec.severity, detail
            )
        return SeriesRecord(state.t, values), violation

    # Each handler fills `values` and returns (margin, detail); margin None means
    # the observer records only.

    def _norms(self, state: State, values: dict[str, float]) -> tuple[None, str]:
        for name, f in state.fields().items():
            report = norms(f)
            values[f"{name}_linf"] = report.linf
            values[f"{name}_l2"] = report.l2
            values[f"{name}_l4"] = report.l4
            values[f"{name}_h1_semi"] = report.h1_semi
        return None, ""

    def _max_principle(
        self, state: State, values: dict[str, float]
    ) -> tuple[float, str]:
        low, high = state.theta.min(), state.theta.max()
        values["theta_min"] = low
        values["theta_max"] = high
        margin = max(-low, high - self.theta0_sup)
        values["theta_max_principle_margin"] = margin
        return margin, f"theta in [{low!r}, {high!r}], bound {self.theta0_sup!r}"

    def _positivity(self, state: State, values: dict[str, float]) -> tuple[float, str]:
        margin, worst = 0.0, ""
        for i, u_i in enumerate(state.u):
            low = u_i.min()
            values[f"u{i + 1}_min"] = low
            scaled = -low / self.u0_sup[i] if self.u0_sup[i] > 0 else -low
            if scaled > margin:
                margin, worst = scaled, f"u{i + 1} min {low!r}"
        values["positivity_margin"] = margin
        return margin, worst

    def _envelope(self, state: State, values: dict[str, float]) -> tuple[float, str]:
        assert self.envelope is not None
        y = self.envelope.at(state.t)
        margin, worst = -math.inf, ""
        for i, u_i in enumerate(state.u):
            sup, bound = u_i.max(), float(y[i])
            values[f"u{i + 1}_envelope_gap"] = bound - sup
            # relative excess: sup > y (1 + tolerance) + slack iff excess > tolerance
            excess = sup - bound - ENVELOPE_SLACK
            if bound > 0:
                excess /= bound
            elif excess > 0:
                excess = math.inf
            if excess > margin:
                margin, worst = excess, f"sup u{i + 1} = {sup!r}, y{i + 1} = {bound!r}"
        return margin, worst

    def _mass_moment(
        self, state: State, values: dict[str, float]
    ) -> tuple[float | None, str]:
        weights = size_weights(state.n_species)
        moment = math.fsum(w * integral(u_i) for w, u_i in zip(weights, state.u))
        values["mass_moment"] = moment
        previous, self._last_moment = self._last_moment, moment
        if previous is None:
            previous = math.fsum(
                w * integral(u_i) for w, u_i in zip(weights, self._previous.u)
            )
        return moment - previous, f"mass moment rose from {previous!r} to {moment!r}"

    def _l4_gradient(self, state: State, values: dict[str, float]) -> tuple[None, str]:
        for name, f in state.fields().items():
            values[f"grad_{name}_l4"] = vector_lp_norm(gradient(f), 4)
        return None, ""

    def _lipschitz(self, state: State, values: dict[str, float]) -> tuple[None, str]:
        for name, f in state.fields().items():
            values[f"grad_{name}_linf"] = vector_lp_norm(gradient(f), math.inf)
        return None, ""

    def _regularity(self, state: State, values: dict[str, float]) -> tuple[None, str]:
        dt = state.t - self._previous.t
        theta_report = norms(state.theta)
        values["theta_h1"] = math.hypot(theta_report.l2, theta_report.h1_semi)
        if dt > 0:
            change = lp_norm(
                state.grid, state.theta.values - self._previous.theta.values, 2
            )
            self._theta_dt_sq += change * change / dt
            for i, u_i in enumerate(state.u):
                report = norms(u_i)
                self._h1_sq[i] += dt * (report.l2**2 + report.h1_semi**2)
        values["theta_dt_l2"] = math.sqrt(self._theta_dt_sq)
        for i, total in enumerate(self._h1_sq):
            values[f"u{i + 1}_h1_l2t"] = math.sqrt(total)
        return None, ""

    def _decay(
        self, state: State, values: dict[str, float]
    ) -> tuple[float | None, str]:
        worst_ratio, worst = None, ""
        y = self.envelope.at(state.t) if self.envelope is not None else None
        for i, u_i in enumerate(state.u):
            sup = u_i.max()
            values[f"u{i + 1}_sup"] = sup
            if y is None:
                continue
            ratio = sup / float(y[i]) if y[i] > 0 else 0.0
            values[f"u{i + 1}_envelope_ratio"] = ratio
            if worst_ratio is None or ratio > worst_ratio:
                worst_ratio, worst = ratio, f"u{i + 1} at {ratio!r} of its envelope"
        return (None if worst_ratio is None else worst_ratio - 1.0), worst


def observe(
    state: State,
    env: Envelope | None,
    spec: ObserverSpec,
    initial: State | None = None,
) -> tuple[SeriesRecord, Violation | None]:
    """Evaluate one observer once. Bounds use `initial` (default: `state`)."""
    return Observer(spec, initial if initial is not None else state, env)(state)


def make_observers(
    specs: Sequence[ObserverSpec], initial: State, envelope: Envelope | None
) -> list[Observer]:
    return [Observer(spec, initial, envelope) for spec in specs]


class DecayReport(NamedTuple):
    ratios: dict[str, float]
    tail_monotone: dict[str, float]
    tail_exponents: dict[str, float]

    def dominated(self, tolerance: float = 1e-6) -> bool:
        return all(r <= 1 + tolerance for r in self.ratios.values())


def _species_sup_keys(record: SeriesRecord) -> list[str]:
    keys = sorted(k for k in record.values if k.startswith("u") and k.endswith("_sup"))
    if keys:
        return keys
    return sorted(
        k for k in record.values if k.startswith("u") and k.endswith("_linf")
    )


def decay_report(
    series: Sequence[SeriesRecord], envelope: Envelope | None = None
) -> DecayReport:
    """Final sup/envelope ratio, last-quartile monotonicity fraction and fitted
    log-log tail slope of every species' sup norm."""
    if not series:
        raise ValueError("decay_report needs a nonempty series")
    final = series[-1]
    ratios: dict[str, float] = {}
    monotone: dict[str, float] = {}
    exponents: dict[str, float] = {}
    tail = series[len(series) - max(2, len(series) // 4) :] if len(series) > 1 else []
    for key in _species_sup_keys(final):
        species = key.split("_")[0]
        index = int(species[1:]) - 1
        sup = final.values[key]
        ratio_key = f"{species}_envelope_ratio"
        if ratio_key in final.values:
            ratios[species] = final.values[ratio_key]
        elif envelope is not None:
            y = float(envelope.at(final.t)[index])
            ratios[species] = sup / y if y > 0 else 0.0
        elif sup == 0.0:
            ratios[species] = 0.0

        tail_values = [r.values[key] for r in tail if key in r.values]
        steps = list(zip(tail_values, tail_values[1:]))
        monotone[species] = (
            sum(b <= a + 1e-14 * max(1.0, abs(a)) for a, b in steps) / len(steps)
            if steps
            else 1.0
        )
        times = np.array([r.t for r in tail if key in r.values])
        logs = np.array(tail_values)
        if len(tail_values) >= 2 and np.all(logs > 0) and np.all(times > 0):
            slope, _ = np.polyfit(np.log(times), np.log(logs), 1)
            exponents[species] = float(slope)
    return DecayReport(ratios, monotone, exponents)


class MollifierConstants(NamedTuple):
    """Largest observed ratios over the probe fields."""

    grad_l2_over_l2: float
    grad_linf_over_l2: float
    grad_l2_over_grad_l2: float
    grad_l4_over_grad_l4: float
    smoothing_l2: float


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def mollifier_ratios(kernel: MollifierKernel, f: ScalarField) -> MollifierConstants:
    grid = f.grid
    smoothed_grad = smoothed_gradient(kernel, f)
    raw_grad = gradient(f)
    f_l2 = lp_norm(grid, f.values, 2)
    return MollifierConstants(
        grad_l2_over_l2=_ratio(vector_lp_norm(smoothed_grad, 2), f_l2),
        grad_linf_over_l2=_ratio(vector_lp_norm(smoothed_grad, math.inf), f_l2),
        grad_l2_over_grad_l2=_ratio(
            vector_lp_norm(smoothed_grad, 2), vector_lp_norm(raw_grad, 2)
        ),
        grad_l4_over_grad_l4=_ratio(
            vector_lp_norm(smoothed_grad, 4), vector_lp_norm(raw_grad, 4)
        ),
        smoothing_l2=_ratio(lp_norm(grid, smooth(kernel, f).values, 2), f_l2),
    )


def _probe_fields(
    grid: Grid, trials: int, rng: np.random.Generator
) -> Iterator[ScalarField]:
    top = max(1, min(grid.cells) // 4)
    for axis in range(grid.dim):
        for k in range(top + 1):
            mode = [0.0] * grid.dim
            mode[axis] = float(k)
            yield ScalarField(grid, cosine_mode(grid, mode))
    for trial in range(trials):
        if trial % 2:
            yield ScalarField(grid, rng.standard_normal(grid.shape))
        else:
            yield ScalarField(grid, random_smooth_values(grid, rng, top))


def measure_mollifier_constants(
    kernel: MollifierKernel, grid: Grid, trials: int, seed: int = 0
) -> MollifierConstants:
    """Empirical operator-norm estimates for the mollified gradient and smoothing.

    Single cosine modes are always probed, so the L2 ratios do not depend on the
    seed; `trials` random fields (alternately smooth and white noise) are added.
    """
    if trials < 1:
        raise ValueError(f"Need at least one trial, got {trials}")
    rng = np.random.default_rng(seed)
    best = MollifierConstants(0.0, 0.0, 0.0, 0.0, 0.0)
    for f in _probe_fields(grid, trials, rng):
        ratios = mollifier_ratios(kernel, f)
        best = MollifierConstants(*(max(a, b) for a, b in zip(best, ratios)))
    logger.debug(f"Mollifier constants for delta={kernel.delta:.4g}: {best}")
    return best
