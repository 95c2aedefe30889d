"""
Module containing classes to access and validate the thermosmolu configuration file
"""

import configparser
import functools
import importlib.resources
import logging
import math
import re
import shutil
from collections.abc import Callable, Mapping
from configparser import ConfigParser
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from .config.exceptions import (
    ConfigError,
    ConfigFileNotFound,
    ConsistencyError,
    SchemaError,
)
from .config.path_reference import eval_config_reference, has_config_reference
from .diagnostics import ObserverKind, ObserverSpec, Severity
from .grid import Grid
from .initial import (
    FIELD_PARAMETERS,
    FieldKind,
    FieldSpec,
    InitialCondition,
    build_state,
)
from .kinetics import BetaMatrix, default_envelope_dt
from .mollifier import Extension, GradientMode
from .storage import SnapshotFormat
from .timestepper import LinearSolver, ModelParams, Scheme, SchemeConfig, Stepper

logger = logging.getLogger(__name__)

# Filename of example configuration file inside the thermosmolu package
_example_conf_file = "example.conf"

# Filename of default values file inside the thermosmolu package
_defaults_conf_file = "defaults.conf"

_OBSERVER_PREFIX = "observer."
_OBSERVER_OPTIONS = {"stride", "severity", "tolerance"}
_INITIAL_KEY_RE = re.compile(
    r"^(?P<field>theta|u|u(?P<index>[1-9][0-9]*))\.(?P<param>\w+)$"
)

E = TypeVar("E", bound=StrEnum)


class StudyKind(StrEnum):
    EPSILON_SWEEP = "epsilon_sweep"
    DT_REFINEMENT = "dt_refinement"
    H_REFINEMENT = "h_refinement"
    SCHEME_AGREEMENT = "scheme_agreement"


class ThermosmoluConfig(ConfigParser):
    """ConfigParser that always reads the packaged defaults first. If given a file
    path, that file is loaded second so its values overwrite corresponding defaults.
    """

    def __init__(
        self, config_file: Path | None = None, load_defaults: bool = True
    ) -> None:
        super().__init__(delimiters="=", interpolation=None)
        if load_defaults:
            self._read_defaults_file()
        if config_file:
            self._read_user_config_file(config_file)

    def optionxform(self, optionstr: str) -> str:
        return optionstr

    def _read_defaults_file(self) -> None:
        try:
            package = importlib.resources.files("thermosmolu")
            defaults_file = package / _defaults_conf_file
            self.read_string(defaults_file.read_text(), source=_defaults_conf_file)
            logger.debug("Read configuration defaults file.")
        except OSError as err:
            raise ConfigError(f"Error reading configuration defaults: {err}") from err

    def _read_user_config_file(self, config_file: Path) -> None:
        # Checked explicitly so the exception type can be used for control flow
        if not config_file.exists():
            raise ConfigFileNotFound(
                f"Specified configuration file doesn't exist: {config_file}"
            )
        try:
            self.read_string(config_file.read_text(), source=str(config_file))
            logger.info(f"Read configuration file '{config_file}'")
        except OSError as err:
            raise ConfigError(
                f"Error reading configuration file '{config_file}': {err}"
            ) from err
        except configparser.Error as err:
            raise SchemaError(f"Malformed configuration file: {err}") from err


@functools.lru_cache(maxsize=1)
def _known_options() -> dict[str, frozenset[str]]:
    defaults = ThermosmoluConfig()
    return {s: frozenset(defaults.options(s)) for s in defaults.sections()}


def create_example_config(dest: Path) -> None:
    """Create an example configuration file at the specified location."""
    example_source = importlib.resources.files("thermosmolu") / _example_conf_file
    try:
        shutil.copy(str(example_source), dest)
    except OSError as err:
        logger.error(f"Could not create config file '{dest}': {err}")


@dataclass(frozen=True, eq=False)
class RunConfig:
    grid: Grid
    params: ModelParams
    scheme: SchemeConfig
    initial: InitialCondition
    observers: tuple[ObserverSpec, ...] = ()
    horizon: float = 1.0
    out: Path = Path("runs")
    snapshot_every: int = 0
    snapshot_format: SnapshotFormat = SnapshotFormat.CSV
    envelope_dt: float = 1e-3
    workers: int = 0
    dt_auto: bool = False
    dt_advisory: float = math.inf
    log_config: str = ""

    def with_changes(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict[str, Any]:
        """Every effective parameter, defaults and the resolved dt included."""
        beta = self.params.beta.beta
        return {
            "grid": {
                "dim": self.grid.dim,
                "extents": list(self.grid.extents),
                "cells": list(self.grid.cells),
                "spacing": list(self.grid.spacing),
            },
            "model": {
                "species": self.params.n_species,
                "problem": str(self.params.problem),
                "kappa": self.params.kappa,
                "kappa_i": list(self.params.kappa_i),
                "tau": self.params.tau,
                "tau_i": list(self.params.tau_i),
                "delta0": self.params.delta0,
                "epsilon": self.params.epsilon,
                "n_clamp": (
                    "off" if self.params.n_clamp is None else self.params.n_clamp
                ),
                "beta": [[float(v) for v in row] for row in beta],
            },
            "scheme": {
                "scheme": str(self.scheme.scheme),
                "dt": self.scheme.dt,
                "dt_auto": self.dt_auto,
                "dt_advisory": (
                    None if math.isinf(self.dt_advisory) else self.dt_advisory
                ),
                "picard_tol": self.scheme.picard_tol,
                "picard_max_iters": self.scheme.picard_max_iters,
                "linear_solve_tol": self.scheme.linear_solve_tol,
                "linear_solver": str(self.scheme.linear_solver),
                "clamp_negative": self.scheme.clamp_negative,
                "mollifier_extension": str(self.scheme.mollifier_extension),
                "mollifier_gradient": str(self.scheme.mollifier_gradient),
            },
            "initial": {
                "seed": self.initial.seed,
                "theta": _field_dict(self.initial.theta),
                "u": [_field_dict(spec) for spec in self.initial.species],
            },
            "run": {
                "T": self.horizon,
                "out": str(self.out),
                "snapshot_every": self.snapshot_every,
                "snapshot_format": str(self.snapshot_format),
                "envelope_dt": self.envelope_dt,
                "workers": self.workers,
            },
            "observers": [
                {
                    "kind": str(spec.kind),
                    "stride": spec.stride,
                    "severity": str(spec.severity),
                    "tolerance": spec.tolerance,
                }
                for spec in self.observers
            ],
        }


def _field_dict(spec: FieldSpec) -> dict[str, Any]:
    resolved: dict[str, Any] = {"kind": str(spec.kind)}
    for key, value in sorted(spec.resolved().items()):
        resolved[key] = list(value) if isinstance(value, tuple) else value
    return resolved


@dataclass(frozen=True, eq=False)
class StudySpec:
    kind: StudyKind
    levels: int
    base: RunConfig
    samples: int = 11

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", StudyKind(self.kind))
        if self.levels < 2:
            raise SchemaError(f"A study needs at least 2 levels, got {self.levels}")
        if self.samples < 2:
            raise SchemaError(f"A study needs at least 2 samples, got {self.samples}")


# -- typed option access ------------------------------------------------------------

T = TypeVar("T")


class _RangeError(ValueError):
    pass


def _convert(section: str, option: str, raw: str, convert: Callable[[str], T]) -> T:
    try:
        return convert(raw.strip())
    except _RangeError as err:
        raise SchemaError(f"{option} must be {err}") from err
    except ValueError as err:
        raise SchemaError(
            f"[{section}] {option}: invalid value {raw!r} ({err})"
        ) from err


def _get(
    config: ConfigParser, section: str, option: str, convert: Callable[[str], T]
) -> T:
    return _convert(section, option, config.get(section, option), convert)


def _positive(raw: str) -> float:
    value = float(raw)
    if not (value > 0 and math.isfinite(value)):
        raise _RangeError("positive")
    return value


def _nonnegative(raw: str) -> float:
    value = float(raw)
    if not (value >= 0 and math.isfinite(value)):
        raise _RangeError("nonnegative")
    return value


def _at_least(bound: int) -> Callable[[str], int]:
    def convert(raw: str) -> int:
        value = int(raw)
        if value < bound:
            raise _RangeError(f"at least {bound}")
        return value

    return convert


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(item) for item in raw.split(",") if item.strip())


def _list_of(convert: Callable[[str], T]) -> Callable[[str], tuple[T, ...]]:
    return lambda raw: tuple(convert(item.strip()) for item in raw.split(","))


def _boolean(raw: str) -> bool:
    lowered = raw.lower()
    if lowered not in ConfigParser.BOOLEAN_STATES:
        raise ValueError("expected a boolean")
    return ConfigParser.BOOLEAN_STATES[lowered]


def _choice(enum: type[E]) -> Callable[[str], E]:
    def convert(raw: str) -> E:
        try:
            return enum(raw)
        except ValueError:
            choices = ", ".join(str(member) for member in enum)
            raise ValueError(f"expected one of {choices}") from None

    return convert


def _or_keyword(
    keyword: str, convert: Callable[[str], T]
) -> Callable[[str], T | None]:
    """Values such as `n_clamp = off` or `dt = auto`: None for the keyword."""
    return lambda raw: None if raw.lower() == keyword else convert(raw)


def _per_axis(
    config: ConfigParser, option: str, dim: int, convert: Callable[[str], T]
) -> tuple[T, ...]:
    values = _get(config, "grid", option, _list_of(convert))
    if len(values) == 1:
        return values * dim
    if len(values) != dim:
        raise ConsistencyError(
            f"[grid] {option} has {len(values)} entries for a {dim}-dimensional grid"
        )
    return values


def _per_species(
    config: ConfigParser, option: str, n_species: int, convert: Callable[[str], float]
) -> tuple[float, ...]:
    values = _get(config, "model", option, _list_of(convert))
    if len(values) == 1:
        values = values * n_species
    if len(values) != n_species:
        raise ConsistencyError(
            f"[model] {option} has {len(values)} entries but species = {n_species}"
        )
    return values


# -- section validation -------------------------------------------------------------


def _check_known(config: ConfigParser) -> None:
    known = _known_options()
    for section in config.sections():
        if section.startswith(_OBSERVER_PREFIX):
            kind = section[len(_OBSERVER_PREFIX) :]
            if kind not in {str(k) for k in ObserverKind}:
                raise SchemaError(f"Unknown observer kind in section [{section}]")
            unknown = set(config.options(section)) - _OBSERVER_OPTIONS
        elif section not in known:
            raise SchemaError(f"Unknown section [{section}]")
        elif section == "initial":
            unknown = {
                option
                for option in config.options(section)
                if option != "seed" and not _INITIAL_KEY_RE.match(option)
            }
        else:
            unknown = set(config.options(section)) - known[section]
        if unknown:
            names = ", ".join(sorted(unknown))
            raise SchemaError(f"Unknown option(s) in [{section}]: {names}")


def _grid(config: ConfigParser) -> Grid:
    dim = _get(config, "grid", "dim", int)
    if dim not in (1, 2, 3):
        raise SchemaError(f"dim must be 1, 2 or 3, got {dim}")
    return Grid(
        dim,
        _per_axis(config, "extents", dim, _positive),
        _per_axis(config, "cells", dim, _at_least(3)),
    )


def _beta(config: ConfigParser, n_species: int) -> BetaMatrix:
    rows = [
        _convert("model", "beta", row, _list_of(_nonnegative))
        for row in config.get("model", "beta").split(";")
        if row.strip()
    ]
    if len(rows) == 1 and len(rows[0]) == 1:
        return BetaMatrix.constant(n_species, rows[0][0])
    if any(len(row) != len(rows) for row in rows):
        raise SchemaError("beta must be a scalar or a square matrix")
    if len(rows) != n_species:
        raise ConsistencyError(
            f"beta is {len(rows)}x{len(rows)} but species = {n_species}"
        )
    try:
        return BetaMatrix(np.array(rows))
    except ValueError as err:
        raise ConsistencyError(str(err)) from err


def _model(config: ConfigParser) -> ModelParams:
    n_species = _get(config, "model", "species", _at_least(1))
    return ModelParams(
        kappa=_get(config, "model", "kappa", _positive),
        kappa_i=_per_species(config, "kappa_i", n_species, _positive),
        tau=_get(config, "model", "tau", _nonnegative),
        tau_i=_per_species(config, "tau_i", n_species, _nonnegative),
        delta0=_get(config, "model", "delta0", _positive),
        epsilon=_get(config, "model", "epsilon", _nonnegative),
        n_clamp=_get(config, "model", "n_clamp", _or_keyword("off", _nonnegative)),
        beta=_beta(config, n_species),
    )


def _scheme(config: ConfigParser, dt: float) -> SchemeConfig:
    def get(option: str, convert: Callable[[str], Any]) -> Any:
        return _get(config, "scheme", option, convert)

    return SchemeConfig(
        scheme=get("scheme", _choice(Scheme)),
        dt=dt,
        picard_tol=get("picard_tol", _positive),
        picard_max_iters=get("picard_max_iters", _at_least(1)),
        linear_solve_tol=get("linear_solve_tol", _positive),
        clamp_negative=get("clamp_negative", _boolean),
        linear_solver=get("linear_solver", _choice(LinearSolver)),
        mollifier_extension=get("mollifier_extension", _choice(Extension)),
        mollifier_gradient=get("mollifier_gradient", _choice(GradientMode)),
    )


def _field_params(
    config: ConfigParser, kind: FieldKind, prefix: str, base: Mapping[str, Any]
) -> dict[str, Any]:
    params = dict(base)
    allowed = FIELD_PARAMETERS[kind]
    for option in config.options("initial"):
        if not option.startswith(prefix) or option == f"{prefix}kind":
            continue
        name = option[len(prefix) :]
        if name not in allowed:
            raise SchemaError(
                f"[initial] {option}: {kind} fields have no parameter {name!r}"
            )
        values = _get(config, "initial", option, _float_list)
        scalar = len(values) == 1 and not isinstance(allowed[name], tuple)
        params[name] = values[0] if scalar else values
    return params


def _initial(config: ConfigParser, n_species: int) -> InitialCondition:
    kind_of = _choice(FieldKind)
    theta_kind = _get(config, "initial", "theta.kind", kind_of)
    theta = FieldSpec(theta_kind, _field_params(config, theta_kind, "theta.", {}))

    shared_kind = _get(config, "initial", "u.kind", kind_of)
    shared = _field_params(config, shared_kind, "u.", {})
    indices = {
        int(match.group("index"))
        for match in map(_INITIAL_KEY_RE.match, config.options("initial"))
        if match is not None and match.group("index")
    }
    if indices and max(indices) > n_species:
        raise ConsistencyError(
            f"[initial] configures u{max(indices)} but species = {n_species}"
        )
    species = []
    for i in range(1, n_species + 1):
        prefix = f"u{i}."
        kind, base = shared_kind, shared
        if config.has_option("initial", f"{prefix}kind"):
            kind = _get(config, "initial", f"{prefix}kind", kind_of)
            base = shared if kind is shared_kind else {}
        species.append(FieldSpec(kind, _field_params(config, kind, prefix, base)))
    return InitialCondition(
        theta, tuple(species), _get(config, "initial", "seed", int)
    )


def _observers(config: ConfigParser) -> tuple[ObserverSpec, ...]:
    specs = []
    for section in config.sections():
        if not section.startswith(_OBSERVER_PREFIX):
            continue
        options = config[section]
        specs.append(
            ObserverSpec(
                kind=ObserverKind(section[len(_OBSERVER_PREFIX) :]),
                stride=_convert(
                    section, "stride", options.get("stride", "1"), _at_least(1)
                ),
                severity=_convert(
                    section,
                    "severity",
                    options.get("severity", "hard"),
                    _choice(Severity),
                ),
                tolerance=_convert(
                    section,
                    "tolerance",
                    options.get("tolerance", "default"),
                    _or_keyword("default", _nonnegative),
                ),
            )
        )
    return tuple(specs)


def _out(config: ConfigParser) -> Path:
    out = config.get("run", "out")
    if out and has_config_reference(out):
        try:
            out = eval_config_reference(config, out)
        except ValueError as err:
            raise SchemaError(f"Invalid section reference in [run] out: {err}") from err
    if not out.strip():
        raise SchemaError("[run] out must not be empty")
    return Path(out.strip())


def validate_config_values(config: ConfigParser) -> RunConfig:
    """Check every option and build the RunConfig. dt = auto is resolved against
    the stability advisory of the initial state, capped by dt_cap."""
    _check_known(config)
    grid = _grid(config)
    params = _model(config)
    initial = _initial(config, params.n_species)

    dt_cap = _get(config, "scheme", "dt_cap", _positive)
    dt = _get(config, "scheme", "dt", _or_keyword("auto", _positive))
    scheme = _scheme(config, dt_cap if dt is None else dt)
    dt_advisory = Stepper(grid, params, scheme).advisory(build_state(grid, initial))
    if dt is None:
        scheme = replace(scheme, dt=min(dt_cap, dt_advisory.dt_max))
        logger.debug(f"dt = auto resolved to {scheme.dt!r} ({dt_advisory})")

    envelope_dt = _get(config, "run", "envelope_dt", _or_keyword("auto", _positive))
    return RunConfig(
        grid=grid,
        params=params,
        scheme=scheme,
        initial=initial,
        observers=_observers(config),
        horizon=_get(config, "run", "T", _nonnegative),
        out=_out(config),
        snapshot_every=_get(config, "run", "snapshot_every", _at_least(0)),
        snapshot_format=_get(
            config, "run", "snapshot_format", _choice(SnapshotFormat)
        ),
        envelope_dt=envelope_dt or default_envelope_dt(params.beta),
        workers=_get(config, "run", "workers", _at_least(0)),
        dt_auto=dt is None,
        dt_advisory=dt_advisory.dt_max,
        log_config=config.get("run", "log-config").strip(),
    )


def validate_study(config: ConfigParser, base: RunConfig) -> StudySpec:
    return StudySpec(
        kind=_get(config, "study", "kind", _choice(StudyKind)),
        levels=_get(config, "study", "levels", _at_least(2)),
        base=base,
        samples=_get(config, "study", "samples", _at_least(2)),
    )


def apply_overrides(
    config: ConfigParser, overrides: Mapping[str, Mapping[str, Any]]
) -> None:
    """Set options given as {section: {option: value}}; None values are skipped."""
    for section, options in overrides.items():
        for option, value in options.items():
            if value is not None:
                config.set(section, option, str(value))


def parse_config_text(text: str) -> ThermosmoluConfig:
    config = ThermosmoluConfig()
    try:
        config.read_string(text, source="<string>")
    except configparser.Error as err:
        raise SchemaError(f"Malformed configuration: {err}") from err
    return config


def parse_config(text: str) -> RunConfig:
    """Validate a configuration document given as text, defaults applied."""
    return validate_config_values(parse_config_text(text))


def load_config(path: Path) -> RunConfig:
    return validate_config_values(ThermosmoluConfig(path))
