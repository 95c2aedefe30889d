import argparse
import csv
import json
import logging
import logging.config
import sys
from configparser import ConfigParser
from pathlib import Path
from typing import IO

import numpy as np

import thermosmolu.configuration
import thermosmolu.log
import thermosmolu.simulation
import thermosmolu.study
import thermosmolu.verify
from thermosmolu.config.exceptions import ConfigError, ConfigFileNotFound
from thermosmolu.errors import (
    IncompleteRunDirectory,
    InvariantViolation,
    NumericalFailure,
)
from thermosmolu.initial import build_state
from thermosmolu.kinetics import solve_envelope
from thermosmolu.mollifier import build_kernel
from thermosmolu.storage import RunDirectory
from thermosmolu.utils import format_float, rewrite

logger = logging.getLogger(__name__)  # pylint: disable=C0103

EXIT_OK = 0
EXIT_CONFIG_CREATED = 1
EXIT_SCHEMA = 2
EXIT_INVARIANT = 3
EXIT_NUMERICAL = 4


def _simulate_parser(subparsers: argparse._SubParsersAction) -> None:
    s = subparsers.add_parser(
        "simulate", help="Run one simulation and write its output directory."
    )
    s.add_argument("--scheme", choices=["imex", "picard"], help="Time stepping scheme")
    s.add_argument("--dt", help="Step size, or 'auto' [Defaults to the config]")
    s.add_argument("--T", dest="horizon", type=float, help="Final time")
    s.add_argument(
        "--snapshot-every",
        type=int,
        help="Write all fields every N steps (0: initial and final only)",
    )
    s.add_argument("--out", help="Output directory [Defaults to the config]")
    s.set_defaults(op="simulate")


def _envelope_parser(subparsers: argparse._SubParsersAction) -> None:
    e = subparsers.add_parser(
        "envelope",
        help="Solve the comparison ODE bounding the concentrations and print CSV.",
    )
    e.add_argument("--T", dest="horizon", type=float, help="Final time")
    e.add_argument("--dt", type=float, help="RK4 step [Defaults to [run] envelope_dt]")
    e.add_argument(
        "--y0",
        help="Comma separated initial values [Defaults to the sup of the initial data]",
    )
    e.add_argument("--every", type=int, default=1, help="Print every Nth step")
    e.add_argument("--out", help="Write the CSV here instead of stdout")
    e.set_defaults(op="envelope")


def _kernel_table_parser(subparsers: argparse._SubParsersAction) -> None:
    k = subparsers.add_parser(
        "kernel-table", help="Dump the discrete mollifier weights as CSV."
    )
    k.add_argument(
        "--delta",
        type=float,
        help="Mollifier radius [Defaults to epsilon, or delta0 when epsilon is 0]",
    )
    k.add_argument("--out", help="Write the CSV here instead of stdout")
    k.set_defaults(op="kernel-table")


def _invariants_parser(subparsers: argparse._SubParsersAction) -> None:
    i = subparsers.add_parser(
        "invariants",
        help="Replay the snapshots of a run directory through its hard observers.",
    )
    i.add_argument(
        "directory", nargs="?", help="Run directory [Defaults to [run] out]"
    )
    i.set_defaults(op="invariants")


def _study_parser(subparsers: argparse._SubParsersAction) -> None:
    s = subparsers.add_parser(
        "study", help="Run a refinement, epsilon or scheme comparison study."
    )
    s.add_argument(
        "--kind",
        choices=["epsilon_sweep", "dt_refinement", "h_refinement", "scheme_agreement"],
    )
    s.add_argument("--levels", type=int, help="Number of levels (>= 2)")
    s.add_argument("--samples", type=int, help="Sample times compared per run")
    s.add_argument(
        "--workers",
        type=int,
        help="# of concurrent runs [Defaults to thermosmolu.conf]",
    )
    s.add_argument("--out", help="Output directory [Defaults to [run] out]")
    s.set_defaults(op="study")


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Thermo-diffusion with Smoluchowski coagulation: simulations, "
        + "comparison envelopes and convergence studies.",
        prog="thermosmolu",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {thermosmolu.__version__}"
    )
    parser.add_argument(
        "-c",
        "--config",
        default="thermosmolu.conf",
        help="use configuration file (default: %(default)s)",
    )
    parser.add_argument(
        "--debug",
        action="store_true",
        default=False,
        help="Turn on extra logging (DEBUG level)",
    )

    subparsers = parser.add_subparsers()
    _simulate_parser(subparsers)
    _envelope_parser(subparsers)
    _kernel_table_parser(subparsers)
    _invariants_parser(subparsers)
    _study_parser(subparsers)

    return parser


def _write_rows(path: str | None, header: list[str], rows: list[list[str]]) -> None:
    def emit(handle: IO) -> None:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)

    if path is None:
        emit(sys.stdout)
        return
    with rewrite(Path(path)) as handle:
        emit(handle)
    logger.info(f"Wrote {len(rows)} rows to {path}")


def simulate(args: argparse.Namespace, config: ConfigParser) -> int:
    thermosmolu.configuration.apply_overrides(
        config,
        {
            "scheme": {"scheme": args.scheme, "dt": args.dt},
            "run": {
                "T": args.horizon,
                "snapshot_every": args.snapshot_every,
                "out": args.out,
            },
        },
    )
    run_config = thermosmolu.configuration.validate_config_values(config)
    # The stored config replays with the step actually taken
    config.set("scheme", "dt", format_float(run_config.scheme.dt))
    with RunDirectory(run_config.out, run_config.snapshot_format) as run_dir:
        trajectory = thermosmolu.simulation.run_simulation(run_config, run_dir, config)
    for key, value in trajectory.summary().items():
        logger.info(f"{key}: {value!r}")
    return EXIT_OK


def envelope(args: argparse.Namespace, config: ConfigParser) -> int:
    thermosmolu.configuration.apply_overrides(config, {"run": {"T": args.horizon}})
    run_config = thermosmolu.configuration.validate_config_values(config)
    if args.y0:
        y0 = np.array([float(v) for v in args.y0.split(",")])
    else:
        state = build_state(run_config.grid, run_config.initial)
        y0 = np.array([max(u_i.max(), 0.0) for u_i in state.u])
    result = solve_envelope(
        run_config.params.beta,
        y0,
        run_config.horizon,
        args.dt or run_config.envelope_dt,
    )
    every = max(1, args.every)
    indices = list(range(0, len(result.times), every))
    if indices[-1] != len(result.times) - 1:
        indices.append(len(result.times) - 1)
    header = ["t"] + [f"y{i + 1}" for i in range(len(y0))]
    rows = [
        [format_float(result.times[n])] + [format_float(v) for v in result.y[n]]
        for n in indices
    ]
    _write_rows(args.out, header, rows)
    logger.info(f"Envelope maximum C* = {result.c_star!r}")
    return EXIT_OK


def kernel_table(args: argparse.Namespace, config: ConfigParser) -> int:
    run_config = thermosmolu.configuration.validate_config_values(config)
    params = run_config.params
    delta = args.delta or (params.epsilon if params.epsilon > 0 else params.delta0)
    kernel = build_kernel(
        delta,
        run_config.grid,
        run_config.scheme.mollifier_extension,
        run_config.scheme.mollifier_gradient,
    )
    header = [f"k{axis}" for axis in range(run_config.grid.dim)] + ["weight"]
    rows = [
        [str(k) for k in offset] + [format_float(weight)]
        for offset, weight in kernel.entries()
    ]
    _write_rows(args.out, header, rows)
    return EXIT_OK


def invariants(args: argparse.Namespace, config: ConfigParser) -> int:
    directory = (
        Path(args.directory)
        if args.directory
        else thermosmolu.configuration.validate_config_values(config).out
    )
    try:
        report = thermosmolu.verify.replay_invariants(directory)
    except IncompleteRunDirectory as err:
        logger.error(f"Cannot replay: {err}")
        return EXIT_SCHEMA
    return EXIT_OK if report.ok else EXIT_INVARIANT


def study(args: argparse.Namespace, config: ConfigParser) -> int:
    thermosmolu.configuration.apply_overrides(
        config,
        {
            "study": {
                "kind": args.kind,
                "levels": args.levels,
                "samples": args.samples,
            },
            "run": {"out": args.out},
        },
    )
    run_config = thermosmolu.configuration.validate_config_values(config)
    spec = thermosmolu.configuration.validate_study(config, run_config)
    report = thermosmolu.study.run_study(spec, args.workers)
    with RunDirectory(run_config.out) as run_dir:
        target = run_dir.path / f"study-{spec.kind}.json"
        with rewrite(target) as handle:
            json.dump(
                {
                    "version": thermosmolu.__version__,
                    "config": run_config.as_dict(),
                    "study": report.as_dict(),
                },
                handle,
                indent=2,
                sort_keys=True,
            )
            handle.write("\n")
    logger.info(f"Study report written to {target}")
    if any(level.failed for level in report.levels):
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {
    "simulate": simulate,
    "envelope": envelope,
    "kernel-table": kernel_table,
    "invariants": invariants,
    "study": study,
}


def dispatch(args: argparse.Namespace, config: ConfigParser) -> int:
    try:
        return COMMANDS[args.op](args, config)
    except ConfigError as err:
        logger.error(f"Invalid configuration: {err}")
        return EXIT_SCHEMA
    except InvariantViolation as err:
        logger.error(f"Invariant violated: {err}")
        return EXIT_INVARIANT
    except NumericalFailure as err:
        logger.error(f"Numerical failure: {err}")
        return EXIT_NUMERICAL


def main() -> int:
    parser = _make_parser()
    if len(sys.argv) < 2:
        parser.print_help()
        parser.exit()

    args = parser.parse_args()
    if not hasattr(args, "op"):
        parser.print_help()
        return EXIT_SCHEMA

    thermosmolu.log.setup_logging(args)

    # Prepare default config file if needed.
    config_path = Path(args.config)
    try:
        logger.info(f"Reading configuration file '{config_path}'")
        config = thermosmolu.configuration.ThermosmoluConfig(config_path)
    except ConfigFileNotFound:
        logger.warning(f"Config file '{args.config}' missing, creating default config.")
        logger.warning("Please review the config file, then run 'thermosmolu' again.")
        thermosmolu.configuration.create_example_config(config_path)
        return EXIT_CONFIG_CREATED
    except ConfigError as err:
        logger.error(f"Unable to load configuration: {err}")
        logger.debug("Error details:", exc_info=err)
        return EXIT_SCHEMA

    user_log_config = config.get("run", "log-config", fallback=None)
    if user_log_config:
        logging.config.fileConfig(Path(user_log_config))

    return dispatch(args, config)


if __name__ == "__main__":
    exit(main())
