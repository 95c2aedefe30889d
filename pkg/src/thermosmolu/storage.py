"""
Run directory layout and serialization

    <out>/manifest.json        resolved configuration, code version, summary
    <out>/config.conf          effective configuration (dt resolved)
    <out>/series.ndjson        one SeriesRecord per line
    <out>/series.csv           the same series as a table
    <out>/violations.ndjson    soft invariant violations
    <out>/plot.gp              gnuplot script regenerating figures from the CSVs
    <out>/snapshots/index.csv  step,t of every snapshot
    <out>/snapshots/<step>_<field>.csv (or .f64 + .hdr)

Floats are written with repr, the shortest string that round-trips, so identical
results serialize to identical bytes.
"""

import csv
import io
import json
import logging
import math
from collections.abc import Iterable, Sequence
from configparser import ConfigParser
from datetime import datetime, timezone
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any

import filelock
import numpy as np

from . import __version__
from .diagnostics import SeriesRecord, Violation
from .grid import Grid, ScalarField
from .timestepper import State
from .utils import format_float, rewrite

if TYPE_CHECKING:
    from .configuration import RunConfig
    from .timestepper import Trajectory

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG = "config.conf"
SERIES = "series.ndjson"
SERIES_CSV = "series.csv"
VIOLATIONS = "violations.ndjson"
PLOT_SCRIPT = "plot.gp"
SNAPSHOTS = "snapshots"
INDEX = "index.csv"

# Seconds to wait for another writer to release a run directory
LOCK_TIMEOUT = 1.0


class SnapshotFormat(StrEnum):
    CSV = "csv"
    RAW = "raw"


def dumps_record(record: SeriesRecord) -> str:
    """One NDJSON line: sorted keys, shortest round-trip floats."""
    return json.dumps(record.as_dict(), sort_keys=True, allow_nan=False)


def snapshot_name(step: int, field: str) -> str:
    return f"{step:08d}_{field}"


def write_field(path: Path, f: ScalarField, fmt: SnapshotFormat) -> Path:
    """Write one field; `path` has no suffix. Returns the data file written."""
    if fmt is SnapshotFormat.RAW:
        data = path.with_suffix(".f64")
        with rewrite(data, "wb") as handle:
            handle.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
        with rewrite(path.with_suffix(".hdr")) as handle:
            handle.write(f.grid.header() + "\n")
        return data
    data = path.with_suffix(".csv")
    with rewrite(data) as handle:
        handle.write(f.grid.header() + "\n")
        for value in f.values.ravel():
            handle.write(format_float(value) + "\n")
    return data


def read_snapshot(path: Path) -> ScalarField:
    """Read a .csv snapshot or a .f64 stream with its .hdr sidecar."""
    path = Path(path)
    if path.suffix == ".f64":
        grid = Grid.from_header(path.with_suffix(".hdr").read_text().strip())
        values = np.frombuffer(path.read_bytes(), dtype="<f8")
        return ScalarField(grid, values.astype(np.float64))
    with path.open() as handle:
        grid = Grid.from_header(handle.readline())
        values = np.array([float(line) for line in handle if line.strip()])
    return ScalarField(grid, values)


def read_index(directory: Path) -> list[tuple[int, float]]:
    with (Path(directory) / SNAPSHOTS / INDEX).open(newline="") as handle:
        return [(int(row["step"]), float(row["t"])) for row in csv.DictReader(handle)]


def read_state(
    directory: Path, step: int, t: float, n_species: int, fmt: SnapshotFormat
) -> State:
    suffix = ".f64" if fmt is SnapshotFormat.RAW else ".csv"
    base = Path(directory) / SNAPSHOTS

    def load(field: str) -> ScalarField:
        return read_snapshot(base / (snapshot_name(step, field) + suffix))

    species = tuple(load(f"u{i}") for i in range(1, n_species + 1))
    return State(t, load("theta"), species)


def read_series(path: Path) -> list[SeriesRecord]:
    records = []
    with Path(path).open() as handle:
        for line in handle:
            if not line.strip():
                continue
            values = json.loads(line)
            t = values.pop("t")
            records.append(SeriesRecord(t, values))
    return records


def series_columns(series: Sequence[SeriesRecord]) -> list[str]:
    return sorted({key for record in series for key in record.values})


def series_csv(series: Sequence[SeriesRecord]) -> str:
    """The series as CSV: t first, then every recorded name; empty cells where an
    observer was not due."""
    columns = series_columns(series)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["t", *columns])
    for record in series:
        writer.writerow(
            [format_float(record.t)]
            + [
                format_float(record.values[c]) if c in record.values else ""
                for c in columns
            ]
        )
    return buffer.getvalue()


def plot_script(
    columns: Sequence[str], final: Sequence[str], grid: Grid | None
) -> str:
    """gnuplot commands drawing the series and, for CSV snapshots, the final fields."""
    lines = [
        "# Regenerate figures from this run's CSV files: gnuplot plot.gp",
        'set datafile separator ","',
        "set terminal pngcairo size 900,600",
        'set xlabel "t"',
    ]
    for index, column in enumerate(columns, start=2):
        lines += [
            f'set output "{column}.png"',
            f'plot "{SERIES_CSV}" using 1:{index} with linespoints title "{column}"',
        ]
    if grid is not None and final:
        h = grid.spacing
        lines.append("unset xlabel")
        for path in final:
            name = Path(path).stem
            if grid.dim == 1:
                using = f"($0*{format_float(h[0])}):1"
                lines.append(f'set output "{name}.png"')
                lines.append(
                    f'plot "{path}" using {using} with lines title "{name}"'
                )
            else:
                n_last = grid.cells[-1]
                using = (
                    f"(int($0/{n_last})*{format_float(h[0])}):"
                    + f"(($0-int($0/{n_last})*{n_last})*{format_float(h[-1])}):1"
                )
                lines.append(f'set output "{name}.png"')
                lines.append(
                    f'splot "{path}" using {using} '
                    + f'with points palette title "{name}"'
                )
    return "\n".join(lines) + "\n"


class RunDirectory:
    """Single writer of one output directory.

    Usable as a context manager; the directory lock is held in between.
    """

    def __init__(
        self, path: Path, snapshot_format: SnapshotFormat = SnapshotFormat.CSV
    ) -> None:
        self.path = Path(path)
        self.snapshot_format = snapshot_format
        self.index: list[tuple[int, float]] = []
        self.snapshot_files: dict[int, list[str]] = {}
        self.lock = filelock.FileLock(str(self.path / ".lock"), timeout=LOCK_TIMEOUT)

    def __enter__(self) -> "RunDirectory":
        (self.path / SNAPSHOTS).mkdir(parents=True, exist_ok=True)
        self.lock.acquire()
        logger.debug(f"Locked run directory {self.path}")
        return self

    def __exit__(self, *exc: Any) -> None:
        self.lock.release()

    def __str__(self) -> str:
        return f"RunDirectory({self.path})"

    def write_snapshot(self, step: int, state: State) -> list[Path]:
        written = []
        for name, f in state.fields().items():
            written.append(
                write_field(
                    self.path / SNAPSHOTS / snapshot_name(step, name),
                    f,
                    self.snapshot_format,
                )
            )
        self.index.append((step, state.t))
        self.snapshot_files[step] = [
            str(p.relative_to(self.path)) for p in written
        ]
        return written

    def write_index(self) -> Path:
        target = self.path / SNAPSHOTS / INDEX
        with rewrite(target, newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["step", "t"])
            for step, t in self.index:
                writer.writerow([step, format_float(t)])
        return target

    def write_series(self, series: Sequence[SeriesRecord]) -> list[Path]:
        ndjson = self.path / SERIES
        with rewrite(ndjson) as handle:
            for record in series:
                handle.write(dumps_record(record) + "\n")
        table = self.path / SERIES_CSV
        with rewrite(table) as handle:
            handle.write(series_csv(series))
        return [ndjson, table]

    def write_violations(self, violations: Iterable[Violation]) -> Path:
        target = self.path / VIOLATIONS
        with rewrite(target) as handle:
            for violation in violations:
                handle.write(json.dumps(violation.as_dict(), sort_keys=True) + "\n")
        return target

    def write_config(self, config: ConfigParser) -> Path:
        target = self.path / CONFIG
        with rewrite(target) as handle:
            config.write(handle)
        return target

    def write_manifest(self, manifest: dict[str, Any]) -> Path:
        target = self.path / MANIFEST
        with rewrite(target) as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return target

    def write_plot_script(self, series: Sequence[SeriesRecord], grid: Grid) -> Path:
        final: list[str] = []
        if self.snapshot_format is SnapshotFormat.CSV and self.index:
            final = self.snapshot_files.get(self.index[-1][0], [])
        target = self.path / PLOT_SCRIPT
        with rewrite(target) as handle:
            handle.write(plot_script(series_columns(series), final, grid))
        return target


def build_manifest(
    config: "RunConfig", trajectory: "Trajectory | None" = None
) -> dict[str, Any]:
    manifest: dict[str, Any] = {
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
        "config": config.as_dict(),
    }
    if trajectory is not None:
        manifest["summary"] = trajectory.summary()
        manifest["wall_time"] = trajectory.wall_time
        if trajectory.advisory is not None:
            manifest["advisory"] = {
                key: None if math.isinf(value) else value
                for key, value in trajectory.advisory._asdict().items()
            }
    return manifest


def emit_outputs(
    run_dir: RunDirectory,
    config: "RunConfig",
    trajectory: "Trajectory",
    effective_config: ConfigParser | None = None,
) -> list[Path]:
    """Everything except the snapshots, which are written while the run goes.

    The series, its CSV table and the plot script are only written when there is
    a series; the violations file only when there were soft violations.
    """
    written = [run_dir.write_index()]
    if effective_config is not None:
        written.append(run_dir.write_config(effective_config))
    if trajectory.series:
        written.extend(run_dir.write_series(trajectory.series))
        written.append(run_dir.write_plot_script(trajectory.series, config.grid))
    if trajectory.violations:
        written.append(run_dir.write_violations(trajectory.violations))
    written.append(run_dir.write_manifest(build_manifest(config, trajectory)))
    logger.info(f"Wrote {len(written)} output files to {run_dir.path}")
    return written
