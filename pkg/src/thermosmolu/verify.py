"""
Replay the snapshots of a finished run directory through its hard observers.
"""

import logging
from pathlib import Path
from typing import NamedTuple

from .configuration import load_config
from .diagnostics import ObserverKind, Severity, Violation, make_observers
from .errors import IncompleteRunDirectory
from .simulation import initial_envelope
from .storage import (
    CONFIG,
    SNAPSHOTS,
    SnapshotFormat,
    read_index,
    read_state,
    snapshot_name,
)
from .utils import find

logger = logging.getLogger(__name__)


class ReplayReport(NamedTuple):
    snapshots: int
    observers: list[str]
    violations: list[Violation]
    files: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def check_snapshots(
    directory: Path,
    index: list[tuple[int, float]],
    n_species: int,
    fmt: SnapshotFormat,
) -> int:
    """Check every indexed snapshot is on disk; returns the number of files listed."""
    listing = set(find(directory, dirs=False).splitlines())
    suffix = ".f64" if fmt is SnapshotFormat.RAW else ".csv"
    fields = ["theta", *(f"u{i}" for i in range(1, n_species + 1))]
    expected = {
        f"{SNAPSHOTS}/{snapshot_name(step, name)}{suffix}"
        for step, _ in index
        for name in fields
    }
    missing = sorted(expected - listing)
    if missing:
        raise IncompleteRunDirectory(directory, missing)
    logger.debug(f"{directory}: {len(listing)} files, all snapshots present")
    return len(listing)


def replay_invariants(directory: Path) -> ReplayReport:
    """Re-evaluate every hard observer of the run on each stored snapshot.

    Bounds referring to the initial data come from the step 0 snapshot. Unlike a
    live run, every violation is collected instead of stopping at the first.
    """
    directory = Path(directory)
    config = load_config(directory / CONFIG)
    index = read_index(directory)
    if not index or index[0][0] != 0:
        raise IncompleteRunDirectory(directory, ["the step 0 snapshot"])
    files = check_snapshots(
        directory, index, config.params.n_species, config.snapshot_format
    )

    def load(step: int, t: float):  # type: ignore
        return read_state(
            directory, step, t, config.params.n_species, config.snapshot_format
        )

    initial = load(*index[0])
    specs = [spec for spec in config.observers if spec.severity is Severity.HARD]
    envelope = None
    if any(s.kind in (ObserverKind.ENVELOPE, ObserverKind.DECAY) for s in specs):
        envelope = initial_envelope(config, initial)
    observers = make_observers(specs, initial, envelope)

    violations: list[Violation] = []
    for step, t in index[1:]:
        state = load(step, t)
        for observer in observers:
            _, violation = observer(state)
            if violation is not None:
                logger.error(f"Step {step}: {violation}")
                violations.append(violation)
    logger.info(
        f"Replayed {len(index)} snapshots through {len(observers)} hard observers: "
        + f"{len(violations)} violation(s)"
    )
    return ReplayReport(len(index), [str(s.kind) for s in specs], violations, files)
