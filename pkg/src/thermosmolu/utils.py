import contextlib
import logging
import os
import platform
import tempfile
from collections.abc import Generator
from pathlib import Path
from typing import IO, Any

logger = logging.getLogger(__name__)

WINDOWS = bool(platform.system() == "Windows")

# Environment variable capping the number of concurrently running simulations
THREADS_ENV_VAR = "THERMOSMOLU_THREADS"

# Permissions of every file written into a run directory
FILE_MODE = 0o644


def format_float(value: float) -> str:
    """Shortest string that round-trips to the same double (at most 17
    significant digits)."""
    return repr(float(value))


def worker_count(configured: int = 0) -> int:
    """Number of parallel simulation jobs: the configured value (0 = one per
    CPU), capped by THERMOSMOLU_THREADS when set."""
    workers = configured if configured > 0 else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV_VAR, "").strip()
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={cap!r}")
    return workers


def find(root: Path | str, dirs: bool = True, hidden: bool = False) -> str:
    """Newline separated listing of a run directory, relative to `root`.

    Dot entries (the writer lock, files still being rewritten) are left out
    unless `hidden` is set.
    """
    root = Path(root)

    def listed(path: Path) -> bool:
        if not dirs and path.is_dir():
            return False
        return hidden or not any(
            part.startswith(".") for part in path.relative_to(root).parts
        )

    entries = sorted(path for path in root.rglob("*") if listed(path))
    return "\n".join(path.relative_to(root).as_posix() for path in entries)


@contextlib.contextmanager
def rewrite(
    filepath: str | Path, mode: str = "w", **kw: Any
) -> Generator[IO, None, None]:
    """Write `filepath` through a hidden temporary file in the same directory and
    move it into place on success, so readers of a run directory never see a
    partial snapshot. On error the temporary file is removed and the previous
    content stays."""
    target = Path(filepath)
    with tempfile.NamedTemporaryFile(
        mode=mode, prefix=f".{target.name}.", delete=False, dir=target.parent, **kw
    ) as handle:
        staged = Path(handle.name)
        try:
            yield handle
        except BaseException:
            handle.close()
            staged.unlink(missing_ok=True)
            raise

    if not staged.exists():
        return
    if not WINDOWS:
        staged.chmod(FILE_MODE)
    os.replace(staged, target)
