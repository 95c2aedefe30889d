# Kept apart so it can be left out of coverage: handlers installed here outlive
# any test that would call it.
import logging
from typing import Any

FORMAT = "%(asctime)s %(levelname)s: %(message)s (%(filename)s:%(lineno)d)"


def setup_logging(args: Any) -> logging.StreamHandler:
    """One stream handler for the package, plus the ``py.warnings`` logger so
    numpy and scipy RuntimeWarnings (overflow, ill-conditioned solves) show up
    next to the step that caused them."""
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(FORMAT))
    level = logging.DEBUG if args.debug else logging.INFO
    for name in ("thermosmolu", "py.warnings"):
        logger = logging.getLogger(name)
        logger.setLevel(level)
        logger.addHandler(handler)
    logging.captureWarnings(True)
    return handler
