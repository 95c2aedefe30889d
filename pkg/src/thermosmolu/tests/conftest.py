# flake8: noqa
import unittest.mock as mock
from pathlib import Path

import pytest
from _pytest.capture import CaptureFixture
from _pytest.fixtures import FixtureRequest

from thermosmolu.grid import Grid


@pytest.fixture(autouse=True)
def stop_std_logging(request: FixtureRequest, capfd: CaptureFixture) -> None:
    patcher = mock.patch("thermosmolu.log.setup_logging")
    patcher.start()

    def tearDown() -> None:
        patcher.stop()

    request.addfinalizer(tearDown)


@pytest.fixture
def logging_mock(request: FixtureRequest) -> mock.MagicMock:
    patcher = mock.patch("logging.config.fileConfig")
    logger: mock.MagicMock = patcher.start()

    def tearDown() -> None:
        patcher.stop()

    request.addfinalizer(tearDown)
    return logger


@pytest.fixture
def line() -> Grid:
    return Grid.uniform(1, 1.0, 41)


@pytest.fixture
def square() -> Grid:
    return Grid.uniform(2, 1.0, 21)


SMALL_RUN = """
[grid]
dim = 1
cells = 21

[model]
species = 2
tau = 0.1
tau_i = 0.1
delta0 = 0.1
epsilon = 0.1

[scheme]
dt_cap = 1e-2

[initial]
theta.kind = cosine
u.kind = random
u.offset = 0.5
u.amplitude = 0.25

[run]
T = 0.05
out = {out}
snapshot_every = 2

[observer.max_principle]

[observer.positivity]

[observer.envelope]

[observer.norms]
stride = 2
"""


@pytest.fixture
def small_run_text(tmp_path: Path) -> str:
    return SMALL_RUN.format(out=(tmp_path / "run").as_posix())
