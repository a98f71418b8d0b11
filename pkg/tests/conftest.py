import numpy as np
import pytest

from perspfix.fixtures import SceneParams, capture_pair, close_intrinsics, gen_scene

SIZE = (160, 120)


@pytest.fixture(scope="session")
def pair0():
    return capture_pair(gen_scene(0), close_intrinsics(*SIZE), SIZE)


@pytest.fixture(scope="session")
def left_pair():
    return capture_pair(gen_scene(2, SceneParams.off_center("left")), close_intrinsics(*SIZE), SIZE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
