import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from nbvkit.camera import CameraPose, Intrinsics


def random_rotation(rng) -> np.ndarray:
    R = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
    # re-orthonormalize so the 1e-9 pose check never trips on scipy round-off
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def random_pose(rng, scale: float = 3.0) -> CameraPose:
    return CameraPose(random_rotation(rng), rng.uniform(-scale, scale, 3))


def random_intrinsics(rng) -> Intrinsics:
    w, h = int(rng.integers(8, 129)), int(rng.integers(8, 129))
    return Intrinsics(float(rng.uniform(20, 200)), float(rng.uniform(20, 200)),
                      float(rng.uniform(0, w)), float(rng.uniform(0, h)), w, h)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
