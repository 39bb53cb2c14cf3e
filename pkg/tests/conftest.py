import numpy as np
import pytest

from eventforge.geometry import CameraModel, Pose, StereoRig
from eventforge.render import SceneSpec, make_test_scene


@pytest.fixture
def cam():
    return CameraModel(100.0, 100.0, 47.5, 31.5, 96, 64)


@pytest.fixture
def small_cam():
    return CameraModel(50.0, 50.0, 15.5, 11.5, 32, 24)


@pytest.fixture
def wall():
    return make_test_scene(SceneSpec("wall", extent=4.0, depths=(2.0,), voxel_size=0.04, checker=2))


@pytest.fixture
def rig(cam):
    return StereoRig(cam, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, scale=1.0):
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


# ---------------------------------------------------------------- acceptance summary

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: one acceptance criterion per test")


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        _acceptance.setdefault(report.nodeid, report.outcome)
        if report.outcome != "passed":
            _acceptance[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_acceptance):
        name = nodeid.split("::")[-1].replace("test_criterion_", "criterion ")
        verdict = "PASS" if _acceptance[nodeid] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict} {name}")
