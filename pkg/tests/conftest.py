import numpy as np
import pytest

from arbench.core import (
    CameraIntrinsics,
    DepthMap,
    Frame,
    Pose,
    RgbImage,
    SessionManifest,
)

_acceptance_outcomes = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance_outcomes.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_outcomes:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, outcome in _acceptance_outcomes:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"  {name}: {verdict}")


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=70.0, fy=70.0, cx=32.0, cy=24.0, width=64, height=48)


def make_manifest(session_id="sess", width=64, height=48, objects=()):
    k = CameraIntrinsics(fx=70.0, fy=70.0, cx=width / 2, cy=height / 2, width=width, height=height)
    return SessionManifest(
        session_id=session_id,
        intrinsics=k,
        target_resolution=(width, height),
        depth_resolution=(width, height),
        objects=objects,
        created_at="2024-01-01T00:00:00+00:00",
    )


def make_frame(index=0, width=64, height=48, depth_mm=1000, seed=None):
    rng = np.random.default_rng(seed if seed is not None else index)
    rgb = RgbImage(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint16).astype(np.uint8))
    if np.isscalar(depth_mm):
        depth = DepthMap(np.full((height, width), depth_mm, dtype=np.uint16))
    else:
        depth = DepthMap(np.asarray(depth_mm, dtype=np.uint16))
    return Frame(
        index=index,
        timestamp_ns=1_000_000_000 + index * 33_333_333,
        rgb=rgb,
        depth=depth,
        pose=Pose.identity(),
    )


def ramp_depth_mm(width, height):
    """Vertical gradient 500..1500 mm, exact at the first and last rows."""
    rows = 500.0 + 1000.0 * np.arange(height) / (height - 1)
    return np.rint(np.repeat(rows[:, None], width, axis=1)).astype(np.uint16)


@pytest.fixture
def manifest():
    return make_manifest()
