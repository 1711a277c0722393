import copy

import pytest

SMALL = {
    "name": "small",
    "environment": {
        "planes": [{"normal": [0, 0, 1], "offset": 0.0}, {"normal": [-1, 0, 0], "offset": -3.0},
                   {"normal": [0, 1, 0], "offset": -1.5}, {"normal": [0, -1, 0], "offset": -1.5}],
        "boxes": [{"min": [1.5, 0.3, 0.0], "max": [1.9, 0.8, 1.0]}],
        "bounds": {"min": [-0.5, -1.5, 0.0], "max": [3.0, 1.5, 2.0]},
    },
    "camera": {"width": 48, "height": 36, "hfov_deg": 80.0, "max_range": 5.0},
    "trajectory": {"frames": 16, "clearance": 0.2, "waypoints": [
        {"position": [0.0, -0.5, 0.8], "yaw_deg": 0, "pitch_deg": 10},
        {"position": [0.8, 0.2, 0.9], "yaw_deg": 30, "pitch_deg": 10}]},
    "noise": {"sigma": 1e-6, "kappa": "auto97"},
    "seed": 5,
    "mapping": {"voxel_size": 0.1, "metric_every": 5, "volume_samples": 4000, "sfc_window": 5},
}


@pytest.fixture
def small_raw():
    return copy.deepcopy(SMALL)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
