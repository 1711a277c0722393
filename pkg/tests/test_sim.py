import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certimap import oracles, sim
from certimap.camera import CameraModel
from certimap.liegroup import UncertainTransform, act, compose, extract_relative_covariance

ROOM = sim.Environment(
    [sim.Box([1.0, -0.5, 0.0], [1.6, 0.4, 1.1]), sim.Box([-1.2, 0.8, 0.0], [-0.6, 1.5, 2.0])],
    [sim.Plane([0, 0, 1], 0.0), sim.Plane([-1, 0, 0], -3.0)],
    ((-3.0, -3.0, 0.0), (3.0, 3.0, 2.5)))


def _solids(env):
    return [(b.lo, b.hi) for b in env.boxes], [(p.normal, p.offset) for p in env.planes]


def test_box_and_plane_validation():
    with pytest.raises(ValueError):
        sim.Box([0, 0, 0], [1, 0, 1])
    with pytest.raises(ValueError):
        sim.Plane([0, 0, 0], 1.0)
    pl = sim.Plane([0, 0, 2], 1.0)
    assert pl.normal == (0.0, 0.0, 1.0) and pl.offset == 0.5


def test_signed_distance_inside_and_outside():
    d = ROOM.signed_distance([[1.3, 0.0, 0.5], [0.0, 0.0, 0.5], [2.0, -0.05, 1.5]])
    assert d[0] == pytest.approx(-0.3)
    assert d[1] == pytest.approx(0.5)
    assert d[2] == pytest.approx(math.hypot(0.4, 0.4))


def test_raycast_matches_ray_march():
    rng = np.random.default_rng(0)
    boxes, planes = _solids(ROOM)
    origin = np.array([0.0, -0.2, 0.8])
    dirs = rng.normal(size=(40, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = ROOM.raycast(origin, dirs)
    for d, ti in zip(dirs, t):
        ref = oracles.ray_march(origin, d, boxes, planes, max_t=10.0, step=5e-3)
        if math.isinf(ref):
            assert math.isinf(ti) or ti > 10.0
        else:
            assert ti == pytest.approx(ref, abs=1e-9)


def test_depth_hits_lie_on_boundaries():
    cam = CameraModel.from_fov(64, 48, 90.0, 0.1, 8.0)
    pose = sim.camera_pose([0.0, 0.0, 0.8], 0.3, 0.2)
    frame = sim.raycast_depth(ROOM, pose, cam)
    world = act(pose, frame.points)
    assert frame.points.shape[0] == np.isfinite(frame.depth).sum()
    assert np.max(np.abs(ROOM.signed_distance(world))) <= 1e-6


def test_range_limits_in_depth_frame():
    cam = CameraModel.from_fov(16, 12, 60.0, 0.1, 1.0)
    frame = sim.raycast_depth(ROOM, sim.camera_pose([0.0, 0.0, 0.8], 0.0), cam)
    assert np.all(np.isinf(frame.depth) | (frame.depth == 0.0) | (frame.depth <= 1.0))
    assert frame.points.shape[0] == 0   # the nearest box face is 1 m ahead, past the corner rays' range


def test_camera_pose_axes():
    T = sim.camera_pose([1.0, 2.0, 3.0], math.pi / 2)
    assert np.allclose(T.R[:, 2], [0, 1, 0], atol=1e-15)    # looks along +y
    assert np.allclose(T.R[:, 1], [0, 0, -1], atol=1e-15)   # image down is world down
    down = sim.camera_pose([0, 0, 0], 0.0, 0.3).R[:, 2]
    assert down[2] == pytest.approx(-math.sin(0.3))
    assert sim.planar_state(T)[2] == pytest.approx(math.pi / 2)


def test_surface_samples_cover_boundaries():
    pts = ROOM.surface_samples(0.05)
    assert np.max(np.abs(ROOM.signed_distance(pts))) <= 1e-9
    box_top = pts[(np.abs(pts[:, 2] - 1.1) < 1e-12) & (pts[:, 0] > 1.0) & (pts[:, 0] < 1.6)]
    assert box_top.shape[0] == 12 * 18


def test_densified_points_stay_on_surfaces():
    cam = CameraModel.from_fov(32, 24, 90.0, 0.1, 8.0)
    pose = sim.camera_pose([0.0, 0.0, 0.8], 0.0, 0.2)
    frame = sim.raycast_depth(ROOM, pose, cam)
    dense = sim.surface_points(frame, cam, 0.02)
    assert dense.shape[0] > 3 * frame.points.shape[0]
    off = np.abs(ROOM.signed_distance(act(pose, dense)))
    # triangles that bridge a convex corner cut through free space; the rest are planar patches
    assert np.mean(off <= 1e-9) > 0.9 and off.max() <= 0.5


WAYPOINTS = [sim.camera_pose([0.0, 0.0, 0.8], 0.0), sim.camera_pose([0.5, -1.5, 0.8], -0.7),
             sim.camera_pose([-1.5, -1.5, 1.2], 2.5)]


def test_trajectory_is_deterministic():
    S = 1e-6 * np.eye(6)
    a = sim.generate_trajectory(ROOM, WAYPOINTS, 40, S, 7)
    b = sim.generate_trajectory(ROOM, WAYPOINTS, 40, S, 7)
    for x, y in zip(a, b):
        assert np.array_equal(x.est_pose.matrix(), y.est_pose.matrix())
        assert np.array_equal(x.cumulative.covariance, y.cumulative.covariance)
    c = sim.generate_trajectory(ROOM, WAYPOINTS, 40, S, 8)
    assert not np.array_equal(a[-1].est_pose.t, c[-1].est_pose.t)


def test_noise_free_trajectory_tracks_truth():
    steps = sim.generate_trajectory(ROOM, WAYPOINTS, 30, np.zeros((6, 6)), 0)
    assert sim.absolute_trajectory_error(steps) <= 1e-12
    assert steps[-1].true_pose.t == pytest.approx([-1.5, -1.5, 1.2])
    assert sim.path_length(steps) > 3.0


def test_trajectory_through_obstacle_is_rejected():
    wps = [sim.camera_pose([0.0, 0.0, 0.5], 0.0), sim.camera_pose([2.0, 0.0, 0.5], 0.0)]
    with pytest.raises(ValueError, match="frame"):
        sim.generate_trajectory(ROOM, wps, 20, np.zeros((6, 6)), 0)


def test_cumulative_covariance_matches_sampled_spread():
    S = np.diag([1e-4] * 3 + [1e-5] * 3)
    ends = []
    for seed in range(400):
        steps = sim.generate_trajectory(ROOM, WAYPOINTS[:2], 6, S, seed)
        ends.append(steps[-1].est_pose.t - steps[-1].true_pose.t)
    # right-perturbed covariance expressed in the world frame, translation block
    T = steps[-1].true_pose
    C = steps[-1].cumulative.covariance[:3, :3]
    world = T.R @ C @ T.R.T
    emp = np.cov(np.array(ends).T)
    assert np.linalg.norm(emp - world) <= 0.25 * np.linalg.norm(world)


def test_relative_extraction_recovers_increment_on_short_horizons():
    S = 1e-8 * np.eye(6)
    steps = sim.generate_trajectory(ROOM, WAYPOINTS, 60, S, 0)
    for k in range(1, 9):
        rel = extract_relative_covariance(steps[k].cumulative, steps[k + 1].cumulative,
                                          steps[k + 1].correlation)
        assert np.linalg.norm(rel.covariance - S) <= 0.2 * np.linalg.norm(S)
        assert np.allclose(rel.mean.matrix(), steps[k + 1].est_incremental.mean.matrix(), atol=1e-12)


def test_safety_filter_passes_and_blocks():
    cmd = sim.RobotCommand(0.5, 0.2)
    assert sim.safety_filter(cmd, lambda x, y: True) == cmd
    wall = sim.safety_filter(cmd, lambda x, y: x < 0.1)
    assert wall == sim.RobotCommand(0.0, 0.1)
    # the wall sits just beyond what the rollout reaches
    assert sim.safety_filter(sim.RobotCommand(0.5, 0.0), lambda x, y: x < 0.26) == sim.RobotCommand(0.5, 0.0)
    with pytest.raises(ValueError):
        sim.safety_filter(cmd, lambda x, y: True, horizon=0.0)


def test_reverse_rollout_checks_behind():
    seen = []
    sim.safety_filter(sim.RobotCommand(-0.2, 0.0), lambda x, y: seen.append(x) or True)
    assert len(seen) == 10 and max(seen) < 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-2.0, 2.0))
def test_unicycle_increment_matches_fine_integration(v, w):
    coarse = sim.unicycle_increment(v, w, 0.1)
    fine = sim.unicycle_increment(0.0, 0.0, 0.1)
    for _ in range(1000):
        fine = compose(fine, sim.unicycle_increment(v, w, 1e-4))
    assert np.allclose(coarse.matrix(), fine.matrix(), atol=1e-9)


def test_unicycle_moves_along_optical_axis():
    inc = sim.unicycle_increment(1.0, 0.0, 0.5)
    assert np.allclose(inc.t, [0, 0, 0.5]) and np.allclose(inc.R, np.eye(3))
    start = sim.camera_pose([0, 0, 1], 0.0)
    turned = compose(start, sim.unicycle_increment(0.0, 1.0, 0.5))
    assert sim.planar_state(turned)[2] == pytest.approx(0.5)


def test_rover_halts_in_front_of_wall():
    env = sim.Environment([], [sim.Plane([0, 0, 1], 0.0), sim.Plane([-1, 0, 0], -2.0),
                               sim.Plane([1, 0, 0], -1.0)], ((-1.0, -1.5, 0.0), (2.0, 1.5, 1.5)))
    cam = CameraModel.from_fov(48, 36, 90.0, 0.1, 5.0)
    from certimap.esdf import EsdfPolicy
    phases = [{"goal": [0.5, 0.0], "speed": 0.3}, {"goal": [3.0, 0.0], "guarded": True, "speed": 0.3}]
    res = sim.run_rover(env, cam, (0.0, 0.0, 0.0), phases,
                        np.zeros((6, 6)), EsdfPolicy("baseline"), 0, voxel_size=0.1, height=0.6,
                        max_frames=300)
    assert res.incursions == 0 and res.halted
    assert 0.0 < res.final_clearance < 0.6
