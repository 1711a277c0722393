import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certimap import esdf, oracles
from certimap.camera import CameraModel
from certimap.liegroup import Transform, UncertainTransform, compose, exp_se3, exp_so3
from certimap.sim import Box, Environment, Plane, camera_pose, raycast_depth

VS = 0.05


@pytest.fixture(scope="module")
def scene():
    env = Environment([Box([1.5, -0.3, 0.2], [1.9, 0.3, 0.9])], [Plane([0, 0, 1], 0.0)],
                      ([-0.2, -1.2, -0.1], [2.6, 1.2, 1.4]))
    cam = CameraModel.from_fov(64, 48, 70.0, 0.1, 3.0)
    pose = camera_pose([0.0, 0.0, 0.6], 0.0, 0.1)
    frame = raycast_depth(env, pose, cam)
    grid = esdf.VoxelGrid.covering(*env.bounds, VS, offset=0.37 * VS)
    obs = esdf.observe(grid, cam, frame.points, pose, 0.5, 0.0, frame.depth)
    return env, cam, pose, frame, grid, obs


def _solids(env):
    return [(b.lo, b.hi) for b in env.boxes], [(p.normal, p.offset) for p in env.planes]


def test_clearance_matches_exhaustive_cube_search():
    rng = np.random.default_rng(0)
    blob = np.argwhere(rng.uniform(size=(9, 8, 7)) < 0.8)
    assert np.allclose(esdf.clearance(blob, 0.1), oracles.cube_clearance(blob, 0.1), atol=1e-12)
    solid = np.argwhere(np.ones((7, 7, 7), dtype=bool))
    d = esdf.clearance(solid, 1.0)
    assert d.max() == pytest.approx(3.0) and d.min() == 0.0


def test_observed_cubes_are_free_and_values_are_lower_bounds(scene):
    env, _, _, _, grid, obs = scene
    boxes, planes = _solids(env)
    rng = np.random.default_rng(1)
    c = grid.centers(obs.index)
    pts = c[:, None, :] + rng.uniform(-0.5, 0.5, (c.shape[0], 16, 3)) * VS
    corners = c[:, None, :] + 0.5 * VS * np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
    pts = np.concatenate([pts, corners], axis=1)
    dist = oracles.solid_distance(pts.reshape(-1, 3), boxes, planes).reshape(pts.shape[:2])
    assert obs.index.shape[0] > 1000
    assert np.all(dist.min(axis=1) > 0.0)
    assert np.all(obs.value <= dist.min(axis=1) + 1e-12)


def test_occluded_and_out_of_range_cells_stay_unknown(scene):
    _, cam, pose, _, grid, obs = scene
    seen = set(map(tuple, obs.index))
    behind_box = grid.index_of([[2.2, 0.0, 0.5]])[0]
    behind_cam = grid.index_of([[-0.15, 0.0, 0.6]])[0]
    assert tuple(behind_box) not in seen and tuple(behind_cam) not in seen
    assert np.all(obs.value >= 0.0) and np.all(obs.value <= 0.5)


def test_lipschitz_after_static_integration(scene):
    _, _, _, _, grid, obs = scene
    vals = {tuple(i): v for i, v in zip(obs.index, obs.value)}
    worst = 0.0
    for (i, j, k), v in vals.items():
        for d in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
            w = vals.get((i + d[0], j + d[1], k + d[2]))
            if w is not None:
                worst = max(worst, abs(v - w))
    assert worst <= VS + 2 * VS


def test_points_only_observation_needs_no_depth(scene):
    _, cam, pose, frame, grid, obs = scene
    via_points = esdf.observe(grid, cam, frame.points, pose, 0.5, 0.0)
    assert via_points.index.shape[0] > 0


def _map_with_cells(n=40, value=0.3, policy="certified"):
    grid = esdf.VoxelGrid(VS, [-1.0, -1.0, -1.0], (n, n, n))
    grid.observed[...] = True
    grid.distance[...] = value
    return esdf.CertifiedEsdfMap(grid, esdf.EsdfPolicy(policy, kappa=9.0))


def test_translation_only_deflation_is_uniform():
    m = _map_with_cells(10)
    s = 1e-3
    S = np.diag([s * s] * 3 + [0.0] * 3)
    ut = UncertainTransform(exp_se3(np.array([0.01, 0.0, 0.0, 0.0, 0.02, 0.0])), S)
    idx = m.grid.observed_indices()
    amt = esdf.deflation_for(m, idx, ut, 9.0)
    assert np.allclose(amt, 3.0 * s, rtol=0, atol=1e-9)


def test_rotation_only_deflation_scales_with_distance():
    m = _map_with_cells(10)
    s = 1e-3
    S = np.diag([0.0] * 3 + [s * s] * 3)
    ut = UncertainTransform(Transform(exp_so3([0.0, 0.1, 0.0]), np.zeros(3)), S)
    idx = m.grid.observed_indices()
    amt = esdf.deflation_for(m, idx, ut, 9.0)
    r = np.linalg.norm(m.grid.centers(idx), axis=1)
    assert np.allclose(amt, 3.0 * s * r, rtol=0, atol=1e-9)


def test_zero_covariance_leaves_cells_untouched():
    m = _map_with_cells(6, value=0.0)
    before = m.grid.distance.copy()
    esdf.deflate_esdf(m, UncertainTransform.exact(exp_se3(np.ones(6) * 0.1)), 9.0)
    assert np.array_equal(m.grid.distance, before) and m.grid.observed.all()


def test_cells_below_zero_are_forgotten():
    m = _map_with_cells(6, value=0.001)
    esdf.deflate_esdf(m, UncertainTransform(Transform.identity(), 1e-4 * np.eye(6)), 9.0)
    assert not m.grid.observed.any()
    assert esdf.query_certified(m, np.zeros(3)) is esdf.Unknown


def test_parallel_deflation_is_bitwise_identical():
    a = _map_with_cells(40)
    b = _map_with_cells(40)
    B = np.random.default_rng(0).normal(size=(6, 6)) * 1e-3
    ut = UncertainTransform(exp_se3(np.array([0.01, 0, 0, 0, 0.01, 0])), B @ B.T)
    a.est_pose = b.est_pose = exp_se3(np.array([0.3, -0.2, 0.1, 0.2, 0.1, -0.3]))
    esdf.deflate_esdf(a, ut, 9.0, threads=1)
    esdf.deflate_esdf(b, ut, 9.0, threads=4)
    assert esdf.snapshot_bytes(a) == esdf.snapshot_bytes(b)


def test_fusion_keeps_larger_bound():
    m = _map_with_cells(3, value=0.2)
    idx = np.array([[0, 0, 0], [1, 1, 1]])
    esdf.apply_observation(m, esdf.Observation(idx, np.array([0.1, 0.4])))
    assert m.grid.distance[0, 0, 0] == 0.2 and m.grid.distance[1, 1, 1] == 0.4


def test_queries_and_volume():
    m = _map_with_cells(4, value=0.1)
    m.grid.observed[0, 0, 0] = False
    m.grid.distance[1, 0, 0] = -0.05
    q = m.grid.centers([[2, 2, 2]])[0]
    assert esdf.query_certified(m, q) == esdf.Free(0.1)
    assert esdf.query_certified(m, m.grid.centers([[0, 0, 0]])[0]) is esdf.Unknown
    assert esdf.query_certified(m, np.array([50.0, 0, 0])) is esdf.Unknown
    free = esdf.claimed_free(m, m.grid.centers([[0, 0, 0], [1, 0, 0], [3, 3, 3]]))
    assert free.tolist() == [False, False, True]
    assert esdf.free_volume(m) == pytest.approx(62 * VS ** 3)


def test_heuristic_forgetting_by_distance():
    m = _map_with_cells(20, policy="heuristic")
    esdf.forget_beyond(m, np.zeros(3), 0.3)
    c = m.grid.centers(m.grid.observed_indices())
    assert np.all(np.linalg.norm(c, axis=1) <= 0.3)


def test_slice_raster():
    m = _map_with_cells(4, value=0.1)
    m.grid.distance[0, 0, 1] = 0.0
    m.grid.observed[1, 1, 1] = False
    r = esdf.claimed_free_region_slice(m, m.grid.centers([[0, 0, 1]])[0][2])
    assert r[0, 0] == esdf.OBSTACLE_CELL and r[1, 1] == esdf.UNKNOWN_CELL and r[2, 2] == esdf.FREE_CELL
    assert (esdf.claimed_free_region_slice(m, 99.0) == esdf.UNKNOWN_CELL).all()


def test_snapshot_roundtrip(tmp_path):
    m = _map_with_cells(5, value=0.25)
    m.grid.observed[0] = False
    m.grid.distance[0] = 0.0
    p = tmp_path / "map.bin"
    esdf.save_snapshot(m, p, {"note": "x"})
    g = esdf.load_snapshot(p)
    assert np.array_equal(g.observed, m.grid.observed)
    assert np.array_equal(g.distance, m.grid.distance)
    assert g.voxel_size == VS and np.array_equal(g.origin, m.grid.origin)


def test_policy_and_grid_validation():
    with pytest.raises(ValueError):
        esdf.EsdfPolicy("eager")
    with pytest.raises(ValueError):
        esdf.VoxelGrid(0.0, np.zeros(3), (1, 1, 1))
    m = esdf.CertifiedEsdfMap(esdf.VoxelGrid(VS, np.zeros(3), (2, 2, 2)))
    with pytest.raises(ValueError):
        esdf.integrate_observation(m, np.zeros((1, 3)), Transform.identity())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_certified_step_never_raises_a_value(seed):
    rng = np.random.default_rng(seed)
    m = _map_with_cells(8, value=0.0)
    m.grid.distance[...] = rng.uniform(0, 0.4, m.grid.shape)
    before = m.grid.distance.copy()
    B = rng.normal(size=(6, 6)) * 1e-3
    ut = UncertainTransform(exp_se3(rng.normal(size=6) * 0.01), B @ B.T)
    esdf.deflate_esdf(m, ut, 9.0, threads=1)
    obs = m.grid.observed
    assert np.all(m.grid.distance[obs] <= before[obs])


def test_deflation_matches_power_iteration_on_numeric_jacobian():
    m = _map_with_cells(12)
    rng = np.random.default_rng(3)
    m.est_pose = exp_se3(rng.normal(size=6) * 0.3)
    B = rng.normal(size=(6, 6)) * 1e-3
    ut = UncertainTransform(exp_se3(rng.normal(size=6) * 0.05), B @ B.T)
    idx = m.grid.observed_indices()[rng.choice(12 ** 3, 200, replace=False)]
    amt = esdf.deflation_for(m, idx, ut, 9.0)
    body = m.est_pose.inverse()
    for a, c in zip(amt, m.grid.centers(idx)):
        p = body.R @ c + body.t
        J = oracles.numeric_point_jacobian(ut.mean.matrix(), p)
        ref = np.sqrt(oracles.power_iteration_max_eigenvalue(9.0 * J @ ut.covariance @ J.T))
        assert a == pytest.approx(ref, abs=1e-9)


def test_translation_deflation_spread_is_tiny():
    m = _map_with_cells(10)
    m.est_pose = exp_se3(np.array([0.4, -0.1, 0.2, 0.3, 0.2, -0.1]))
    ut = UncertainTransform(exp_se3(np.array([0.0, 0.01, 0.0, 0.02, 0.0, 0.0])),
                            np.diag([4e-6] * 3 + [0.0] * 3))
    amt = esdf.deflation_for(m, m.grid.observed_indices(), ut, 9.0)
    assert amt.max() - amt.min() <= 1e-12


def test_repeated_translation_deflation_is_linear():
    m = _map_with_cells(5, value=0.4)
    s = 2e-3
    ut = UncertainTransform(Transform.identity(), np.diag([s * s] * 3 + [0.0] * 3))
    for _ in range(7):
        esdf.deflate_esdf(m, ut, 9.0, threads=1)
    assert np.allclose(m.grid.distance[m.grid.observed], 0.4 - 7 * 3.0 * s, rtol=0, atol=1e-12)


def test_observed_count_shrinks_to_zero_without_observations():
    rng = np.random.default_rng(8)
    m = _map_with_cells(8)
    m.grid.distance[...] = rng.uniform(0.0, 0.3, m.grid.shape)
    ut = UncertainTransform(exp_se3(np.array([0.0, 0.0, 0.01, 0.0, 0.01, 0.0])), 1e-5 * np.eye(6))
    counts = [int(m.grid.observed.sum())]
    while counts[-1]:
        m.est_pose = compose(m.est_pose, ut.mean)
        esdf.deflate_esdf(m, ut, 9.0, threads=1)
        counts.append(int(m.grid.observed.sum()))
        assert len(counts) < 500
    assert all(b <= a for a, b in zip(counts, counts[1:]))
