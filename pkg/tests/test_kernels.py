import numpy as np
import pytest

from certimap import _kernels_py as py
from certimap import kernels
from certimap.camera import CameraModel
from certimap.liegroup import exp_so3
from certimap.sim import Box, Environment, Plane, camera_pose, raycast_depth

cy = pytest.importorskip("certimap._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_max_eigenvalue_matches_eigvalsh():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(500, 3, 3))
    M = B @ B.transpose(0, 2, 1)
    M[:5] = np.eye(3) * 2.0      # repeated eigenvalues
    M[5] = 0.0
    ref = np.linalg.eigvalsh(M)[:, -1]
    for impl in (py, cy):
        assert np.allclose(impl.sym3_max_eigenvalue(M), ref, rtol=1e-10, atol=1e-12)


def test_deflation_amounts_agree():
    rng = np.random.default_rng(1)
    c = rng.uniform(-3, 3, (400, 3))
    B = rng.normal(size=(6, 6)) * 1e-3
    R_mb, t_mb, R_inc = exp_so3(rng.normal(size=3)), rng.normal(size=3), exp_so3(rng.normal(size=3) * 0.1)
    a = py.deflation_amounts(c, R_mb, t_mb, R_inc, B @ B.T, 8.9)
    b = cy.deflation_amounts(c, R_mb, t_mb, R_inc, B @ B.T, 8.9)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_union_penetration_agrees():
    rng = np.random.default_rng(2)
    A, b, starts, lo, hi = [], [], [0], [], []
    for _ in range(4):
        n = rng.normal(size=(8, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        A.append(n)
        b.append(rng.uniform(0.3, 1.0, 8))
        starts.append(starts[-1] + 8)
        lo.append(-np.ones(3))
        hi.append(np.ones(3))
    A, b = np.vstack(A), np.concatenate(b)
    pts = rng.uniform(-1.5, 1.5, (1000, 3))
    args = (pts, A, b, np.array(starts, dtype=np.int64), np.array(lo), np.array(hi))
    a, c = py.union_penetration(*args), cy.union_penetration(*args)
    # matmul and the scalar loop may round the last bit differently
    assert np.allclose(a, c, rtol=0, atol=1e-13) and np.array_equal(np.isinf(a), np.isinf(c))


def test_raycast_boxes_agree():
    rng = np.random.default_rng(3)
    lo = rng.uniform(-2, 1, (6, 3))
    hi = lo + rng.uniform(0.1, 1, (6, 3))
    d = rng.normal(size=(2000, 3))
    d[:20, 0] = 0.0
    a = py.raycast_boxes(np.zeros(3), d, lo, hi)
    b = cy.raycast_boxes(np.zeros(3), d, lo, hi)
    assert np.allclose(a, b, rtol=1e-12) and np.array_equal(np.isinf(a), np.isinf(b))


def test_brute_nearest_agrees():
    rng = np.random.default_rng(4)
    q, p = rng.normal(size=(300, 3)), rng.normal(size=(200, 3))
    assert np.allclose(py.brute_nearest(q, p, 0.4), cy.brute_nearest(q, p, 0.4), rtol=1e-12)
    assert np.all(cy.brute_nearest(q, np.zeros((0, 3)), 0.4) == 0.4)


def test_observe_voxels_agree():
    env = Environment([Box([1.5, -0.4, 0.1], [1.9, 0.2, 0.9])], [Plane([0, 0, 1], 0.0)],
                      ([-0.2, -1.2, -0.1], [2.6, 1.2, 1.4]))
    cam = CameraModel.from_fov(80, 60, 75.0, 0.1, 3.0)
    pose = camera_pose([0.0, 0.1, 0.6], 0.1, 0.15)
    zbuf = raycast_depth(env, pose, cam).depth
    inv = pose.inverse()
    args = (np.array([0, 0, 0]), np.array([56, 48, 30]), np.array([-0.2, -1.2, -0.1]), 0.05,
            inv.R, inv.t, cam.intrinsics, zbuf)
    a, b = py.observe_voxels(*args), cy.observe_voxels(*args)
    key = lambda x: np.lexsort(x.T[::-1])  # noqa: E731
    assert a.shape[0] > 500
    assert np.array_equal(a[key(a)], b[key(b)])


def test_visible_subcells_agree():
    env = Environment([Box([1.2, -0.3, 0.0], [1.6, 0.3, 0.8])], [Plane([0, 0, 1], 0.0)],
                      ([-0.2, -1.2, -0.1], [2.6, 1.2, 1.4]))
    cam = CameraModel.from_fov(80, 60, 75.0, 0.1, 3.0)
    pose = camera_pose([0.0, 0.0, 0.6], 0.0, 0.15)
    zbuf = raycast_depth(env, pose, cam).depth
    inv = pose.inverse()
    rng = np.random.default_rng(6)
    centres = rng.uniform([0.2, -1.0, 0.0], [2.4, 1.0, 1.2], (400, 3)) @ inv.R.T + inv.t
    offs = rng.uniform(-0.02, 0.02, (8, 3))
    a = py.visible_subcells(centres, offs, 0.01, cam.intrinsics, zbuf)
    b = cy.visible_subcells(centres, offs, 0.01, cam.intrinsics, zbuf)
    assert a.shape == (400, 8) and 0 < a.sum() < a.size
    assert np.array_equal(a, b)


def test_edge_gaps_agree():
    from certimap.esdf import _subcell_gaps

    offsets, gaps, order = _subcell_gaps(3)
    rng = np.random.default_rng(7)
    hidden = rng.uniform(size=(50, 27)) < 0.1
    label = np.where(rng.uniform(size=(200, 26)) < 0.3, rng.integers(0, 50, (200, 26)), -1)
    label[:20] = -1
    a = py.edge_gaps(label, hidden, gaps, order)
    b = cy.edge_gaps(label, hidden, gaps, order)
    assert np.isinf(a).any() and np.isfinite(a).any()
    assert np.array_equal(a, b)
