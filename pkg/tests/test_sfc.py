import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from certimap import oracles, sfc
from certimap.liegroup import Transform, UncertainTransform, act, exp_se3, point_covariance

UNIT = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


def test_box_vertices_and_incidence():
    P = sfc.box_polytope([0, 0, 0], [1, 2, 3])
    assert P.vertices.shape == (8, 3)
    assert P.incidence.sum(axis=0).tolist() == [4] * 6
    assert oracles.polytope_volume(P.A, P.b) == pytest.approx(6.0)


def test_normals_are_unit_and_offsets_scaled():
    P = sfc.make_polytope(2 * np.vstack([np.eye(3), -np.eye(3)]), 2 * np.ones(6))
    assert np.allclose(np.linalg.norm(P.A, axis=1), 1.0)
    assert np.allclose(P.b, 1.0)


def test_unbounded_and_empty_are_rejected():
    with pytest.raises(ValueError):
        sfc.make_polytope(np.eye(3), np.ones(3))
    A = np.vstack([np.eye(3), -np.eye(3)])
    with pytest.raises(sfc.EmptyPolytope):
        sfc.make_polytope(A, np.array([1, 1, 1, -2, 0, 0.0]))
    with pytest.raises(ValueError):
        sfc.make_polytope([[0, 0, 0]], [1.0], check_bounded=False)


def test_vertex_enumeration_matches_halfspace_hull():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = rng.integers(6, 14)
        A = rng.normal(size=(n, 3))
        b = rng.uniform(0.5, 1.5, n)
        A = np.vstack([A, np.eye(3), -np.eye(3)])
        b = np.concatenate([b, 2 * np.ones(6)])
        P = sfc.make_polytope(A, b)
        hull = ConvexHull(P.vertices)
        assert hull.volume == pytest.approx(oracles.polytope_volume(A, b), rel=1e-9)


def test_generated_polytope_excludes_obstacles_and_keeps_seed():
    rng = np.random.default_rng(9)
    obs = rng.uniform(-1, 1, (300, 3))
    obs = obs[np.linalg.norm(obs, axis=1) > 0.2]
    P = sfc.generate_polytope(np.zeros(3), obs, UNIT)
    assert P.contains(np.zeros(3))
    depth = np.min(P.b[None, :] - obs @ P.A.T, axis=1)
    assert np.all(depth <= 1e-12)


def test_generation_errors():
    with pytest.raises(ValueError):
        sfc.generate_polytope(np.array([2.0, 0, 0]), np.zeros((0, 3)), UNIT)
    with pytest.raises(ValueError):
        sfc.generate_polytope(np.zeros(3), np.zeros((1, 3)), UNIT)


def test_no_obstacles_gives_bounds():
    P = sfc.generate_polytope(np.zeros(3), np.zeros((0, 3)), UNIT)
    assert oracles.polytope_volume(P.A, P.b) == pytest.approx(8.0)


def test_exact_transform_moves_vertices():
    P = sfc.box_polytope([0, 0, 0], [1, 1, 1])
    T = exp_se3(np.array([1.0, -2.0, 0.5, 0.3, -0.2, 0.9]))
    Q = sfc.transform_polytope_exact(P, T)
    assert np.all(Q.contains(act(T, P.vertices), tol=1e-12))
    assert not Q.contains(act(T, np.array([1.5, 0.5, 0.5])))


def test_zero_covariance_deflation_is_exact_transform():
    P = sfc.box_polytope([0, 0, 0], [1, 1, 1])
    T = exp_se3(np.array([0.2, 0.1, -0.3, 0.1, 0.0, 0.2]))
    Q = sfc.deflate_polytope(P, UncertainTransform.exact(T), 8.9)
    R = sfc.transform_polytope_exact(P, T)
    assert np.array_equal(Q.A, R.A) and np.array_equal(Q.b, R.b)


def test_translation_only_shift_is_uniform():
    P = sfc.box_polytope([-1, -1, -1], [1, 1, 1])
    s2 = 1e-4
    S = np.diag([s2] * 3 + [0.0] * 3)
    rho = sfc.face_shifts(P, UncertainTransform(Transform.identity(), S), 9.0)
    assert np.allclose(rho, 3.0 * np.sqrt(s2), rtol=0, atol=1e-15)


def test_face_shift_agrees_with_separating_offset():
    # the shift for each face equals the worst separating gap over its vertices
    rng = np.random.default_rng(1)
    P = sfc.generate_polytope(np.zeros(3), rng.uniform(-1, 1, (80, 3)) * 1.2, UNIT)
    B = rng.normal(size=(6, 6)) * 3e-3
    ut = UncertainTransform(exp_se3(rng.normal(size=6) * 0.1), B @ B.T)
    kappa = 8.947
    rho = sfc.face_shifts(P, ut, kappa)
    for i, V in enumerate(P.face_vertices()):
        a_moved = ut.mean.R @ P.A[i]
        gaps = []
        for v in V:
            E = point_covariance(ut, v, kappa)
            gaps.append(a_moved @ E.center - sfc.separating_offset(E.center, E.shape, a_moved))
        assert rho[i] == pytest.approx(max(gaps), abs=1e-9)


def test_separating_offset_rejects_zero_normal():
    with pytest.raises(ValueError):
        sfc.separating_offset(np.zeros(3), np.eye(3), np.zeros(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_deflated_polytope_lies_inside_moved_one(seed):
    rng = np.random.default_rng(seed)
    P = sfc.generate_polytope(np.zeros(3), rng.uniform(-1, 1, (40, 3)) * 1.5, UNIT)
    B = rng.normal(size=(6, 6)) * 1e-3
    ut = UncertainTransform(exp_se3(rng.normal(size=6) * 0.05), B @ B.T)
    Q = sfc.deflate_polytope(P, ut, 8.947)
    if Q is None:
        return
    R = sfc.transform_polytope_exact(P, ut.mean)
    assert np.all(R.contains(Q.vertices, tol=1e-9))


def test_large_uncertainty_removes_polytope():
    P = sfc.box_polytope([0, 0, 0], [0.1, 0.1, 0.1])
    ut = UncertainTransform(Transform.identity(), np.eye(6))
    assert sfc.deflate_polytope(P, ut, 9.0) is None


def test_union_queries():
    polys = (sfc.box_polytope([0, 0, 0], [1, 1, 1]), sfc.box_polytope([0.5, 0, 0], [2, 1, 1]))
    cmap = sfc.CorridorMap(polys)
    assert sfc.contains(cmap, np.array([1.5, 0.5, 0.5]))
    assert sfc.penetration_depth(cmap, np.array([1.0, 0.5, 0.5])) == pytest.approx(0.5)
    assert sfc.penetration_depth(cmap, np.array([3.0, 0.5, 0.5])) == 0.0
    assert sfc.contains(cmap, np.array([2.0, 0.5, 0.5]))   # closed set
    assert not sfc.contains(sfc.CorridorMap(), np.zeros(3))


def test_policies():
    with pytest.raises(ValueError):
        sfc.CorridorPolicy("optimistic")
    P = sfc.box_polytope([0, 0, 0], [1, 1, 1])
    ut = UncertainTransform(Transform.identity(), 1e-6 * np.eye(6))
    heur = sfc.CorridorMap((P,), 0, sfc.CorridorPolicy("heuristic", window=3))
    for k in range(1, 4):
        heur = sfc.step_corridor(heur, ut, np.zeros((0, 3)), np.full(3, 0.5), k, UNIT)
    assert [Q.birth_frame for Q in heur.polytopes] == [1, 2, 3]
    cert = sfc.CorridorMap((P,), 0, sfc.CorridorPolicy("certified", kappa=9.0))
    cert = sfc.step_corridor(cert, ut, None, None, 1, UNIT, new_polytope=P)
    assert cert.polytopes[0].b.max() < 1.0 and cert.polytopes[1] is P


def test_json_roundtrip():
    P = sfc.generate_polytope(np.zeros(3), np.random.default_rng(0).uniform(-1, 1, (30, 3)), UNIT, birth_frame=7)
    d = json.loads(json.dumps(P.to_json()))
    Q = sfc.Polytope.from_json(d)
    assert np.array_equal(Q.A, P.A) and np.array_equal(Q.b, P.b) and Q.birth_frame == 7
    text = sfc.corridor_to_json(sfc.CorridorMap((P,), 3))
    assert json.loads(text)["polytopes"][0]["birth_frame"] == 7


def test_monte_carlo_volume_matches_exact():
    P = sfc.generate_polytope(np.zeros(3), np.random.default_rng(2).uniform(-1, 1, (30, 3)), UNIT)
    est = sfc.monte_carlo_volume((P,), [-1, -1, -1], [1, 1, 1], 200_000, np.random.default_rng(0))
    assert est == pytest.approx(oracles.polytope_volume(P.A, P.b), rel=0.03)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_face_vertices_lie_on_their_faces(seed):
    rng = np.random.default_rng(seed)
    P = sfc.generate_polytope(rng.uniform(-0.2, 0.2, 3), rng.uniform(-1, 1, (30, 3)), UNIT)
    assert np.all(P.vertices @ P.A.T <= P.b + 1e-7)
    assert np.all(P.incidence.sum(axis=1) >= 3)
    for i, V in enumerate(P.face_vertices()):
        assert np.all(np.abs(V @ P.A[i] - P.b[i]) <= 1e-7 * (1 + abs(P.b[i])))
