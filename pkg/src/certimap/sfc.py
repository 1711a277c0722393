"""Certified safe flight corridors.

A corridor is a union of convex polytopes ``{p : A p <= b}`` kept in the
current body frame. Each odometry step moves the polytopes with the estimated
increment; the certified policy additionally pulls every face inwards by the
worst-case displacement of its vertices under the step's uncertainty.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .liegroup import Transform, UncertainTransform, act, psd_factor

DET_TOL = 1e-10
FEAS_TOL = 1e-7
SEED_EPS = 1e-6


class EmptyPolytope(Exception):
    """Raised when a polytope has no feasible vertex."""


def _normalize(A, b):
    A = np.asarray(A, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[0] != b.shape[0]:
        raise ValueError("A and b disagree on face count")
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero face normal")
    return A / norms[:, None], b / norms


def is_bounded(A) -> bool:
    """True when ``{d : A d <= 0}`` is only the origin."""
    A = np.asarray(A, dtype=float)
    bounds = [(-1.0, 1.0)] * 3
    for axis in range(3):
        for sign in (1.0, -1.0):
            c = np.zeros(3)
            c[axis] = -sign
            res = linprog(c, A_ub=A, b_ub=np.zeros(len(A)), bounds=bounds, method="highs")
            if res.status != 0 or -res.fun > 1e-9:
                return False
    return True


def enumerate_vertices(A, b):
    """All vertices of ``{A x <= b}`` and their face incidence (V, N) matrix."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if n < 4:
        return np.zeros((0, 3)), np.zeros((0, n), dtype=bool)
    tri = np.array(list(itertools.combinations(range(n), 3)))
    M = A[tri]
    det = np.linalg.det(M)
    keep = np.abs(det) > DET_TOL
    tri, M = tri[keep], M[keep]
    if tri.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros((0, n), dtype=bool)
    X = np.linalg.solve(M, b[tri][:, :, None])[:, :, 0]
    feas = np.all(X @ A.T <= b + FEAS_TOL, axis=1)
    X = X[feas]
    if X.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros((0, n), dtype=bool)
    # merge vertices where more than three faces meet
    order = np.lexsort(X.T[::-1])
    X = X[order]
    uniq = [0]
    for i in range(1, X.shape[0]):
        if np.max(np.abs(X[i] - X[uniq]), axis=1).min() > 1e-9:
            uniq.append(i)
    V = X[uniq]
    tol = FEAS_TOL * (1.0 + np.abs(b))
    inc = np.abs(V @ A.T - b) <= tol
    return V, inc


@dataclass(frozen=True)
class Polytope:
    """H-representation with unit normals and cached vertices."""

    A: np.ndarray
    b: np.ndarray
    birth_frame: int = 0
    vertices: np.ndarray | None = field(default=None, compare=False, repr=False)
    incidence: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    def ensure_vertices(self) -> "Polytope":
        if self.vertices is not None:
            return self
        V, inc = enumerate_vertices(self.A, self.b)
        return replace(self, vertices=V, incidence=inc)

    def face_vertices(self):
        P = self.ensure_vertices()
        return [P.vertices[P.incidence[:, i]] for i in range(P.n_faces)]

    def contains(self, p, tol=0.0):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        inside = np.all(p @ self.A.T <= self.b + tol, axis=1)
        return bool(inside[0]) if inside.shape[0] == 1 else inside

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "birth_frame": int(self.birth_frame)}

    @classmethod
    def from_json(cls, d) -> "Polytope":
        return make_polytope(d["A"], d["b"], d.get("birth_frame", 0), check_bounded=False)


def make_polytope(A, b, birth_frame=0, check_bounded=True, prune=False) -> Polytope:
    A, b = _normalize(A, b)
    if check_bounded and not is_bounded(A):
        raise ValueError("polytope is unbounded")
    P = Polytope(A, b, int(birth_frame)).ensure_vertices()
    if P.vertices.shape[0] == 0:
        raise EmptyPolytope("no feasible vertex")
    return _drop_unsupported(P) if prune else P


def box_polytope(lo, hi, birth_frame=0) -> Polytope:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    A = np.vstack([np.eye(3), -np.eye(3)])
    b = np.concatenate([hi, -lo])
    return make_polytope(A, b, birth_frame, check_bounded=False)


def _drop_unsupported(P: Polytope) -> Polytope:
    used = P.incidence.any(axis=0)
    if used.all():
        return P
    return Polytope(P.A[used], P.b[used], P.birth_frame, P.vertices, P.incidence[:, used])


def generate_polytope(seed, obstacles, bounds, clip=None, birth_frame=0) -> Polytope:
    """Grow an obstacle-free polytope around ``seed``.

    Repeatedly takes the nearest obstacle point that is not yet cut away and adds
    the halfspace through it facing the seed. ``bounds`` is ``(lo, hi)``; ``clip``
    is an optional extra ``(A, b)`` pair (for instance a camera frustum).
    """
    seed = np.asarray(seed, dtype=float).reshape(3)
    lo, hi = (np.asarray(x, dtype=float) for x in bounds)
    A_fix = [np.vstack([np.eye(3), -np.eye(3)])]
    b_fix = [np.concatenate([hi, -lo])]
    if clip is not None:
        cA, cb = _normalize(*clip)
        A_fix.append(cA)
        b_fix.append(cb)
    A_fix = np.vstack(A_fix)
    b_fix = np.concatenate(b_fix)
    if np.any(A_fix @ seed >= b_fix):
        raise ValueError("seed is not strictly inside the bounds")

    pts = np.asarray(obstacles, dtype=float).reshape(-1, 3)
    faces_A, faces_b = [], []
    if pts.shape[0]:
        d = np.linalg.norm(pts - seed, axis=1)
        if d.min() <= SEED_EPS:
            raise ValueError("seed lies on an obstacle point")
        # only points inside the clipped region can enter the result
        live = np.all(pts @ A_fix.T < b_fix, axis=1)
        while live.any():
            cand = np.nonzero(live)[0]
            i = cand[np.argmin(d[cand])]
            q = pts[i]
            a = (q - seed) / d[i]
            off = float(a @ q)
            faces_A.append(a)
            faces_b.append(off)
            live[i] = False
            live[cand] &= pts[cand] @ a < off
    A = np.vstack(faces_A + [A_fix]) if faces_A else A_fix
    b = np.concatenate([np.asarray(faces_b), b_fix]) if faces_b else b_fix
    P = Polytope(*_normalize(A, b), int(birth_frame)).ensure_vertices()
    if P.vertices.shape[0] == 0:
        raise EmptyPolytope("generated polytope is empty")
    return _drop_unsupported(P)


def transform_polytope_exact(P: Polytope, T: Transform) -> Polytope:
    """Rigid image of ``P`` under ``p -> R p + t``."""
    AR = P.A @ T.R.T
    b = P.b + AR @ T.t
    V = None if P.vertices is None else act(T, P.vertices) if len(P.vertices) else P.vertices
    return Polytope(AR, b, P.birth_frame, V, P.incidence)


def face_shifts(P: Polytope, ut: UncertainTransform, kappa: float) -> np.ndarray:
    """Per-face inward shift: worst vertex spread of the face under ``ut``.

    For face normal ``a`` and vertex ``v`` the spread along the moved normal is
    ``sqrt(kappa * g^T Sigma g)`` with ``g = [a; v x a]``.
    """
    P = P.ensure_vertices()
    F = psd_factor(ut.covariance)
    rho = np.zeros(P.n_faces)
    for i in range(P.n_faces):
        V = P.vertices[P.incidence[:, i]]
        if V.shape[0] == 0:
            continue
        a = P.A[i]
        g = np.hstack([np.broadcast_to(a, V.shape), np.cross(V, a)])
        rho[i] = np.sqrt(kappa) * np.max(np.linalg.norm(g @ F, axis=1))
    return rho


def deflate_polytope(P: Polytope, ut: UncertainTransform, kappa: float) -> Polytope | None:
    """Move ``P`` from ``B_k`` to ``B_{k+1}`` and shrink it; ``None`` when nothing is left."""
    P = P.ensure_vertices()
    rho = face_shifts(P, ut, kappa)
    moved = transform_polytope_exact(P, ut.mean)
    if not np.any(rho > 0.0):
        return moved
    A, b = moved.A, moved.b - rho
    V, inc = enumerate_vertices(A, b)
    if V.shape[0] == 0:
        return None
    return _drop_unsupported(Polytope(A, b, P.birth_frame, V, inc))


def separating_offset(p_hat, Sigma_p, a) -> float:
    """Offset ``r`` with the ellipsoid ``(p_hat, Sigma_p)`` inside ``{a^T p >= r}``."""
    a = np.asarray(a, dtype=float).reshape(3)
    if not np.any(a):
        raise ValueError("normal must be non-zero")
    Sigma_p = np.asarray(Sigma_p, dtype=float)
    return float(a @ np.asarray(p_hat, dtype=float) - np.sqrt(max(a @ Sigma_p @ a, 0.0)))


@dataclass(frozen=True)
class CorridorPolicy:
    kind: str = "baseline"
    window: int = 60
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("baseline", "heuristic", "certified"):
            raise ValueError(f"unknown corridor policy {self.kind!r}")


@dataclass(frozen=True)
class CorridorMap:
    polytopes: tuple = ()
    frame: int = 0
    policy: CorridorPolicy = CorridorPolicy()

    def packed(self):
        """Flattened faces and vertex boxes for the union kernel."""
        return pack_polytopes(self.polytopes)


def pack_polytopes(polys):
    if not polys:
        z = np.zeros((0, 3))
        return z, np.zeros(0), np.zeros(1, dtype=np.int64), z, z
    polys = [P.ensure_vertices() for P in polys]
    A = np.vstack([P.A for P in polys])
    b = np.concatenate([P.b for P in polys])
    start = np.concatenate([[0], np.cumsum([P.n_faces for P in polys])]).astype(np.int64)
    lo = np.array([P.vertices.min(axis=0) for P in polys]) - 1e-9
    hi = np.array([P.vertices.max(axis=0) for P in polys]) + 1e-9
    return A, b, start, lo, hi


BOUNDARY_TOL = 1e-9


def union_depths(polys, points) -> np.ndarray:
    """Largest smallest-face-slack over the polytopes; non-negative inside the union."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if not polys:
        return np.full(pts.shape[0], -np.inf)
    return kernels.union_penetration(pts, *pack_polytopes(polys))


def contains(cmap: CorridorMap, p) -> bool:
    """Closed-set membership, with face contact accepted up to ``BOUNDARY_TOL``."""
    return bool(union_depths(cmap.polytopes, p)[0] >= -BOUNDARY_TOL)


def penetration_depth(cmap: CorridorMap, p) -> float:
    d = union_depths(cmap.polytopes, p)[0]
    return float(d) if d > 0.0 else 0.0


def step_corridor(cmap: CorridorMap, ut: UncertainTransform, new_obstacles, seed, frame: int,
                  bounds, clip=None, new_polytope: Polytope | None = None) -> CorridorMap:
    """Advance the corridor by one odometry step and add the newest polytope.

    ``ut`` maps ``B_k`` to ``B_{k+1}``; ``new_obstacles`` and ``seed`` live in ``B_{k+1}``.
    A precomputed ``new_polytope`` skips generation (lockstep runs share it).
    """
    pol = cmap.policy
    if pol.kind == "certified":
        moved = [deflate_polytope(P, ut, pol.kappa) for P in cmap.polytopes]
        kept = [P for P in moved if P is not None]
    else:
        kept = [transform_polytope_exact(P, ut.mean) for P in cmap.polytopes]
        if pol.kind == "heuristic":
            kept = [P for P in kept if frame - P.birth_frame < pol.window]
    if new_polytope is not None:
        kept.append(new_polytope)
    else:
        try:
            kept.append(generate_polytope(seed, new_obstacles, bounds, clip, birth_frame=frame))
        except EmptyPolytope:
            pass
    return CorridorMap(tuple(kept), frame, pol)


def corridor_to_json(cmap: CorridorMap) -> str:
    return json.dumps({"frame": cmap.frame, "policy": cmap.policy.kind,
                       "polytopes": [P.to_json() for P in cmap.polytopes]})


def monte_carlo_volume(polys, lo, hi, n: int, rng, to_body: Transform | None = None) -> float:
    """Union volume by uniform sampling of the box ``[lo, hi]``.

    Samples are drawn in the box's own frame and mapped through ``to_body``
    before the containment test, so runs that share a seed share sample points.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    u = rng.uniform(size=(n, 3))
    pts = lo + u * (hi - lo)
    if to_body is not None:
        pts = act(to_body, pts)
    inside = union_depths(polys, pts) >= 0.0
    return float(np.prod(hi - lo) * inside.mean())


__all__ = [
    "Polytope", "CorridorMap", "CorridorPolicy", "EmptyPolytope", "make_polytope", "box_polytope",
    "enumerate_vertices", "is_bounded", "generate_polytope", "transform_polytope_exact",
    "face_shifts", "deflate_polytope", "separating_offset", "contains", "penetration_depth",
    "union_depths", "step_corridor", "corridor_to_json", "monte_carlo_volume",
]
