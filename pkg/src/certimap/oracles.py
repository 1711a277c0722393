"""Slow, independent reference computations.

Nothing here calls the fast paths it is meant to check: the chi-square
quantile is inverted by bisection on a hand-written incomplete gamma series,
rigid motions go through a matrix exponential of the 4x4 generator, ray hits are
found by marching, and polytope volumes come from scipy's halfspace hulls.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial.transform import Rotation


def regularized_lower_gamma(s: float, x: float) -> float:
    """P(s, x) by the power series, accurate for the moderate arguments used here."""
    if x <= 0.0:
        return 0.0
    term = 1.0 / s
    total = term
    n = 0
    while abs(term) > 1e-17 * abs(total) and n < 10_000:
        n += 1
        term *= x / (s + n)
        total += term
    return math.exp(s * math.log(x) - x - math.lgamma(s)) * total


def chi2_cdf(x: float, dof: int) -> float:
    return regularized_lower_gamma(dof / 2.0, x / 2.0)


def chi2_quantile(p: float, dof: int = 3, tol: float = 1e-12) -> float:
    """Invert the chi-square CDF by bisection."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _generator(xi):
    rho, phi = xi[:3], xi[3:]
    G = np.zeros((4, 4))
    G[0, 1], G[0, 2], G[1, 2] = -phi[2], phi[1], -phi[0]
    G[1, 0], G[2, 0], G[2, 1] = phi[2], -phi[1], phi[0]
    G[:3, 3] = rho
    return G


def homogeneous(R, t):
    H = np.eye(4)
    H[:3, :3] = R
    H[:3, 3] = t
    return H


def perturbed_point(H, xi, p):
    """``H Exp(xi) p`` through the matrix exponential."""
    q = H @ expm(_generator(xi)) @ np.append(p, 1.0)
    return q[:3]


def numeric_point_jacobian(H, p, h: float = 1e-6):
    J = np.zeros((3, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        J[:, i] = (perturbed_point(H, e, p) - perturbed_point(H, -e, p)) / (2.0 * h)
    return J


def batch_exp(tau) -> tuple[np.ndarray, np.ndarray]:
    """Rotations and translations of ``Exp(tau)`` for a batch (n, 6), translation first.

    The rotation comes from scipy's rotation-vector map; the translation uses
    the closed-form series of the SE(3) left Jacobian, written out here.
    """
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    rho, phi = tau[:, :3], tau[:, 3:]
    R = Rotation.from_rotvec(phi).as_matrix()
    th = np.linalg.norm(phi, axis=1)
    small = th < 1e-4
    ths = np.where(small, 1.0, th)
    c1 = np.where(small, 0.5 - th ** 2 / 24.0, (1.0 - np.cos(ths)) / ths ** 2)
    c2 = np.where(small, 1.0 / 6.0 - th ** 2 / 120.0, (ths - np.sin(ths)) / ths ** 3)
    cr = np.cross(phi, rho)
    t = rho + c1[:, None] * cr + c2[:, None] * np.cross(phi, cr)
    return R, t


def containment_fraction(Sigma, kappa: float, n: int, seed: int = 0, H=None, p=None) -> float:
    """Fraction of ``H Exp(tau) p`` samples inside the first-order ellipsoid.

    The ellipsoid shape uses a finite-difference Jacobian, not the analytic one.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    H = np.eye(4) if H is None else np.asarray(H, dtype=float)
    p = np.array([0.5, -0.3, 1.0]) if p is None else np.asarray(p, dtype=float)
    rng = np.random.default_rng(seed)
    w, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    F = V * np.sqrt(np.clip(w, 0.0, None))
    J = numeric_point_jacobian(H, p)
    S = kappa * J @ Sigma @ J.T + 1e-12 * np.eye(3)
    Sinv = np.linalg.inv(S)
    center = H[:3, :3] @ p + H[:3, 3]
    tau = rng.standard_normal((n, 6)) @ F.T
    R, t = batch_exp(tau)
    q = np.einsum("nij,j->ni", R, p) + t
    d = (q @ H[:3, :3].T + H[:3, 3]) - center
    inside = np.einsum("ni,ij,nj->n", d, Sinv, d) <= 1.0
    return float(inside.mean())


def solid_distance(points, boxes, planes) -> np.ndarray:
    """Unsigned distance from each point to the union of solids (0 inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(pts.shape[0], np.inf)
    for lo, hi in boxes:
        gap = np.maximum(np.maximum(np.asarray(lo) - pts, pts - np.asarray(hi)), 0.0)
        out = np.minimum(out, np.sqrt((gap ** 2).sum(axis=1)))
    for n, off in planes:
        n = np.asarray(n, dtype=float)
        nn = np.linalg.norm(n)
        out = np.minimum(out, np.maximum(pts @ n / nn - off / nn, 0.0))
    return out


def cube_clearance(free_idx, voxel_size: float) -> np.ndarray:
    """Distance from each listed cube to the nearest cube not listed, by exhaustive search.

    Cubes are closed, so two cubes sharing a face, edge or corner are 0 apart.
    The search runs over a one-cell border around the listed set.
    """
    idx = np.asarray(free_idx, dtype=np.int64).reshape(-1, 3)
    lo = idx.min(axis=0) - 1
    hi = idx.max(axis=0) + 1
    ranges = [np.arange(lo[d], hi[d] + 1) for d in range(3)]
    allc = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, 3)
    listed = {tuple(c) for c in idx}
    blocked = np.array([c for c in allc if tuple(c) not in listed])
    out = np.empty(idx.shape[0])
    for s in range(0, idx.shape[0], 512):
        q = idx[s:s + 512]
        gap = np.maximum(np.abs(q[:, None, :] - blocked[None, :, :]) - 1, 0)
        out[s:s + 512] = np.sqrt((gap ** 2).sum(axis=2)).min(axis=1)
    return out * voxel_size


def brute_distance_grid(n: int, voxel_size: float, origin, points) -> np.ndarray:
    """(n, n, n) nearest-point distance at every cell centre, by exhaustive search."""
    origin = np.asarray(origin, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    ijk = np.stack(np.meshgrid(*(np.arange(n),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = origin + voxel_size * (ijk + 0.5)
    out = np.full(centers.shape[0], np.inf)
    for chunk in range(0, centers.shape[0], 4096):
        c = centers[chunk:chunk + 4096]
        if not pts.size:
            break
        d2 = ((c[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        out[chunk:chunk + 4096] = np.sqrt(d2.min(axis=1))
    return out.reshape(n, n, n)


def _inside_solids(p, boxes, planes):
    for lo, hi in boxes:
        if np.all(p > lo) and np.all(p < hi):
            return True
    for n, off in planes:
        if p @ n < off:
            return True
    return False


def ray_march(origin, direction, boxes, planes, max_t: float = 20.0, step: float = 1e-3) -> float:
    """First entry into a solid along the ray by fixed stepping plus bisection; inf on a miss.

    ``boxes`` is a list of ``(lo, hi)``, ``planes`` a list of ``(unit normal, offset)``
    with the solid on the side ``n.x < offset``.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    boxes = [(np.asarray(a, float), np.asarray(b, float)) for a, b in boxes]
    planes = [(np.asarray(n, float), float(c)) for n, c in planes]
    t_prev = 0.0
    t = step
    while t <= max_t:
        if _inside_solids(o + t * d, boxes, planes):
            lo, hi = t_prev, t
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if _inside_solids(o + mid * d, boxes, planes):
                    hi = mid
                else:
                    lo = mid
            return hi
        t_prev = t
        t += step
    return math.inf


def chebyshev_center(A, b):
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(4)
    c[3] = -1.0
    res = linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=b,
                  bounds=[(None, None)] * 3 + [(0, None)], method="highs")
    if not res.success or res.x[3] <= 1e-12:
        return None, 0.0
    return res.x[:3], res.x[3]


def polytope_volume(A, b) -> float:
    """Exact volume of ``{x : A x <= b}`` via scipy's halfspace intersection and hull."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    center, radius = chebyshev_center(A, b)
    if center is None:
        return 0.0
    hs = HalfspaceIntersection(np.hstack([A, -b[:, None]]), center)
    return float(ConvexHull(hs.intersections).volume)


def monte_carlo_polytope_volume(A, b, lo, hi, n: int, seed: int = 0) -> float:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    rng = np.random.default_rng(seed)
    pts = lo + rng.uniform(size=(n, 3)) * (hi - lo)
    inside = np.all(pts @ A.T <= b, axis=1)
    return float(np.prod(hi - lo) * inside.mean())


def power_iteration_max_eigenvalue(M, squarings: int = 60) -> float:
    """Largest eigenvalue of a symmetric PSD matrix.

    Power iteration run through repeated squaring, so nearly tied top
    eigenvalues still separate; the estimate is the Rayleigh quotient.
    """
    M = np.asarray(M, dtype=float)
    scale = np.trace(M)
    if scale <= 0.0:
        return 0.0
    B = M / scale
    for _ in range(squarings):
        B = B @ B
        nb = np.linalg.norm(B)
        if nb == 0.0:
            break
        B /= nb
    v = B[:, np.argmax(np.linalg.norm(B, axis=0))]
    if not np.any(v):
        return 0.0
    return float(v @ M @ v / (v @ v))
