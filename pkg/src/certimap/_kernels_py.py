"""Pure numpy versions of the hot loops. Same signatures as the compiled core."""

import numpy as np
from scipy.ndimage import minimum_filter


def sym3_max_eigenvalue(M):
    """Largest eigenvalue of symmetric 3x3 matrices (n, 3, 3) by the trigonometric method."""
    M = np.asarray(M, dtype=np.float64)
    a00, a11, a22 = M[:, 0, 0], M[:, 1, 1], M[:, 2, 2]
    a01, a02, a12 = M[:, 0, 1], M[:, 0, 2], M[:, 1, 2]
    p1 = a01 * a01 + a02 * a02 + a12 * a12
    q = (a00 + a11 + a22) / 3.0
    d0, d1, d2 = a00 - q, a11 - q, a22 - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = p > 0.0
    inv = np.where(safe, 1.0 / np.where(safe, p, 1.0), 0.0)
    b00, b11, b22 = d0 * inv, d1 * inv, d2 * inv
    b01, b02, b12 = a01 * inv, a02 * inv, a12 * inv
    det = (b00 * (b11 * b22 - b12 * b12)
           - b01 * (b01 * b22 - b12 * b02)
           + b02 * (b01 * b12 - b11 * b02))
    r = np.clip(0.5 * det, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam = q + 2.0 * p * np.cos(phi)
    return np.where(safe, lam, np.maximum(np.maximum(a00, a11), a22))


def deflation_amounts(centers, R_mb, t_mb, R_inc, Sigma, kappa):
    """sqrt(lambda_max(kappa J Sigma J^T)) per map-frame voxel center.

    ``(R_mb, t_mb)`` takes map coordinates to the new body frame and ``R_inc`` is
    the rotation of the incremental transform that owns ``Sigma``.
    """
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    p = centers @ np.asarray(R_mb).T + np.asarray(t_mb)
    n = p.shape[0]
    G = np.zeros((n, 3, 6))
    G[:, 0, 0] = G[:, 1, 1] = G[:, 2, 2] = 1.0
    # -hat(p)
    G[:, 0, 4] = p[:, 2]
    G[:, 0, 5] = -p[:, 1]
    G[:, 1, 3] = -p[:, 2]
    G[:, 1, 5] = p[:, 0]
    G[:, 2, 3] = p[:, 1]
    G[:, 2, 4] = -p[:, 0]
    J = np.einsum("ij,njk->nik", np.asarray(R_inc), G)
    M = kappa * np.einsum("nik,kl,njl->nij", J, np.asarray(Sigma), J)
    lam = sym3_max_eigenvalue(M)
    return np.sqrt(np.clip(lam, 0.0, None))


def union_penetration(points, A, b, face_start, lo, hi):
    """Largest, over polytopes whose vertex box holds the point, smallest face slack.

    Non-negative exactly when some polytope contains the point; ``-inf`` when no box does.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.full(points.shape[0], -np.inf)
    for k in range(len(face_start) - 1):
        s, e = face_start[k], face_start[k + 1]
        box = np.all((points >= lo[k]) & (points <= hi[k]), axis=1)
        idx = np.nonzero(box)[0]
        if idx.size == 0:
            continue
        slack = np.min(b[s:e][None, :] - points[idx] @ A[s:e].T, axis=1)
        out[idx] = np.maximum(out[idx], slack)
    return out


def raycast_boxes(origin, dirs, lo, hi):
    """Nearest positive hit parameter of each ray against axis-aligned boxes (inf on miss)."""
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    best = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        for k in range(len(lo)):
            t1 = (lo[k] - origin) * inv
            t2 = (hi[k] - origin) * inv
            # zero direction components: inside the slab it never binds, outside it misses
            par = dirs == 0.0
            inside = (origin >= lo[k]) & (origin <= hi[k])
            t1 = np.where(par, -np.inf, t1)
            t2 = np.where(par, np.inf, t2)
            miss = np.any(par & ~inside, axis=1)
            tn = np.max(np.minimum(t1, t2), axis=1)
            tf = np.min(np.maximum(t1, t2), axis=1)
            t = np.where(tn > 0.0, tn, tf)
            ok = ~miss & (tn <= tf) & (t > 0.0)
            best = np.where(ok & (t < best), t, best)
    return best


def brute_nearest(queries, points, cutoff=np.inf):
    """Exact nearest distance by exhaustive search, capped at ``cutoff``."""
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.full(q.shape[0], float(cutoff))
    if p.shape[0] == 0:
        return out
    chunk = max(1, 2_000_000 // max(1, p.shape[0]))
    for s in range(0, q.shape[0], chunk):
        d2 = np.sum((q[s:s + chunk, None, :] - p[None, :, :]) ** 2, axis=2)
        out[s:s + chunk] = np.minimum(np.sqrt(d2.min(axis=1)), cutoff)
    return out


def observe_voxels(lo_idx, hi_idx, origin, voxel_size, R_cm, t_cm, intr, zbuf):
    """Index triples of voxels seen to be entirely free, inside the index box [lo_idx, hi_idx).

    ``(R_cm, t_cm)`` maps map coordinates into the camera frame, ``intr`` is
    ``(fx, fy, cx, cy, min_range, max_range)``. The voxel's bounding sphere
    must sit inside the range limits, and every pixel in a square window that
    covers its projection must see past the sphere's far depth. Windows that
    leave the image fail.
    """
    fx, fy, cx, cy, rmin, rmax = intr
    zbuf = np.asarray(zbuf, dtype=np.float64)
    H, W = zbuf.shape
    half = 0.5 * np.sqrt(3.0) * voxel_size
    fmax = max(fx, fy)
    axes = [np.arange(lo_idx[d], hi_idx[d]) for d in range(3)]
    if any(a.size == 0 for a in axes):
        return np.zeros((0, 3), dtype=np.int64)
    ii, jj, kk = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    pc = (origin + voxel_size * (idx + 0.5)) @ np.asarray(R_cm).T + np.asarray(t_cm)
    z = pc[:, 2]
    rng = np.linalg.norm(pc, axis=1)
    ok = (z - half > 0.0) & (rng - half >= rmin) & (rng + half <= rmax)
    idx, pc, z = idx[ok], pc[ok], z[ok]
    u = np.floor(fx * pc[:, 0] / z + cx + 0.5).astype(np.int64)
    v = np.floor(fy * pc[:, 1] / z + cy + 0.5).astype(np.int64)
    w = np.ceil(fmax * half / (z - half)).astype(np.int64) + 1
    ok = (u - w >= 0) & (u + w < W) & (v - w >= 0) & (v + w < H)
    keep = np.zeros(idx.shape[0], dtype=bool)
    for width in np.unique(w[ok]):
        sel = np.nonzero(ok & (w == width))[0]
        zmin = minimum_filter(zbuf, size=2 * int(width) + 1, mode="constant", cval=-np.inf)
        keep[sel] = zmin[v[sel], u[sel]] >= z[sel] + half
    return idx[keep]


def visible_subcells(centers_cam, offsets_cam, half, intr, zbuf):
    """(n, m) mask: does cube ``centers_cam[i] + offsets_cam[j]`` (bounding radius ``half``) pass the window test."""
    fx, fy, cx, cy, rmin, rmax = intr
    zbuf = np.asarray(zbuf, dtype=np.float64)
    H, W = zbuf.shape
    P = np.asarray(centers_cam, dtype=np.float64).reshape(-1, 3)
    D = np.asarray(offsets_cam, dtype=np.float64).reshape(-1, 3)
    pc = (P[:, None, :] + D[None, :, :]).reshape(-1, 3)
    z = pc[:, 2]
    rng = np.linalg.norm(pc, axis=1)
    ok = (z - half > 0.0) & (rng - half >= rmin) & (rng + half <= rmax)
    zs = np.where(ok, z, 1.0)
    u = np.floor(fx * pc[:, 0] / zs + cx + 0.5).astype(np.int64)
    v = np.floor(fy * pc[:, 1] / zs + cy + 0.5).astype(np.int64)
    w = np.ceil(max(fx, fy) * half / np.where(ok, z - half, 1.0)).astype(np.int64) + 1
    ok &= (u - w >= 0) & (u + w < W) & (v - w >= 0) & (v + w < H)
    keep = np.zeros(pc.shape[0], dtype=bool)
    for width in np.unique(w[ok]):
        sel = np.nonzero(ok & (w == width))[0]
        zmin = minimum_filter(zbuf, size=2 * int(width) + 1, mode="constant", cval=-np.inf)
        keep[sel] = zmin[v[sel], u[sel]] >= z[sel] + half
    return keep.reshape(P.shape[0], D.shape[0])


def edge_gaps(nbr_label, hidden, gaps, order):
    """Smallest gap to a hidden sub-cell over each row's labelled neighbours (inf if none).

    ``nbr_label[i, j]`` is the candidate row of neighbour ``j`` of cell ``i`` or -1;
    ``gaps[j]`` holds that neighbour's sub-cell gaps. ``order`` is unused here.
    """
    nbr_label = np.asarray(nbr_label)
    hidden = np.asarray(hidden, dtype=bool)
    best = np.full(nbr_label.shape[0], np.inf)
    for j in range(nbr_label.shape[1]):
        rows = np.nonzero(nbr_label[:, j] >= 0)[0]
        if rows.size == 0:
            continue
        g = np.where(hidden[nbr_label[rows, j]], gaps[j][None, :], np.inf).min(axis=1)
        best[rows] = np.minimum(best[rows], g)
    return best
