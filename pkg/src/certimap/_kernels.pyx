# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Mirrors certimap._kernels_py function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, acos, cos, floor, ceil, INFINITY

cnp.import_array()


cdef inline double _lmax3(double a00, double a11, double a22,
                          double a01, double a02, double a12) noexcept nogil:
    cdef double p1 = a01 * a01 + a02 * a02 + a12 * a12
    cdef double q = (a00 + a11 + a22) / 3.0
    cdef double d0 = a00 - q, d1 = a11 - q, d2 = a22 - q
    cdef double p = sqrt((d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1) / 6.0)
    cdef double m, inv, det, r
    if p <= 0.0:
        m = a00
        if a11 > m:
            m = a11
        if a22 > m:
            m = a22
        return m
    inv = 1.0 / p
    d0 *= inv
    d1 *= inv
    d2 *= inv
    a01 *= inv
    a02 *= inv
    a12 *= inv
    det = (d0 * (d1 * d2 - a12 * a12)
           - a01 * (a01 * d2 - a12 * a02)
           + a02 * (a01 * a12 - d1 * a02))
    r = 0.5 * det
    if r < -1.0:
        r = -1.0
    elif r > 1.0:
        r = 1.0
    return q + 2.0 * p * cos(acos(r) / 3.0)


def sym3_max_eigenvalue(M):
    cdef const double[:, :, ::1] m = np.ascontiguousarray(M, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _lmax3(m[i, 0, 0], m[i, 1, 1], m[i, 2, 2],
                          m[i, 0, 1], m[i, 0, 2], m[i, 1, 2])
    return out


def deflation_amounts(centers, R_mb, t_mb, R_inc, Sigma, double kappa):
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] Rm = np.ascontiguousarray(R_mb, dtype=np.float64)
    cdef const double[::1] tm = np.ascontiguousarray(t_mb, dtype=np.float64)
    cdef const double[:, ::1] Ri = np.ascontiguousarray(R_inc, dtype=np.float64)
    cdef const double[:, ::1] S = np.ascontiguousarray(Sigma, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0], v, i, j, k, l
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double p0, p1, p2, acc, lam
    cdef double G[3][6]
    cdef double J[3][6]
    cdef double JS[3][6]
    cdef double M[3][3]
    with nogil:
        for v in range(n):
            p0 = Rm[0, 0] * c[v, 0] + Rm[0, 1] * c[v, 1] + Rm[0, 2] * c[v, 2] + tm[0]
            p1 = Rm[1, 0] * c[v, 0] + Rm[1, 1] * c[v, 1] + Rm[1, 2] * c[v, 2] + tm[1]
            p2 = Rm[2, 0] * c[v, 0] + Rm[2, 1] * c[v, 1] + Rm[2, 2] * c[v, 2] + tm[2]
            # G = [I, -hat(p)]
            G[0][0] = 1.0; G[0][1] = 0.0; G[0][2] = 0.0
            G[1][0] = 0.0; G[1][1] = 1.0; G[1][2] = 0.0
            G[2][0] = 0.0; G[2][1] = 0.0; G[2][2] = 1.0
            G[0][3] = 0.0; G[0][4] = p2; G[0][5] = -p1
            G[1][3] = -p2; G[1][4] = 0.0; G[1][5] = p0
            G[2][3] = p1; G[2][4] = -p0; G[2][5] = 0.0
            for i in range(3):
                for k in range(6):
                    J[i][k] = Ri[i, 0] * G[0][k] + Ri[i, 1] * G[1][k] + Ri[i, 2] * G[2][k]
            for i in range(3):
                for l in range(6):
                    acc = 0.0
                    for k in range(6):
                        acc = acc + J[i][k] * S[k, l]
                    JS[i][l] = acc
            for i in range(3):
                for j in range(i, 3):
                    acc = 0.0
                    for l in range(6):
                        acc = acc + JS[i][l] * J[j][l]
                    M[i][j] = kappa * acc
            lam = _lmax3(M[0][0], M[1][1], M[2][2], M[0][1], M[0][2], M[1][2])
            o[v] = sqrt(lam) if lam > 0.0 else 0.0
    return out


def union_penetration(points, A, b, face_start, lo, hi):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] Af = np.ascontiguousarray(A, dtype=np.float64).reshape(-1, 3)
    cdef const double[::1] bf = np.ascontiguousarray(b, dtype=np.float64)
    cdef const long long[::1] fs = np.ascontiguousarray(face_start, dtype=np.int64)
    cdef const double[:, ::1] L = np.ascontiguousarray(lo, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] U = np.ascontiguousarray(hi, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = P.shape[0], npoly = fs.shape[0] - 1, i, k, f
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double x, y, z, best, slack, s
    with nogil:
        for i in range(n):
            x = P[i, 0]
            y = P[i, 1]
            z = P[i, 2]
            best = -INFINITY
            for k in range(npoly):
                if (x < L[k, 0] or x > U[k, 0] or y < L[k, 1] or y > U[k, 1]
                        or z < L[k, 2] or z > U[k, 2]):
                    continue
                slack = INFINITY
                for f in range(fs[k], fs[k + 1]):
                    s = bf[f] - (Af[f, 0] * x + Af[f, 1] * y + Af[f, 2] * z)
                    if s < slack:
                        slack = s
                if slack > best:
                    best = slack
            o[i] = best
    return out


def raycast_boxes(origin, dirs, lo, hi):
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] L = np.ascontiguousarray(lo, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] U = np.ascontiguousarray(hi, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = D.shape[0], nb = L.shape[0], i, k, a
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double tn, tf, t1, t2, tmp, best, t, d
    cdef bint miss
    with nogil:
        for i in range(n):
            best = INFINITY
            for k in range(nb):
                tn = -INFINITY
                tf = INFINITY
                miss = False
                for a in range(3):
                    d = D[i, a]
                    if d == 0.0:
                        if org[a] < L[k, a] or org[a] > U[k, a]:
                            miss = True
                            break
                        continue
                    t1 = (L[k, a] - org[a]) / d
                    t2 = (U[k, a] - org[a]) / d
                    if t1 > t2:
                        tmp = t1
                        t1 = t2
                        t2 = tmp
                    if t1 > tn:
                        tn = t1
                    if t2 < tf:
                        tf = t2
                if miss or tn > tf:
                    continue
                t = tn if tn > 0.0 else tf
                if t > 0.0 and t < best:
                    best = t
            o[i] = best
    return out


def brute_nearest(queries, points, double cutoff=INFINITY):
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = Q.shape[0], m = P.shape[0], i, j
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double best, dx, dy, dz, d2, c2 = cutoff * cutoff
    with nogil:
        for i in range(n):
            best = c2
            for j in range(m):
                dx = Q[i, 0] - P[j, 0]
                dy = Q[i, 1] - P[j, 1]
                dz = Q[i, 2] - P[j, 2]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
            o[i] = sqrt(best)
    return out


def observe_voxels(lo_idx, hi_idx, origin, double voxel_size, R_cm, t_cm, intr, zbuf):
    cdef const long long[::1] lo = np.ascontiguousarray(lo_idx, dtype=np.int64)
    cdef const long long[::1] hi = np.ascontiguousarray(hi_idx, dtype=np.int64)
    cdef const double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef const double[:, ::1] R = np.ascontiguousarray(R_cm, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(t_cm, dtype=np.float64)
    cdef const double[:, ::1] Z = np.ascontiguousarray(zbuf, dtype=np.float64)
    cdef double fx = intr[0], fy = intr[1], cx = intr[2], cy = intr[3]
    cdef double rmin = intr[4], rmax = intr[5]
    cdef double half = 0.5 * sqrt(3.0) * voxel_size
    cdef double fmax = fx if fx > fy else fy
    cdef Py_ssize_t H = Z.shape[0], W = Z.shape[1]
    cdef long long i, j, k, ui, vi, w, a, b, cnt = 0
    cdef long long ni = hi[0] - lo[0], nj = hi[1] - lo[1], nk = hi[2] - lo[2]
    if ni <= 0 or nj <= 0 or nk <= 0:
        return np.zeros((0, 3), dtype=np.int64)
    buf = np.empty((ni * nj * nk, 3), dtype=np.int64)
    cdef long long[:, ::1] B = buf
    cdef double cx0, cy0, cz0, px, py, pz, rng, zfar
    cdef bint clear
    with nogil:
        for i in range(lo[0], hi[0]):
            cx0 = org[0] + voxel_size * (i + 0.5)
            for j in range(lo[1], hi[1]):
                cy0 = org[1] + voxel_size * (j + 0.5)
                for k in range(lo[2], hi[2]):
                    cz0 = org[2] + voxel_size * (k + 0.5)
                    pz = R[2, 0] * cx0 + R[2, 1] * cy0 + R[2, 2] * cz0 + t[2]
                    if pz - half <= 0.0:
                        continue
                    px = R[0, 0] * cx0 + R[0, 1] * cy0 + R[0, 2] * cz0 + t[0]
                    py = R[1, 0] * cx0 + R[1, 1] * cy0 + R[1, 2] * cz0 + t[1]
                    rng = sqrt(px * px + py * py + pz * pz)
                    if rng - half < rmin or rng + half > rmax:
                        continue
                    ui = <long long>floor(fx * px / pz + cx + 0.5)
                    vi = <long long>floor(fy * py / pz + cy + 0.5)
                    w = _window(fmax, half, pz)
                    if ui - w < 0 or ui + w >= W or vi - w < 0 or vi + w >= H:
                        continue
                    zfar = pz + half
                    clear = True
                    for a in range(vi - w, vi + w + 1):
                        for b in range(ui - w, ui + w + 1):
                            if Z[a, b] < zfar:
                                clear = False
                                break
                        if not clear:
                            break
                    if not clear:
                        continue
                    B[cnt, 0] = i
                    B[cnt, 1] = j
                    B[cnt, 2] = k
                    cnt += 1
    return buf[:cnt].copy()


cdef inline long long _window(double f, double half, double z) noexcept nogil:
    return <long long>ceil(f * half / (z - half)) + 1


def visible_subcells(centers_cam, offsets_cam, double half, intr, zbuf):
    cdef const double[:, ::1] P = np.ascontiguousarray(centers_cam, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] D = np.ascontiguousarray(offsets_cam, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] Z = np.ascontiguousarray(zbuf, dtype=np.float64)
    cdef double fx = intr[0], fy = intr[1], cx = intr[2], cy = intr[3]
    cdef double rmin = intr[4], rmax = intr[5]
    cdef double fmax = fx if fx > fy else fy
    cdef Py_ssize_t H = Z.shape[0], W = Z.shape[1], n = P.shape[0], m = D.shape[0], i, s
    out = np.zeros((n, m), dtype=np.uint8)
    cdef unsigned char[:, ::1] o = out
    cdef double px, py, pz, rng, zfar
    cdef long long ui, vi, w, a, b
    cdef bint clear
    with nogil:
        for i in range(n):
            for s in range(m):
                px = P[i, 0] + D[s, 0]
                py = P[i, 1] + D[s, 1]
                pz = P[i, 2] + D[s, 2]
                if pz - half <= 0.0:
                    continue
                rng = sqrt(px * px + py * py + pz * pz)
                if rng - half < rmin or rng + half > rmax:
                    continue
                ui = <long long>floor(fx * px / pz + cx + 0.5)
                vi = <long long>floor(fy * py / pz + cy + 0.5)
                w = _window(fmax, half, pz)
                if ui - w < 0 or ui + w >= W or vi - w < 0 or vi + w >= H:
                    continue
                zfar = pz + half
                clear = True
                for a in range(vi - w, vi + w + 1):
                    for b in range(ui - w, ui + w + 1):
                        if Z[a, b] < zfar:
                            clear = False
                            break
                    if not clear:
                        break
                o[i, s] = clear
    return out.view(np.bool_)


def edge_gaps(nbr_label, hidden, gaps, order):
    cdef const long long[:, ::1] L = np.ascontiguousarray(nbr_label, dtype=np.int64)
    cdef const unsigned char[:, ::1] Hd = np.ascontiguousarray(hidden, dtype=np.uint8)
    cdef const double[:, ::1] G = np.ascontiguousarray(gaps, dtype=np.float64)
    cdef const long long[:, ::1] O = np.ascontiguousarray(order, dtype=np.int64)
    cdef Py_ssize_t n = L.shape[0], m = L.shape[1], ns = G.shape[1], i, j, q, c, sidx
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double best
    with nogil:
        for i in range(n):
            best = INFINITY
            for j in range(m):
                c = L[i, j]
                if c < 0:
                    continue
                # sub-cells in increasing gap order: the first hidden one is the answer
                for q in range(ns):
                    sidx = O[j, q]
                    if G[j, sidx] >= best:
                        break
                    if Hd[c, sidx]:
                        best = G[j, sidx]
                        break
            o[i] = best
    return out
