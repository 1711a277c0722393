"""Certified Euclidean signed distance fields.

Distances live on a voxel grid in the mapping frame ``M``. Every odometry step
the certified policy lowers each stored distance by the largest semi-axis of the
voxel's displacement ellipsoid, so that the stored value keeps underestimating
the true clearance when queried through the estimated pose.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .camera import CameraModel
from .liegroup import Transform, UncertainTransform, act, inverse

UNKNOWN_CELL = 0
FREE_CELL = 1
OBSTACLE_CELL = 2


@dataclass(frozen=True)
class Free:
    distance: float


class _Unknown:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Unknown"


Unknown = _Unknown()


@dataclass(frozen=True)
class EsdfPolicy:
    kind: str = "baseline"
    radius: float = 3.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("baseline", "heuristic", "certified"):
            raise ValueError(f"unknown distance-field policy {self.kind!r}")


class VoxelGrid:
    """Dense storage over a fixed extent; only observed cells carry a distance.

    Cell ``(i, j, k)`` has center ``origin + voxel_size * (idx + 1/2)``.
    """

    def __init__(self, voxel_size: float, origin, shape):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        self.voxel_size = float(voxel_size)
        self.origin = np.asarray(origin, dtype=float).reshape(3).copy()
        self.shape = tuple(int(s) for s in shape)
        self.distance = np.zeros(self.shape)
        self.observed = np.zeros(self.shape, dtype=bool)

    @classmethod
    def covering(cls, lo, hi, voxel_size, offset=0.0) -> "VoxelGrid":
        lo = np.asarray(lo, dtype=float) - offset
        hi = np.asarray(hi, dtype=float)
        shape = np.ceil((hi - lo) / voxel_size).astype(int)
        return cls(voxel_size, lo, shape)

    def copy(self) -> "VoxelGrid":
        g = VoxelGrid(self.voxel_size, self.origin, self.shape)
        g.distance = self.distance.copy()
        g.observed = self.observed.copy()
        return g

    def __len__(self):
        return int(self.observed.sum())

    def centers(self, idx) -> np.ndarray:
        return self.origin + self.voxel_size * (np.asarray(idx, dtype=float) + 0.5)

    def index_of(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        return np.floor((p - self.origin) / self.voxel_size).astype(np.int64)

    def in_extent(self, idx) -> np.ndarray:
        idx = np.atleast_2d(idx)
        return np.all((idx >= 0) & (idx < np.array(self.shape)), axis=1)

    def observed_indices(self) -> np.ndarray:
        return np.argwhere(self.observed)

    def items(self):
        """Sparse view: ``((i, j, k), distance)`` for every observed cell."""
        for idx in self.observed_indices():
            yield tuple(int(x) for x in idx), float(self.distance[tuple(idx)])

    def lookup(self, p):
        """Stored distance at each point; NaN where unknown or outside the extent."""
        idx = self.index_of(p)
        ok = self.in_extent(idx)
        out = np.full(idx.shape[0], np.nan)
        sel = idx[ok]
        obs = self.observed[sel[:, 0], sel[:, 1], sel[:, 2]]
        vals = self.distance[sel[:, 0], sel[:, 1], sel[:, 2]]
        out[np.nonzero(ok)[0]] = np.where(obs, vals, np.nan)
        return out


class CertifiedEsdfMap:
    """Voxel grid plus policy and the estimated pose ``B_k -> M``."""

    def __init__(self, grid: VoxelGrid, policy: EsdfPolicy = EsdfPolicy(),
                 est_pose: Transform | None = None, camera: CameraModel | None = None,
                 truncation: float = 0.5, margin: float = 0.0):
        self.grid = grid
        self.policy = policy
        self.est_pose = Transform.identity() if est_pose is None else est_pose
        self.camera = camera
        self.truncation = float(truncation)
        # extra clearance shaved off every fresh value
        self.margin = float(margin)
        self.frame = 0

    def copy(self) -> "CertifiedEsdfMap":
        m = CertifiedEsdfMap(self.grid.copy(), self.policy, self.est_pose, self.camera,
                             self.truncation, self.margin)
        m.frame = self.frame
        return m


@dataclass(frozen=True)
class Observation:
    """Cells seen in one frame and their fresh distance values."""

    index: np.ndarray
    value: np.ndarray


def observe(grid: VoxelGrid, camera: CameraModel, points_body, camera_pose_est: Transform,
            truncation: float, margin: float = 0.0, depth=None) -> Observation:
    """Cells seen entirely free in one frame, with their clearance.

    ``depth`` is the frame's z-buffer; without it one is splatted from
    ``points_body``, so pixels no point lands on read as free to ``max_range``.
    """
    points_body = np.asarray(points_body, dtype=float).reshape(-1, 3)
    zbuf = camera.depth_from_points(points_body) if depth is None else np.asarray(depth, dtype=float)
    # pyramid through the image border, cut at z = max_range, contains every candidate
    far = camera.max_range
    u = np.array([-0.5, camera.width - 0.5])
    v = np.array([-0.5, camera.height - 0.5])
    corners = np.array([[0.0, 0.0, 0.0]] + [[(a - camera.cx) / camera.fx * far,
                                              (c - camera.cy) / camera.fy * far, far]
                                             for a in u for c in v])
    cm = act(camera_pose_est, corners)
    lo_idx = np.clip(grid.index_of(cm.min(axis=0))[0] - 1, 0, grid.shape)
    hi_idx = np.clip(grid.index_of(cm.max(axis=0))[0] + 2, 0, grid.shape)
    to_cam = inverse(camera_pose_est)
    idx = kernels.observe_voxels(lo_idx, hi_idx, grid.origin, grid.voxel_size,
                                 to_cam.R, to_cam.t, camera.intrinsics, zbuf)
    if idx.shape[0] == 0:
        return Observation(idx, np.zeros(0))
    d = clearance(idx, grid.voxel_size)
    edge = d == 0.0
    if edge.any():
        d[edge] = edge_clearance(idx, edge, grid, to_cam, camera, zbuf)
    return Observation(idx, np.clip(d - margin, -truncation, truncation))


def clearance(idx, voxel_size: float) -> np.ndarray:
    """Distance from each cell in ``idx`` to the nearest cell not in ``idx``.

    Cells count as closed cubes, so face neighbours of an outside cell get 0.
    Eroding the set by one cell turns this into a centre-to-centre transform.
    """
    idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
    if idx.shape[0] == 0:
        return np.zeros(0)
    lo = idx.min(axis=0) - 1
    free = np.zeros(tuple(idx.max(axis=0) - lo + 2), dtype=bool)
    q = idx - lo
    free[q[:, 0], q[:, 1], q[:, 2]] = True
    core = ndimage.binary_erosion(free, structure=np.ones((3, 3, 3), dtype=bool), border_value=0)
    if not core.any():
        return np.zeros(idx.shape[0])
    d = ndimage.distance_transform_edt(core, sampling=voxel_size)
    return d[q[:, 0], q[:, 1], q[:, 2]]


SUBDIVISION = 4


def _subcell_gaps(s: int):
    """Gap, in cells, from the centre cell to each sub-cell of each of its 26 neighbours.

    Returns the neighbour offsets (26, 3), the gaps (26, s**3) and, per offset,
    the sub-cell order by increasing gap. Sub-cells are ordered like ``np.indices((s, s, s))``.
    """
    sub = np.indices((s, s, s)).reshape(3, -1).T
    offs = np.array([o for o in np.ndindex(3, 3, 3) if o != (1, 1, 1)]) - 1
    gaps = np.empty((offs.shape[0], s ** 3))
    for j, o in enumerate(offs):
        # per axis: from the centre cell's face to the near side of the sub-cell
        g = np.where(o > 0, sub, np.where(o < 0, s - 1 - sub, 0)) / s
        gaps[j] = np.sqrt(np.sum(g * g, axis=1))
    order = np.argsort(gaps, axis=1, kind="stable")
    return offs, gaps, order


_OFFSETS, _GAPS, _GAP_ORDER = _subcell_gaps(SUBDIVISION)


def edge_clearance(idx, edge, grid: VoxelGrid, to_cam: Transform, camera: CameraModel, zbuf):
    """Tighter clearance for free cells that touch a cell which failed the visibility test.

    Such a neighbour is split into sub-cells, each tested on its own; the cell's
    value becomes its gap to the nearest sub-cell that is not seen free, capped at
    one cell (anything farther away is at least that far).
    """
    s = SUBDIVISION
    vs = grid.voxel_size
    idx = np.asarray(idx, dtype=np.int64)
    lo = idx.min(axis=0) - 1
    shape = tuple(idx.max(axis=0) - lo + 2)
    free = np.zeros(shape, dtype=bool)
    free[tuple((idx - lo).T)] = True
    nbr = (idx[edge] - lo)[:, None, :] + _OFFSETS[None, :, :]
    lin = np.ravel_multi_index(tuple(nbr.transpose(2, 0, 1)), shape)
    blocked = ~free.ravel()[lin]
    cand_lin = np.unique(lin[blocked])
    nbr_label = np.where(blocked, np.searchsorted(cand_lin, lin), -1)
    cand = np.stack(np.unravel_index(cand_lin, shape), axis=1)
    sub = vs * ((np.indices((s, s, s)).reshape(3, -1).T + 0.5) / s - 0.5)
    centres = grid.centers(cand + lo) @ to_cam.R.T + to_cam.t
    hidden = ~kernels.visible_subcells(centres, sub @ to_cam.R.T, 0.5 * np.sqrt(3.0) * vs / s,
                                       camera.intrinsics, zbuf)
    gap = kernels.edge_gaps(nbr_label, hidden, _GAPS, _GAP_ORDER)
    return np.minimum(gap, 1.0) * vs


def apply_observation(emap: CertifiedEsdfMap, obs: Observation) -> CertifiedEsdfMap:
    g = emap.grid
    i, j, k = obs.index.T
    old_obs = g.observed[i, j, k]
    old = g.distance[i, j, k]
    # every value is a lower bound on clearance, so the larger one is kept
    g.distance[i, j, k] = np.where(old_obs, np.maximum(old, obs.value), obs.value)
    g.observed[i, j, k] = True
    return emap


def integrate_observation(emap: CertifiedEsdfMap, obstacle_points_body, camera_pose_est: Transform,
                          truncation: float | None = None, depth=None) -> CertifiedEsdfMap:
    """Fuse one depth frame (in place) and return the map."""
    if emap.camera is None:
        raise ValueError("map has no camera model")
    trunc = emap.truncation if truncation is None else truncation
    obs = observe(emap.grid, emap.camera, obstacle_points_body, camera_pose_est, trunc,
                  emap.margin, depth)
    return apply_observation(emap, obs)


def _parallel_amounts(centers, R_mb, t_mb, R_inc, Sigma, kappa, threads):
    n = centers.shape[0]
    if threads <= 1 or n < 50_000:
        return kernels.deflation_amounts(centers, R_mb, t_mb, R_inc, Sigma, kappa)
    bounds = np.linspace(0, n, threads + 1).astype(int)
    chunks = [centers[bounds[w]:bounds[w + 1]] for w in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda c: kernels.deflation_amounts(c, R_mb, t_mb, R_inc, Sigma, kappa), chunks))
    return np.concatenate(parts)


def deflation_for(emap: CertifiedEsdfMap, idx, ut: UncertainTransform, kappa: float,
                  threads: int = 1) -> np.ndarray:
    to_body = inverse(emap.est_pose)
    return _parallel_amounts(emap.grid.centers(idx), to_body.R, to_body.t, ut.mean.R,
                             ut.covariance, float(kappa), threads)


def deflate_esdf(emap: CertifiedEsdfMap, ut: UncertainTransform, kappa: float,
                 threads: int | None = None) -> CertifiedEsdfMap:
    """Lower every stored distance (in place) for the increment ``ut: B_{k+1} -> B_k``.

    ``emap.est_pose`` must already hold the pose of ``B_{k+1}``. Cells that drop
    below zero are forgotten.
    """
    threads = kernels.thread_count() if threads is None else threads
    g = emap.grid
    idx = g.observed_indices()
    if idx.shape[0] == 0:
        return emap
    amount = deflation_for(emap, idx, ut, kappa, threads)
    i, j, k = idx.T
    new = g.distance[i, j, k] - amount
    g.distance[i, j, k] = new
    gone = (new < 0.0) & (amount > 0.0)
    g.observed[i[gone], j[gone], k[gone]] = False
    g.distance[i[gone], j[gone], k[gone]] = 0.0
    return emap


def forget_beyond(emap: CertifiedEsdfMap, center, radius: float) -> CertifiedEsdfMap:
    g = emap.grid
    idx = g.observed_indices()
    if idx.shape[0] == 0:
        return emap
    far = np.linalg.norm(g.centers(idx) - np.asarray(center), axis=1) > radius
    i, j, k = idx[far].T
    g.observed[i, j, k] = False
    g.distance[i, j, k] = 0.0
    return emap


def step_esdf(emap: CertifiedEsdfMap, ut_incremental: UncertainTransform, obstacle_points_body,
              camera_pose_est: Transform, frame: int, depth=None, observation: Observation | None = None,
              threads: int | None = None) -> CertifiedEsdfMap:
    """One odometry step: deflate (certified), fuse, forget (heuristic). Updates in place."""
    emap.est_pose = camera_pose_est
    emap.frame = frame
    pol = emap.policy
    if pol.kind == "certified":
        deflate_esdf(emap, ut_incremental, pol.kappa, threads)
    if observation is None:
        integrate_observation(emap, obstacle_points_body, camera_pose_est, depth=depth)
    else:
        apply_observation(emap, observation)
    if pol.kind == "heuristic":
        forget_beyond(emap, camera_pose_est.t, pol.radius)
    return emap


def query_certified(emap: CertifiedEsdfMap, p_body):
    d = emap.grid.lookup(act(emap.est_pose, np.asarray(p_body, dtype=float)))[0]
    return Unknown if np.isnan(d) else Free(float(d))


def query_many(emap: CertifiedEsdfMap, p_body) -> np.ndarray:
    """Vectorised query: stored distance per body point, NaN for unknown."""
    return emap.grid.lookup(act(emap.est_pose, np.atleast_2d(np.asarray(p_body, dtype=float))))


def claimed_free(emap: CertifiedEsdfMap, p_body) -> np.ndarray:
    d = query_many(emap, p_body)
    return np.nan_to_num(d, nan=-1.0) >= 0.0


def free_volume(emap: CertifiedEsdfMap) -> float:
    g = emap.grid
    n = int(np.count_nonzero(g.observed & (g.distance >= 0.0)))
    return n * g.voxel_size ** 3


def claimed_free_region_slice(emap: CertifiedEsdfMap, height: float) -> np.ndarray:
    """(nx, ny) raster at a map-frame height: unknown / free (d > 0) / obstacle."""
    g = emap.grid
    k = int(np.floor((height - g.origin[2]) / g.voxel_size))
    out = np.full(g.shape[:2], UNKNOWN_CELL, dtype=np.int8)
    if not 0 <= k < g.shape[2]:
        return out
    obs = g.observed[:, :, k]
    d = g.distance[:, :, k]
    out[obs & (d > 0.0)] = FREE_CELL
    out[obs & (d <= 0.0)] = OBSTACLE_CELL
    return out


_HEADER = struct.Struct("<dddd Q")
_RECORD = struct.Struct("<iiid")


def snapshot_bytes(emap: CertifiedEsdfMap) -> bytes:
    g = emap.grid
    idx = g.observed_indices()
    buf = bytearray(_HEADER.pack(g.voxel_size, *g.origin, idx.shape[0]))
    rec = np.zeros(idx.shape[0], dtype=[("i", "<i4"), ("j", "<i4"), ("k", "<i4"), ("d", "<f8")])
    if idx.shape[0]:
        rec["i"], rec["j"], rec["k"] = idx.T
        rec["d"] = g.distance[tuple(idx.T)]
    buf += rec.tobytes()
    return bytes(buf)


def save_snapshot(emap: CertifiedEsdfMap, path, meta: dict | None = None) -> None:
    """Write ``path`` (binary cells) and ``path + '.json'`` (policy and frame metadata)."""
    with open(path, "wb") as f:
        f.write(snapshot_bytes(emap))
    side = {"policy": emap.policy.kind, "frame": emap.frame, "shape": list(emap.grid.shape),
            "truncation": emap.truncation, "margin": emap.margin}
    side.update(meta or {})
    with open(str(path) + ".json", "w") as f:
        json.dump(side, f, sort_keys=True, indent=1)


def load_snapshot(path) -> VoxelGrid:
    with open(path, "rb") as f:
        raw = f.read()
    vs, ox, oy, oz, count = _HEADER.unpack_from(raw, 0)
    rec = np.frombuffer(raw, dtype=[("i", "<i4"), ("j", "<i4"), ("k", "<i4"), ("d", "<f8")],
                        count=count, offset=_HEADER.size)
    idx = np.stack([rec["i"], rec["j"], rec["k"]], axis=1).astype(np.int64)
    try:
        with open(str(path) + ".json") as f:
            shape = tuple(json.load(f)["shape"])
    except (OSError, KeyError):
        shape = tuple(idx.max(axis=0) + 1) if count else (0, 0, 0)
    g = VoxelGrid(vs, (ox, oy, oz), shape)
    if count:
        g.observed[tuple(idx.T)] = True
        g.distance[tuple(idx.T)] = rec["d"]
    return g


def write_slice_csv(raster: np.ndarray, path) -> None:
    np.savetxt(path, raster, fmt="%d", delimiter=",")
