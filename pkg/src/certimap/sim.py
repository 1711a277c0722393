"""Synthetic worlds, depth raycasting, noisy odometry and the rollout safety filter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .camera import CameraModel
from .liegroup import (
    Transform,
    UncertainTransform,
    adjoint,
    compose,
    exp_se3,
    exp_so3,
    inverse,
    log_so3,
    psd_factor,
    spd_sqrt,
)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ValueError("box needs lo < hi in every axis")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    def signed_distance(self, p):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        q = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        out = np.linalg.norm(q, axis=1)
        inner = np.minimum(p - lo, hi - p).min(axis=1)
        return np.where(inner > 0.0, -inner, out)


@dataclass(frozen=True)
class Plane:
    """Solid half-space ``{x : n.x < offset}``; the normal points into free space."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if n.shape != (3,) or norm == 0.0:
            raise ValueError("plane normal must be a non-zero 3-vector")
        object.__setattr__(self, "normal", tuple((n / norm).tolist()))
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, p):
        return p @ np.asarray(self.normal) - self.offset


@dataclass(frozen=True)
class Environment:
    boxes: tuple = ()
    planes: tuple = ()
    bounds: tuple = ((-5.0, -5.0, -1.0), (5.0, 5.0, 3.0))

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "planes", tuple(self.planes))
        lo, hi = (tuple(float(x) for x in v) for v in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))

    def signed_distance(self, p) -> np.ndarray:
        """Distance to the obstacle union, negative inside (depth of the deepest solid)."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        d = np.full(p.shape[0], np.inf)
        inside = np.zeros(p.shape[0])
        for ob in self.boxes + self.planes:
            s = ob.signed_distance(p)
            d = np.minimum(d, np.maximum(s, 0.0))
            inside = np.maximum(inside, -np.minimum(s, 0.0))
        return np.where(inside > 0.0, -inside, d)

    def raycast(self, origin, dirs) -> np.ndarray:
        """Ray parameter of the first hit along ``origin + t dir`` (inf on a miss)."""
        origin = np.asarray(origin, dtype=float)
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        t = np.full(dirs.shape[0], np.inf)
        if self.boxes:
            lo = np.array([b.lo for b in self.boxes])
            hi = np.array([b.hi for b in self.boxes])
            t = kernels.raycast_boxes(origin, dirs, lo, hi)
        for pl in self.planes:
            n = np.asarray(pl.normal)
            den = dirs @ n
            gap = pl.offset - origin @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                tp = np.where(den < 0.0, gap / den, np.inf)
            tp = np.where(tp > 0.0, tp, np.inf)
            t = np.minimum(t, tp)
        return t

    def surface_samples(self, spacing: float) -> np.ndarray:
        """Regular samples of the obstacle boundary inside ``bounds``, one per ``spacing**2``."""
        lo, hi = (np.asarray(v) for v in self.bounds)
        parts = []
        for box in self.boxes:
            blo, bhi = np.asarray(box.lo), np.asarray(box.hi)
            for axis in range(3):
                u, w = [a for a in range(3) if a != axis]
                gu = _tiling(blo[u], bhi[u], spacing)
                gw = _tiling(blo[w], bhi[w], spacing)
                U, W = np.meshgrid(gu, gw, indexing="ij")
                for side in (blo[axis], bhi[axis]):
                    pts = np.empty((U.size, 3))
                    pts[:, axis] = side
                    pts[:, u] = U.ravel()
                    pts[:, w] = W.ravel()
                    parts.append(pts)
        for pl in self.planes:
            parts.append(_plane_samples(pl, lo, hi, spacing))
        if not parts:
            return np.zeros((0, 3))
        pts = np.vstack(parts)
        keep = np.all((pts >= lo) & (pts <= hi), axis=1)
        pts = pts[keep]
        # drop samples buried inside another solid
        return pts[self.signed_distance(pts) > -1e-9]

    def to_json(self) -> dict:
        return {"boxes": [{"min": list(b.lo), "max": list(b.hi)} for b in self.boxes],
                "planes": [{"normal": list(p.normal), "offset": p.offset} for p in self.planes],
                "bounds": {"min": list(self.bounds[0]), "max": list(self.bounds[1])}}


def _tiling(a, b, spacing):
    n = max(1, int(math.ceil((b - a) / spacing - 1e-9)))
    step = (b - a) / n
    return a + step * (np.arange(n) + 0.5)


def _plane_samples(pl: Plane, lo, hi, spacing):
    n = np.asarray(pl.normal)
    helper = np.eye(3)[np.argmin(np.abs(n))]
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    center = 0.5 * (lo + hi)
    foot = center - (center @ n - pl.offset) * n
    half = 0.5 * np.linalg.norm(hi - lo)
    g = _tiling(-half, half, spacing)
    A, B = np.meshgrid(g, g, indexing="ij")
    return foot + A.reshape(-1, 1) * e1 + B.reshape(-1, 1) * e2


@dataclass(frozen=True)
class DepthFrame:
    """Per-pixel depth (``inf`` = no return within range, ``0`` = too close) and hit points."""

    depth: np.ndarray
    points: np.ndarray
    pixels: np.ndarray


def raycast_depth(env: Environment, pose_true: Transform, cam: CameraModel) -> DepthFrame:
    """Render a depth frame; ``pose_true`` maps camera coordinates to the world."""
    d_cam = cam.pixel_directions()
    t = env.raycast(pose_true.t, d_cam @ pose_true.R.T)
    rng = t * np.linalg.norm(d_cam, axis=1)
    depth = np.where(rng > cam.max_range, np.inf, t)
    depth = np.where(rng < cam.min_range, 0.0, depth)
    valid = np.isfinite(depth) & (depth > 0.0)
    pts = d_cam[valid] * depth[valid, None]
    v, u = np.divmod(np.nonzero(valid)[0], cam.width)
    return DepthFrame(depth.reshape(cam.height, cam.width), pts, np.stack([u, v], axis=1))


def surface_points(frame: DepthFrame, cam: CameraModel, spacing: float, min_cos: float = 0.03,
                   max_edge: float = 0.5) -> np.ndarray:
    """Densify a depth frame into camera-frame points at most ``spacing`` apart.

    Neighbouring pixels are meshed into triangles; triangles seen nearly edge-on
    (silhouette jumps) or with an edge longer than ``max_edge`` are dropped.
    Every original hit is kept.
    """
    H, W = frame.depth.shape
    D = frame.depth
    valid = np.isfinite(D) & (D > 0.0)
    P = cam.pixel_directions().reshape(H, W, 3) * np.where(valid, D, 0.0)[..., None]
    tris = []
    q00, q01, q10, q11 = (P[:-1, :-1], P[:-1, 1:], P[1:, :-1], P[1:, 1:])
    v00, v01, v10, v11 = (valid[:-1, :-1], valid[:-1, 1:], valid[1:, :-1], valid[1:, 1:])
    for a, b, c, ok in ((q00, q01, q10, v00 & v01 & v10), (q11, q10, q01, v11 & v10 & v01)):
        a, b, c = a[ok], b[ok], c[ok]
        n = np.cross(b - a, c - a)
        nn = np.linalg.norm(n, axis=1)
        centroid = (a + b + c) / 3.0
        cosang = np.abs(np.einsum("ij,ij->i", n, centroid)) / np.maximum(
            nn * np.linalg.norm(centroid, axis=1), 1e-300)
        edge = np.maximum.reduce([np.linalg.norm(b - a, axis=1), np.linalg.norm(c - a, axis=1),
                                  np.linalg.norm(c - b, axis=1)])
        keep = (cosang >= min_cos) & (edge <= max_edge)
        tris.append((a[keep], b[keep], c[keep], edge[keep]))
    parts = [frame.points]
    for a, b, c, edge in tris:
        steps = np.ceil(edge / spacing).astype(np.int64)
        for n in np.unique(steps[steps > 1]):
            sel = steps == n
            i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
            m = (i + j <= n) & ~((i == 0) & (j == 0)) & ~((i == n) & (j == 0)) & ~((i == 0) & (j == n))
            wb, wc = i[m] / n, j[m] / n
            A, B, C = a[sel], b[sel], c[sel]
            pts = (A[:, None, :] * (1.0 - wb - wc)[None, :, None] + B[:, None, :] * wb[None, :, None]
                   + C[:, None, :] * wc[None, :, None])
            parts.append(pts.reshape(-1, 3))
    return np.vstack(parts)


def camera_pose(position, yaw: float, pitch: float = 0.0) -> Transform:
    """Optical-frame camera pose for a heading ``yaw`` about world z; positive pitch looks down."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    fwd = np.array([cy, sy, 0.0])
    right = np.array([sy, -cy, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    R = np.stack([right, down, fwd], axis=1)
    if pitch:
        R = R @ exp_so3(np.array([-pitch, 0.0, 0.0]))
    return Transform(R, np.asarray(position, dtype=float))


def planar_state(pose: Transform):
    """``(x, y, yaw)`` of an optical-frame pose."""
    fwd = pose.R[:, 2]
    return float(pose.t[0]), float(pose.t[1]), math.atan2(fwd[1], fwd[0])


@dataclass(frozen=True)
class TrajectoryStep:
    true_pose: Transform
    est_incremental: UncertainTransform
    est_pose: Transform
    cumulative: UncertainTransform
    correlation: float = 0.0


def interpolate_poses(waypoints, frames: int):
    if frames < 1:
        raise ValueError("need at least one frame")
    if len(waypoints) == 1 or frames == 1:
        return [waypoints[0]] * frames
    out = []
    n = len(waypoints) - 1
    for k in range(frames):
        s = k * n / (frames - 1)
        i = min(int(math.floor(s)), n - 1)
        u = s - i
        A, B = waypoints[i], waypoints[i + 1]
        R = A.R @ exp_so3(u * log_so3(A.R.T @ B.R))
        out.append(Transform(R, (1.0 - u) * A.t + u * B.t))
    return out


def best_correlation(Sigma_k, Sigma_k1, A) -> float:
    """Scalar correlation that best explains the exact cross term ``Sigma_k A^T``."""
    from .liegroup import cross_covariance
    M = cross_covariance(Sigma_k, Sigma_k1, 1.0)
    den = float(np.sum(M * M))
    if den == 0.0:
        return 0.0
    return float(np.clip(np.sum((Sigma_k @ A.T) * M) / den, -1.0, 1.0))


def generate_trajectory(env: Environment, waypoints, frames: int, Sigma, seed,
                        clearance: float = 0.0):
    """True path through ``waypoints`` plus drifting odometry.

    Each estimated increment is the true increment times ``Exp(tau)``, ``tau ~ N(0, Sigma)``.
    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    true = interpolate_poses(list(waypoints), frames)
    pos = np.array([T.t for T in true])
    if np.any(env.signed_distance(pos) <= clearance):
        bad = int(np.argmax(env.signed_distance(pos) <= clearance))
        raise ValueError(f"trajectory leaves free space at frame {bad}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    F = psd_factor(Sigma)
    z = rng.standard_normal((max(frames - 1, 0), 6))
    steps = [TrajectoryStep(true[0], UncertainTransform.exact(Transform.identity()), true[0],
                            UncertainTransform.exact(Transform.identity()), 0.0)]
    est = true[0]
    cum = np.zeros((6, 6))
    for k in range(1, frames):
        inc_true = compose(inverse(true[k - 1]), true[k])
        inc_est = compose(inc_true, exp_se3(F @ z[k - 1]))
        est = compose(est, inc_est)
        A = adjoint(inverse(inc_est))
        new_cum = A @ cum @ A.T + Sigma
        new_cum = 0.5 * (new_cum + new_cum.T)
        rho = best_correlation(cum, new_cum, A) if k > 1 else 0.0
        rel0 = compose(inverse(steps[0].est_pose), est)
        steps.append(TrajectoryStep(true[k], UncertainTransform(inc_est, Sigma), est,
                                    UncertainTransform(rel0, new_cum), rho))
        cum = new_cum
    return steps


def absolute_trajectory_error(steps) -> float:
    err = [np.linalg.norm(s.est_pose.t - s.true_pose.t) for s in steps]
    return float(np.sqrt(np.mean(np.square(err))))


def path_length(steps) -> float:
    pos = np.array([s.true_pose.t for s in steps])
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


@dataclass(frozen=True)
class RobotCommand:
    linear: float
    angular: float


def safety_filter(command: RobotCommand, map_query, state=(0.0, 0.0, 0.0), horizon: float = 0.5,
                  dt: float = 0.05, angular_factor: float = 0.5) -> RobotCommand:
    """Pass ``command`` only if its unicycle rollout stays in claimed free space.

    ``map_query(x, y)`` answers for planar body coordinates (x forward, y left).
    """
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    x, y, th = state
    v, w = command.linear, command.angular
    for _ in range(int(round(horizon / dt))):
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
        th += w * dt
        if not map_query(x, y):
            return RobotCommand(0.0, w * angular_factor)
    return command


def unicycle_increment(v: float, w: float, dt: float) -> Transform:
    """Body motion ``B_{k+1} -> B_k`` of an optical-frame camera on a unicycle."""
    a = w * dt
    if abs(a) < 1e-12:
        fwd, left = v * dt, 0.0
    else:
        fwd = v / w * math.sin(a)
        left = v / w * (1.0 - math.cos(a))
    # yaw about world up is rotation about the camera's -y axis
    return Transform(exp_so3(np.array([0.0, -a, 0.0])), np.array([-left, 0.0, fwd]))


@dataclass
class RoverResult:
    incursions: int
    halted: bool
    frames: int
    final_position: np.ndarray
    final_clearance: float
    min_clearance: float
    log: list = field(default_factory=list)
    esdf_map: object = None


def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def run_rover(env: Environment, cam: CameraModel, start, phases, Sigma, policy, seed,
              voxel_size=0.05, truncation=0.5, height=0.3, fps=30.0, horizon=0.5, dt=0.05,
              max_frames=4000, halt_frames=15, gain=1.5, goal_tol=0.15, threads=1):
    """Closed-loop rover drive on a distance-field map with the safety filter.

    ``phases`` is a list of dicts with ``goal`` (x, y), ``reverse`` (bool),
    ``speed`` (m/s) and ``guarded`` (bool: safety filter active). The controller
    steers on the estimated pose; the true pose only decides collisions.
    """
    from .esdf import CertifiedEsdfMap, VoxelGrid, claimed_free, integrate_observation, step_esdf

    lo, hi = env.bounds
    grid = VoxelGrid.covering(lo, hi, voxel_size, offset=0.37 * voxel_size)
    emap = CertifiedEsdfMap(grid, policy, camera=cam, truncation=truncation)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    F = psd_factor(np.asarray(Sigma, dtype=float))
    true = camera_pose([start[0], start[1], height], start[2])
    est = true
    emap.est_pose = est
    frame0 = raycast_depth(env, true, cam)
    integrate_observation(emap, frame0.points, est, depth=frame0.depth)
    phase = 0
    stopped = 0
    incursions = 0
    clear = float(env.signed_distance(true.t)[0])
    min_clear = clear
    log = []
    k = 0
    period = 1.0 / fps

    def query(x, y):
        return bool(claimed_free(emap, np.array([[-y, 0.0, x]]))[0])

    while k < max_frames and phase < len(phases):
        ph = phases[phase]
        ex, ey, eyaw = planar_state(est)
        gx, gy = ph["goal"]
        if math.hypot(gx - ex, gy - ey) < goal_tol:
            phase += 1
            continue
        bearing = math.atan2(gy - ey, gx - ex)
        speed = ph.get("speed", 0.3)
        if ph.get("reverse", False):
            err = _wrap(bearing - (eyaw + math.pi))
            cmd = RobotCommand(-speed * max(0.0, math.cos(err)), gain * err)
        else:
            err = _wrap(bearing - eyaw)
            cmd = RobotCommand(speed * max(0.0, math.cos(err)), gain * err)
        if ph.get("guarded", False):
            out = safety_filter(cmd, query, horizon=horizon, dt=dt)
        else:
            out = cmd
        if out.linear == 0.0 and cmd.linear != 0.0:
            stopped += 1
        else:
            stopped = 0
        inc_true = unicycle_increment(out.linear, out.angular, period)
        inc_est = compose(inc_true, exp_se3(F @ rng.standard_normal(6)))
        true = compose(true, inc_true)
        est = compose(est, inc_est)
        k += 1
        clear = float(env.signed_distance(true.t)[0])
        min_clear = min(min_clear, clear)
        log.append((k, phase, *true.t[:2], *est.t[:2], out.linear, clear))
        if clear < 0.0:
            incursions += 1
            break
        frame = raycast_depth(env, true, cam)
        step_esdf(emap, UncertainTransform(inc_est, np.asarray(Sigma, dtype=float)), frame.points,
                  est, k, depth=frame.depth, threads=threads)
        if stopped >= halt_frames:
            break
    return RoverResult(incursions, stopped >= halt_frames, k, true.t.copy(), clear, min_clear, log,
                       emap)


__all__ = [
    "Box", "Plane", "Environment", "DepthFrame", "raycast_depth", "surface_points", "camera_pose", "planar_state",
    "TrajectoryStep", "interpolate_poses", "generate_trajectory", "absolute_trajectory_error",
    "path_length", "RobotCommand", "safety_filter", "unicycle_increment", "RoverResult",
    "run_rover", "CameraModel", "spd_sqrt",
]
