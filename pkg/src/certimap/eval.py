"""Ground-truth metrics and lockstep experiment runs.

Poses that come from the simulator's truth are wrapped in :class:`TruePose` and
are only ever used to place ground-truth samples in the body frame. Maps are
queried through their own estimated pose, exactly as a planner would.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import esdf, kernels, sfc
from .liegroup import Transform, UncertainTransform, act, adjoint, inverse
from .scenario import POLICIES, Scenario, assertion_targets
from .sim import generate_trajectory, raycast_depth, run_rover, surface_points


@dataclass(frozen=True)
class TruePose:
    """Ground-truth body-to-world pose. Deliberately not a :class:`Transform`."""

    transform: Transform

    def to_body(self, points_world) -> np.ndarray:
        return act(inverse(self.transform), np.asarray(points_world, dtype=float))


@dataclass(frozen=True)
class MetricSample:
    frame: int
    violation_rate: float
    max_violation: float
    free_volume: float
    policy: str
    pipeline: str

    def __post_init__(self):
        if not 0.0 <= self.violation_rate <= 1.0:
            raise ValueError("violation_rate must lie in [0, 1]")
        if self.max_violation < 0.0 or self.free_volume < 0.0:
            raise ValueError("metrics must be non-negative")


class CorridorView:
    """Planner-side view of a corridor map: claimed free set and penetration depths."""

    pipeline = "sfc"

    def __init__(self, cmap: sfc.CorridorMap):
        self.cmap = cmap

    def depth(self, p_body) -> np.ndarray:
        return sfc.union_depths(self.cmap.polytopes, p_body)

    def free(self, p_body) -> np.ndarray:
        return self.depth(p_body) > sfc.BOUNDARY_TOL

    def violation_depth(self, p_body) -> np.ndarray:
        return self.assess(p_body)[1]

    def assess(self, p_body):
        d = self.depth(p_body)
        free = d > sfc.BOUNDARY_TOL
        return free, np.where(free, d, 0.0)


class EsdfView:
    """Planner-side view of a distance field: a point is claimed free if its cell reads d >= 0."""

    pipeline = "esdf"

    def __init__(self, emap: esdf.CertifiedEsdfMap):
        self.emap = emap

    def free(self, p_body) -> np.ndarray:
        return esdf.claimed_free(self.emap, p_body)

    def violation_depth(self, p_body) -> np.ndarray:
        return self.assess(p_body)[1]

    def assess(self, p_body):
        d = esdf.query_many(self.emap, p_body)
        free = np.nan_to_num(d, nan=-1.0) >= 0.0
        return free, np.where(free, d, 0.0)


def _check(samples, true_pose):
    if not isinstance(true_pose, TruePose):
        raise TypeError("ground-truth placement needs a TruePose")
    samples = np.asarray(samples, dtype=float).reshape(-1, 3)
    if samples.shape[0] == 0:
        raise ValueError("no surface samples")
    return samples


def violation_rate(view, surface_samples_true, true_pose: TruePose) -> float:
    """Fraction of ground-truth surface samples that the map claims are free."""
    s = _check(surface_samples_true, true_pose)
    return float(np.mean(view.free(true_pose.to_body(s))))


def max_violation_distance(view, surface_samples_true, true_pose: TruePose) -> float:
    """How deep the worst violating sample sits in claimed free space (0 without violations)."""
    s = _check(surface_samples_true, true_pose)
    d = view.violation_depth(true_pose.to_body(s))
    return float(d.max()) if d.size else 0.0


def _metrics(view, samples_body) -> tuple[float, float]:
    free, depth = view.assess(samples_body)
    rate = float(np.mean(free))
    worst = float(depth[free].max()) if free.any() else 0.0
    return rate, worst


@dataclass
class ExperimentReport:
    scenario: str
    config: dict
    kappa: float
    series: dict
    metadata: dict = field(default_factory=dict)
    rover: dict | None = None
    acceptance: list = field(default_factory=list)
    maps: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def summary(self) -> dict:
        return {p: s[-1] for p, s in self.series.items()}

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.acceptance)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config": self.config,
            "kappa": self.kappa,
            "metadata": self.metadata,
            "series": {p: [_sample_dict(m) for m in s] for p, s in self.series.items()},
            "summary": {p: _sample_dict(m) for p, m in self.summary.items()},
            "rover": self.rover,
            "acceptance": self.acceptance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _sample_dict(m: MetricSample) -> dict:
    return {"frame": m.frame, "violation_rate": m.violation_rate,
            "max_violation": m.max_violation, "free_volume": m.free_volume}


def _new_maps(sc: Scenario, policies):
    mp = sc.mapping
    vs = mp["voxel_size"]
    lo, hi = sc.environment.bounds
    corridors, fields = {}, {}
    for name in policies:
        pipeline, kind = name.split("-")
        if pipeline == "sfc":
            pol = sfc.CorridorPolicy(kind, window=mp["sfc_window"], kappa=sc.kappa)
            corridors[name] = sfc.CorridorMap((), 0, pol)
        else:
            grid = esdf.VoxelGrid.covering(lo, hi, vs, offset=0.37 * vs)
            pol = esdf.EsdfPolicy(kind, radius=mp["esdf_radius"], kappa=sc.kappa)
            fields[name] = esdf.CertifiedEsdfMap(grid, pol, camera=sc.camera,
                                                 truncation=mp["truncation"])
    return corridors, fields


def run_experiment(sc: Scenario, snapshot_dir=None, snapshot_every: int = 0,
                   include_rover: bool = True, progress=None, observer=None) -> ExperimentReport:
    """Drive every configured policy in lockstep over one simulated trajectory.

    ``observer(k, step, corridors, fields)`` is called after every frame with the
    live maps; the final maps are kept on ``report.maps``.
    """
    policies = [p for p in POLICIES if p in sc.policies]
    odo_rng, vol_rng, rover_rng = sc.streams()
    steps = generate_trajectory(sc.environment, sc.waypoints, sc.frames, sc.Sigma, odo_rng,
                                clearance=sc.clearance)
    mp = sc.mapping
    vs = mp["voxel_size"]
    threads = mp.get("threads", 1) or kernels.thread_count()
    samples = sc.environment.surface_samples(vs / 2.0)
    lo, hi = (np.asarray(v) for v in sc.environment.bounds)
    cam = sc.camera
    far = cam.far_depth()
    clip = cam.frustum_halfspaces(far)
    box = cam.frustum_box(far)
    seed_pt = np.array([0.0, 0.0, mp["seed_offset"]])
    corridors, fields = _new_maps(sc, policies)
    series = {p: [] for p in policies}
    margin = next(iter(fields.values())).margin if fields else 0.0
    template = next(iter(fields.values())).grid if fields else None
    last = sc.frames - 1

    for k, step in enumerate(steps):
        true = TruePose(step.true_pose)
        frame = raycast_depth(sc.environment, step.true_pose, cam)
        points = surface_points(frame, cam, vs / 2.0)
        inc = step.est_incremental
        if corridors:
            try:
                fresh = sfc.generate_polytope(seed_pt, points, box, clip, birth_frame=k)
            except sfc.EmptyPolytope:
                fresh = None
            ut_fwd = UncertainTransform(inverse(inc.mean),
                                        adjoint(inc.mean) @ inc.covariance @ adjoint(inc.mean).T)
            for name, cmap in corridors.items():
                if k == 0:
                    corridors[name] = sfc.CorridorMap((fresh,) if fresh else (), 0, cmap.policy)
                else:
                    corridors[name] = sfc.step_corridor(cmap, ut_fwd, None, seed_pt, k, box,
                                                        clip, new_polytope=fresh)
        if fields:
            obs = esdf.observe(template, cam, points, step.est_pose, mp["truncation"], margin,
                               frame.depth)
            for emap in fields.values():
                if k == 0:
                    emap.est_pose = step.est_pose
                    esdf.apply_observation(emap, obs)
                    if emap.policy.kind == "heuristic":
                        esdf.forget_beyond(emap, step.est_pose.t, emap.policy.radius)
                else:
                    esdf.step_esdf(emap, inc, None, step.est_pose, k, observation=obs,
                                   threads=threads)
        if k % mp["metric_every"] == 0 or k == last:
            body = true.to_body(samples)
            if corridors:
                u = vol_rng.uniform(size=(mp["volume_samples"], 3))
                vol_pts = act(inverse(step.est_pose), lo + u * (hi - lo))
                box_vol = float(np.prod(hi - lo))
            for name, cmap in corridors.items():
                view = CorridorView(cmap)
                rate, worst = _metrics(view, body)
                vol = box_vol * float(np.mean(sfc.union_depths(cmap.polytopes, vol_pts) >= 0.0))
                series[name].append(MetricSample(k, rate, worst, vol, name, "sfc"))
            for name, emap in fields.items():
                rate, worst = _metrics(EsdfView(emap), body)
                series[name].append(MetricSample(k, rate, worst, esdf.free_volume(emap), name,
                                                 "esdf"))
        if snapshot_dir and snapshot_every and (k % snapshot_every == 0 or k == last):
            _snapshot(snapshot_dir, k, corridors, fields)
        if observer:
            observer(k, step, corridors, fields)
        if progress:
            progress(k, sc.frames)

    rover = None
    if include_rover and sc.rover is not None:
        rover = run_rover_experiment(sc, rover_rng)
    report = ExperimentReport(
        scenario=sc.name, config=sc.config, kappa=sc.kappa, series=series,
        metadata={"surface_samples": int(samples.shape[0]),
                  "violation_denominator": "all surface samples inside the scenario bounds",
                  "voxel_size": vs, "frames": sc.frames},
        rover=rover, maps={**corridors, **fields})
    report.acceptance = check_acceptance(report, sc.acceptance)
    return report


def _snapshot(directory, k, corridors, fields):
    os.makedirs(directory, exist_ok=True)
    for name, cmap in corridors.items():
        with open(os.path.join(directory, f"{name}_{k:05d}.json"), "w") as f:
            f.write(sfc.corridor_to_json(cmap))
    for name, emap in fields.items():
        esdf.save_snapshot(emap, os.path.join(directory, f"{name}_{k:05d}.bin"))


def run_rover_experiment(sc: Scenario, rng=None) -> dict:
    """Closed-loop rover drive for each distance-field policy in the scenario."""
    rv = sc.rover
    if rng is None:
        rng = sc.streams()[2]
    from .scenario import build_camera
    cam = build_camera(rv["camera"]) if "camera" in rv else sc.camera
    sigma = rv.get("sigma", float(np.max(np.diag(sc.Sigma))))
    x0, y0, yaw0 = rv["start"]
    start = (x0, y0, np.radians(yaw0))    # scenario files give yaw in degrees
    state = rng.bit_generator.state
    out = {}
    for name in ("esdf-baseline", "esdf-certified"):
        if name not in sc.policies:
            continue
        rng.bit_generator.state = state   # identical noise for both policies
        pol = esdf.EsdfPolicy(name.split("-")[1], radius=sc.mapping["esdf_radius"], kappa=sc.kappa)
        res = run_rover(sc.environment, cam, start, rv["phases"], sigma * np.eye(6), pol,
                        rng, voxel_size=rv.get("voxel_size", 0.05),
                        truncation=sc.mapping["truncation"], height=rv.get("height", 0.3),
                        max_frames=rv.get("max_frames", 4000))
        out[name] = {"incursions": res.incursions, "halted": res.halted, "frames": res.frames,
                     "final_position": [float(x) for x in res.final_position],
                     "final_clearance": res.final_clearance, "min_clearance": res.min_clearance}
    return out


def check_acceptance(report: ExperimentReport, acceptance: dict) -> list:
    results = []
    summary = report.summary
    for key in sorted(acceptance):
        limit = float(acceptance[key])
        targets, metric, bound = assertion_targets(key, list(summary))
        for name in targets:
            value = getattr(summary[name], metric)
            ok = value <= limit if bound == "max" else value >= limit
            results.append({"assertion": key, "policy": name, "value": value, "limit": limit,
                            "passed": bool(ok)})
    return results


SUMMARY_COLUMNS = ("policy", "violation_rate_pct", "max_violation_mm", "free_volume_m3")


def _row(m: MetricSample):
    return [repr(100.0 * m.violation_rate), repr(1000.0 * m.max_violation), repr(m.free_volume)]


def summary_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for name, m in report.summary.items():
        w.writerow([name] + _row(m))
    return buf.getvalue()


def series_csv(samples) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("frame",) + SUMMARY_COLUMNS[1:])
    for m in samples:
        w.writerow([m.frame] + _row(m))
    return buf.getvalue()


def emit_tables(report: ExperimentReport, out_dir) -> list:
    """Write ``summary.csv`` and ``report.json``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "summary.csv"), os.path.join(out_dir, "report.json")]
    with open(paths[0], "w") as f:
        f.write(summary_csv(report))
    with open(paths[1], "w") as f:
        f.write(report.to_json())
    return paths


def emit_series(report: ExperimentReport, out_dir) -> list:
    """One per-frame CSV per policy, ``series_<policy>.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, samples in report.series.items():
        path = os.path.join(out_dir, f"series_{name}.csv")
        with open(path, "w") as f:
            f.write(series_csv(samples))
        paths.append(path)
    return paths


def read_summary_csv(path) -> dict:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    return {r["policy"]: (float(r["violation_rate_pct"]) / 100.0,
                          float(r["max_violation_mm"]) / 1000.0,
                          float(r["free_volume_m3"])) for r in rows}


def format_table(report: ExperimentReport) -> str:
    lines = [f"{'policy':<16}{'violation %':>14}{'max viol mm':>14}{'free m^3':>12}"]
    for name, m in report.summary.items():
        lines.append(f"{name:<16}{100 * m.violation_rate:>14.4f}{1000 * m.max_violation:>14.2f}"
                     f"{m.free_volume:>12.4f}")
    if report.rover:
        for name, r in report.rover.items():
            lines.append(f"rover {name}: incursions={r['incursions']} halted={r['halted']} "
                         f"final clearance={r['final_clearance']:.3f} m")
    return "\n".join(lines)


def run_sweep(sc_factory, sigmas) -> list:
    """``(sigma2, report)`` per covariance scale; ``sc_factory(sigma2)`` builds the scenario."""
    return [(s, run_experiment(sc_factory(s), include_rover=False)) for s in sigmas]


def sweep_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sigma2",) + SUMMARY_COLUMNS)
    for s, report in results:
        for name, m in report.summary.items():
            w.writerow([repr(float(s)), name] + _row(m))
    return buf.getvalue()
