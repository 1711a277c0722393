"""Scenario files: JSON schema, validation with field diagnostics, and resolution.

A scenario fixes the world, the camera, the trajectory, the odometry noise,
the truncation scale and the seed. Randomness is split from one root seed::

    root = SeedSequence(seed)
    odometry, volume, rover = root.spawn(3)

``odometry`` drives the per-frame twist noise, ``volume`` the Monte-Carlo free
volume samples of the corridor maps, and ``rover`` the closed-loop drive.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .camera import CameraModel
from .liegroup import kappa_from_probability
from .sim import Box, Environment, Plane, camera_pose

POLICIES = ("sfc-baseline", "sfc-heuristic", "sfc-certified",
            "esdf-baseline", "esdf-heuristic", "esdf-certified")

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "required": ["environment", "camera", "trajectory"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "environment": {
            "type": "object",
            "required": ["bounds"],
            "additionalProperties": False,
            "properties": {
                "boxes": {"type": "array", "items": {
                    "type": "object", "required": ["min", "max"], "additionalProperties": False,
                    "properties": {"min": _VEC3, "max": _VEC3}}},
                "planes": {"type": "array", "items": {
                    "type": "object", "required": ["normal", "offset"], "additionalProperties": False,
                    "properties": {"normal": _VEC3, "offset": {"type": "number"}}}},
                "bounds": {"type": "object", "required": ["min", "max"], "additionalProperties": False,
                           "properties": {"min": _VEC3, "max": _VEC3}},
            },
        },
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "required": ["width", "height"],
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "hfov_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 180},
                "fx": _POS, "fy": _POS, "cx": {"type": "number"}, "cy": {"type": "number"},
                "min_range": _POS, "max_range": _POS,
            },
        },
        "trajectory": {
            "type": "object",
            "required": ["waypoints", "frames"],
            "additionalProperties": False,
            "properties": {
                "waypoints": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["position"], "additionalProperties": False,
                    "properties": {"position": _VEC3, "yaw_deg": {"type": "number"},
                                   "pitch_deg": {"type": "number"}}}},
                "frames": {"type": "integer", "minimum": 2},
                "clearance": {"type": "number", "minimum": 0},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma": {"oneOf": [
                    {"type": "number", "minimum": 0},
                    {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6},
                    {"type": "array", "items": {"type": "number"}, "minItems": 21, "maxItems": 21},
                ]},
                "kappa": {"oneOf": [_POS, {"type": "string", "pattern": r"^auto[0-9]+(\.[0-9]+)?$"}]},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "policies": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "mapping": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "voxel_size": _POS,
                "truncation": _POS,
                "esdf_radius": _POS,
                "sfc_window": {"type": "integer", "minimum": 1},
                "seed_offset": {"type": "number", "minimum": 0},
                "metric_every": {"type": "integer", "minimum": 1},
                "volume_samples": {"type": "integer", "minimum": 1},
                "threads": {"type": "integer", "minimum": 0},
            },
        },
        "acceptance": {"type": "object", "additionalProperties": {"type": "number"}},
        "rover": {
            "type": "object",
            "required": ["start", "phases"],
            "additionalProperties": False,
            "properties": {
                "start": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                "height": {"type": "number"},
                "sigma": {"type": "number", "minimum": 0},
                "voxel_size": _POS,
                "max_frames": {"type": "integer", "minimum": 1},
                "camera": {"type": "object"},
                "phases": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["goal"], "additionalProperties": False,
                    "properties": {"goal": {"type": "array", "items": {"type": "number"},
                                            "minItems": 2, "maxItems": 2},
                                   "reverse": {"type": "boolean"}, "guarded": {"type": "boolean"},
                                   "speed": _POS}}},
            },
        },
    },
}

DEFAULTS = {
    "name": "scenario",
    "noise": {"sigma": 0.0, "kappa": "auto97"},
    "seed": 0,
    "policies": list(POLICIES),
    "mapping": {"voxel_size": 0.02, "truncation": 0.5, "esdf_radius": 3.0, "sfc_window": 60,
                "seed_offset": 0.2, "metric_every": 10, "volume_samples": 100000, "threads": 1},
    "acceptance": {},
}

METRICS = ("violation_rate", "max_violation", "free_volume")
GROUPS = ("certified", "heuristic", "baseline", "sfc", "esdf", "all")


class ScenarioError(ValueError):
    """Raised with one ``location: message`` line per problem."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class Scenario:
    config: dict
    name: str
    environment: Environment
    camera: CameraModel
    waypoints: list
    frames: int
    Sigma: np.ndarray
    kappa: float
    seed: int
    policies: tuple
    mapping: dict
    acceptance: dict = field(default_factory=dict)
    rover: dict | None = None
    clearance: float = 0.0

    def streams(self):
        """Independent generators: odometry, corridor volume sampling, rover drive."""
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(3)]


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_kappa(value) -> float:
    """Literal positive number, or ``autoP`` for the 3-dof chi-square quantile at P percent."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value <= 0:
            raise ValueError("kappa must be positive")
        return float(value)
    s = str(value).strip()
    if s.startswith("auto"):
        p = float(s[4:]) / 100.0
        if not 0.0 < p < 1.0:
            raise ValueError(f"kappa {s!r}: probability must be inside (0, 100)")
        return kappa_from_probability(p, 3)
    try:
        return resolve_kappa(float(s))
    except ValueError:
        raise ValueError(f"kappa {value!r} is neither a number nor autoP") from None


def sigma_matrix(value) -> np.ndarray:
    """Scalar (times identity), 6 diagonal entries, or the 21-entry lower triangle (row-major)."""
    if isinstance(value, (int, float)):
        return float(value) * np.eye(6)
    v = np.asarray(value, dtype=float)
    if v.size == 6:
        return np.diag(v)
    if v.size == 21:
        S = np.zeros((6, 6))
        S[np.tril_indices(6)] = v
        return S + np.tril(S, -1).T
    raise ValueError("sigma needs 1, 6 or 21 entries")


def _line_of(text: str, path) -> int | None:
    """Best-effort source line of the last key on ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not text or not keys:
        return None
    needle = json.dumps(keys[-1]) + ":"
    pos = text.find(needle)
    if pos < 0:
        needle = json.dumps(keys[-1])
        pos = text.find(needle)
    return text.count("\n", 0, pos) + 1 if pos >= 0 else None


def _loc(path, text):
    where = "/".join(str(p) for p in path) or "<root>"
    line = _line_of(text, path)
    return f"line {line}: {where}" if line else where


def validate(raw: dict, text: str = "") -> list:
    """All schema and semantic problems as ``location: message`` strings."""
    problems = []
    v = jsonschema.Draft7Validator(SCHEMA)
    for err in sorted(v.iter_errors(raw), key=lambda e: list(map(str, e.path))):
        problems.append(f"{_loc(list(err.path), text)}: {err.message}")
    if problems:
        return problems
    cfg = _merge(DEFAULTS, raw)
    env = cfg["environment"]
    lo, hi = env["bounds"]["min"], env["bounds"]["max"]
    if any(h <= l for l, h in zip(lo, hi)):
        problems.append(f"{_loc(['environment', 'bounds'], text)}: max must exceed min on every axis")
    for i, b in enumerate(env.get("boxes", [])):
        if any(h <= l for l, h in zip(b["min"], b["max"])):
            problems.append(f"{_loc(['environment', 'boxes', i], text)}: box max must exceed min")
    for i, p in enumerate(env.get("planes", [])):
        if not any(p["normal"]):
            problems.append(f"{_loc(['environment', 'planes', i, 'normal'], text)}: zero normal")
    cam = cfg["camera"]
    if "hfov_deg" not in cam and not all(k in cam for k in ("fx", "fy")):
        problems.append(f"{_loc(['camera'], text)}: give hfov_deg or fx and fy")
    if cam.get("max_range", 8.0) <= cam.get("min_range", 0.1):
        problems.append(f"{_loc(['camera', 'max_range'], text)}: must exceed min_range")
    bad = [p for p in cfg["policies"] if p not in POLICIES]
    if bad:
        problems.append(f"{_loc(['policies'], text)}: unknown policy {', '.join(bad)}; "
                        f"valid: {', '.join(POLICIES)}")
    try:
        resolve_kappa(cfg["noise"]["kappa"])
    except ValueError as e:
        problems.append(f"{_loc(['noise', 'kappa'], text)}: {e}")
    S = sigma_matrix(cfg["noise"]["sigma"])
    if np.linalg.eigvalsh(S).min() < -1e-12:
        problems.append(f"{_loc(['noise', 'sigma'], text)}: covariance is not positive semidefinite")
    for key in cfg["acceptance"]:
        if _parse_assertion(key) is None:
            problems.append(f"{_loc(['acceptance', key], text)}: expected "
                            f"<group|policy>_<metric>_<max|min>")
    return problems


def _parse_assertion(key: str):
    for bound in ("_max", "_min"):
        if key.endswith(bound):
            head = key[: -len(bound)]
            for metric in METRICS:
                if head.endswith("_" + metric):
                    who = head[: -len(metric) - 1]
                    if who in GROUPS or who.replace("_", "-") in POLICIES:
                        return who.replace("_", "-"), metric, bound[1:]
    return None


def assertion_targets(key: str, policies):
    who, metric, bound = _parse_assertion(key)
    if who == "all":
        sel = list(policies)
    elif who in ("sfc", "esdf"):
        sel = [p for p in policies if p.startswith(who + "-")]
    elif who in ("certified", "heuristic", "baseline"):
        sel = [p for p in policies if p.endswith("-" + who)]
    else:
        sel = [p for p in policies if p == who]
    return sel, metric, bound


def apply_overrides(raw: dict, sigma=None, kappa=None, seed=None, voxel_size=None, policies=None,
                    frames=None) -> dict:
    cfg = copy.deepcopy(raw)
    if sigma is not None:
        cfg.setdefault("noise", {})["sigma"] = sigma
    if kappa is not None:
        cfg.setdefault("noise", {})["kappa"] = kappa
    if seed is not None:
        cfg["seed"] = int(seed)
    if voxel_size is not None:
        cfg.setdefault("mapping", {})["voxel_size"] = float(voxel_size)
    if policies is not None:
        cfg["policies"] = list(policies)
    if frames is not None:
        cfg["trajectory"]["frames"] = int(frames)
    return cfg


def build_camera(cam: dict) -> CameraModel:
    rmin, rmax = cam.get("min_range", 0.1), cam.get("max_range", 8.0)
    if "fx" in cam:
        w, h = cam["width"], cam["height"]
        return CameraModel(cam["fx"], cam["fy"], cam.get("cx", (w - 1) / 2.0),
                           cam.get("cy", (h - 1) / 2.0), w, h, rmin, rmax)
    return CameraModel.from_fov(cam["width"], cam["height"], cam["hfov_deg"], rmin, rmax)


def build_environment(env: dict) -> Environment:
    return Environment(
        boxes=[Box(tuple(b["min"]), tuple(b["max"])) for b in env.get("boxes", [])],
        planes=[Plane(tuple(p["normal"]), p["offset"]) for p in env.get("planes", [])],
        bounds=(tuple(env["bounds"]["min"]), tuple(env["bounds"]["max"])))


def from_dict(raw: dict, text: str = "") -> Scenario:
    problems = validate(raw, text)
    if problems:
        raise ScenarioError(problems)
    cfg = _merge(DEFAULTS, raw)
    traj = cfg["trajectory"]
    wps = [camera_pose(w["position"], math.radians(w.get("yaw_deg", 0.0)),
                       math.radians(w.get("pitch_deg", 0.0))) for w in traj["waypoints"]]
    return Scenario(
        config=cfg, name=cfg["name"], environment=build_environment(cfg["environment"]),
        camera=build_camera(cfg["camera"]), waypoints=wps, frames=traj["frames"],
        Sigma=sigma_matrix(cfg["noise"]["sigma"]), kappa=resolve_kappa(cfg["noise"]["kappa"]),
        seed=cfg["seed"], policies=tuple(cfg["policies"]), mapping=cfg["mapping"],
        acceptance=cfg["acceptance"], rover=cfg.get("rover"),
        clearance=traj.get("clearance", 0.0))


def read_text(path) -> tuple[dict, str]:
    with open(path) as f:
        text = f.read()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as e:
        raise ScenarioError([f"line {e.lineno} column {e.colno}: {e.msg}"]) from None


def load(path, **overrides) -> Scenario:
    raw, text = read_text(path)
    if overrides:
        raw = apply_overrides(raw, **overrides)
        text = ""
    return from_dict(raw, text)


def preset_path(name: str):
    from importlib.resources import files
    return files("certimap") / "presets" / f"{name}.json"
