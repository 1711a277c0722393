"""Command line: run a scenario, sweep the odometry covariance, call an oracle, validate a file."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import eval as ev
from . import kernels, oracles, scenario
from .scenario import POLICIES, ScenarioError

EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2


def resolve_scenario_path(name: str) -> Path:
    """A file path, or the name of a bundled preset (``room``, ``corridor.json``)."""
    p = Path(name)
    if p.exists():
        return p
    preset = scenario.preset_path(p.stem)
    if Path(str(preset)).exists():
        return Path(str(preset))
    raise FileNotFoundError(f"no scenario file or preset named {name!r}")


def _policy_list(text: str | None):
    if text is None:
        return None
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [n for n in names if n not in POLICIES]
    if bad or not names:
        raise ValueError(f"unknown policy {', '.join(bad) or '(empty)'}; valid policies: "
                         + ", ".join(POLICIES))
    return names


def _sigma_arg(text: str | None):
    if text is None:
        return None
    vals = [float(x) for x in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _kappa_arg(text: str | None):
    if text is None:
        return None
    return text if text.startswith("auto") else float(text)


def load_config(args, **extra) -> scenario.Scenario:
    """Read the scenario named on the command line and fold in the overrides."""
    path = resolve_scenario_path(args.scenario)
    raw, text = scenario.read_text(path)
    overrides = dict(sigma=_sigma_arg(getattr(args, "sigma", None)),
                     kappa=_kappa_arg(getattr(args, "kappa", None)),
                     seed=getattr(args, "seed", None),
                     voxel_size=getattr(args, "voxel_size", None),
                     policies=_policy_list(getattr(args, "policies", None)),
                     frames=getattr(args, "frames", None))
    overrides.update(extra)
    if any(v is not None for v in overrides.values()):
        raw, text = scenario.apply_overrides(raw, **overrides), ""
    if "CERTIMAP_THREADS" in os.environ:
        raw.setdefault("mapping", {})["threads"] = kernels.thread_count()
    return scenario.from_dict(raw, text)


def _config_error(e: Exception) -> int:
    print(f"error: {e}", file=sys.stderr)
    return EXIT_CONFIG


def _progress(k, n):
    print(f"frame {k}/{n}", file=sys.stderr, flush=True)


def cmd_run(args) -> int:
    try:
        sc = load_config(args)
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        return _config_error(e)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snaps = out / "snapshots" if args.snapshot_every else None
    report = ev.run_experiment(sc, snapshot_dir=snaps, snapshot_every=args.snapshot_every,
                               include_rover=not args.no_rover,
                               progress=_progress if args.verbose else None)
    ev.emit_tables(report, out)
    ev.emit_series(report, out)
    print(ev.format_table(report))
    if report.rover:
        for name, r in report.rover.items():
            print(f"rover {name}: incursions={r['incursions']} halted={r['halted']} "
                  f"final_clearance={r['final_clearance']:.3f}")
    failed = [a for a in report.acceptance if not a["passed"]]
    for a in report.acceptance:
        status = "PASS" if a["passed"] else "FAIL"
        print(f"{status} {a['assertion']} [{a['policy']}] value={a['value']!r} limit={a['limit']!r}")
    return EXIT_ACCEPTANCE if failed else 0


def cmd_sweep(args) -> int:
    try:
        sigmas = [float(s) for s in args.sigmas.split(",")]
        base = load_config(args)
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        return _config_error(e)

    def factory(s2):
        raw = scenario.apply_overrides(base.config, sigma=s2)
        return scenario.from_dict(raw)

    results = ev.run_sweep(factory, sigmas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = ev.sweep_csv(results)
    (out / "sweep.csv").write_text(text)
    print(text, end="")
    return 0


def cmd_validate(args) -> int:
    try:
        sc = load_config(args)
    except (ScenarioError, ValueError, FileNotFoundError) as e:
        return _config_error(e)
    print(f"ok: {sc.name} ({sc.frames} frames, policies {', '.join(sc.policies)}, "
          f"kappa {sc.kappa:.6g})")
    return 0


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        print(text, end="")


def oracle_esdf(args) -> int:
    with open(args.points) as f:
        pts = np.asarray(json.load(f), dtype=float).reshape(-1, 3)
    origin = np.zeros(3) if args.origin is None else np.asarray(args.origin, dtype=float)
    d = oracles.brute_distance_grid(args.grid, args.voxel_size, origin, pts)
    rows = [("i", "j", "k", "distance")]
    for (i, j, k), v in np.ndenumerate(d):
        rows.append((i, j, k, repr(float(v))))
    _emit("\n".join(",".join(map(str, r)) for r in rows) + "\n", args.out)
    return 0


def oracle_containment(args) -> int:
    Sigma = scenario.sigma_matrix(_sigma_arg(args.sigma))
    kappa = scenario.resolve_kappa(_kappa_arg(args.kappa))
    frac = oracles.containment_fraction(Sigma, kappa, args.n, seed=args.seed)
    print(repr(frac))
    return 0


def oracle_chi2(args) -> int:
    print(repr(oracles.chi2_quantile(args.p, args.dof)))
    return 0


def oracle_raycast(args) -> int:
    sc = scenario.from_dict(scenario.read_text(resolve_scenario_path(args.scenario))[0])
    env = sc.environment
    boxes = [(b.lo, b.hi) for b in env.boxes]
    planes = [(p.normal, p.offset) for p in env.planes]
    d = np.asarray(args.direction, dtype=float)
    t = oracles.ray_march(args.origin, d / np.linalg.norm(d), boxes, planes,
                          max_t=args.max_range, step=args.step)
    print(repr(t))
    return 0


def oracle_volume(args) -> int:
    with open(args.polytope) as f:
        poly = json.load(f)
    A, b = np.asarray(poly["A"], dtype=float), np.asarray(poly["b"], dtype=float)
    print(repr(oracles.polytope_volume(A, b)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="certimap", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_flags(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON file or preset name")
        if out:
            p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--sigma", help="odometry covariance: scalar, 6 diagonal or 21 lower-triangle values")
        p.add_argument("--kappa", help="truncation scale, a number or autoP (e.g. auto97)")
        p.add_argument("--seed", type=int)
        p.add_argument("--voxel-size", type=float)
        p.add_argument("--policies", help="comma-separated subset of: " + ", ".join(POLICIES))
        p.add_argument("--frames", type=int)

    run = sub.add_parser("run", help="run one scenario and write the report")
    scenario_flags(run)
    run.add_argument("--snapshot-every", type=int, default=0, help="dump maps every N frames")
    run.add_argument("--no-rover", action="store_true", help="skip the rover block")
    run.add_argument("-v", "--verbose", action="store_true")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="repeat a run over several covariance scales")
    scenario_flags(sweep)
    sweep.add_argument("--sigmas", default="1e-12,1e-10,1e-8,1e-6,1e-4",
                       help="comma-separated sigma^2 values")
    sweep.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="check a scenario file")
    scenario_flags(val, out=False)
    val.set_defaults(func=cmd_validate)

    orc = sub.add_parser("oracle", help="slow reference computations")
    osub = orc.add_subparsers(dest="oracle", required=True)
    o = osub.add_parser("esdf", help="brute-force distances on an n^3 grid")
    o.add_argument("--grid", type=int, required=True)
    o.add_argument("--points", required=True, help="JSON file holding a list of [x, y, z]")
    o.add_argument("--voxel-size", type=float, default=0.05)
    o.add_argument("--origin", type=float, nargs=3)
    o.add_argument("--out")
    o.set_defaults(func=oracle_esdf)
    o = osub.add_parser("containment", help="Monte-Carlo ellipsoid containment fraction")
    o.add_argument("--sigma", required=True)
    o.add_argument("--kappa", default="auto97")
    o.add_argument("--n", type=int, default=100_000)
    o.add_argument("--seed", type=int, default=0)
    o.set_defaults(func=oracle_containment)
    o = osub.add_parser("chi2", help="chi-square quantile")
    o.add_argument("--dof", type=int, default=3)
    o.add_argument("--p", type=float, required=True)
    o.set_defaults(func=oracle_chi2)
    o = osub.add_parser("raycast", help="ray-marched first hit in a scenario environment")
    o.add_argument("--scenario", required=True)
    o.add_argument("--origin", type=float, nargs=3, required=True)
    o.add_argument("--direction", type=float, nargs=3, required=True)
    o.add_argument("--max-range", type=float, default=20.0)
    o.add_argument("--step", type=float, default=1e-3)
    o.set_defaults(func=oracle_raycast)
    o = osub.add_parser("volume", help="exact polytope volume")
    o.add_argument("--polytope", required=True, help='JSON file holding {"A": [...], "b": [...]}')
    o.set_defaults(func=oracle_volume)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)

