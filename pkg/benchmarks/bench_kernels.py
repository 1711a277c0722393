"""Time each hot kernel under the compiled core and the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best wall time of each backend and the speed-up.
"""

import argparse
import timeit

import numpy as np

from certimap import _kernels_py
from certimap.camera import CameraModel
from certimap.esdf import _subcell_gaps
from certimap.liegroup import exp_so3
from certimap.sim import Box, Environment, Plane, camera_pose, raycast_depth

try:
    from certimap import _kernels as _compiled
except ImportError:
    _compiled = None


def workloads(rng):
    env = Environment([Box([1.2, -0.3, 0.0], [1.6, 0.3, 0.8])], [Plane([0, 0, 1], 0.0)],
                      ([-0.2, -1.2, -0.1], [2.6, 1.2, 1.4]))
    cam = CameraModel.from_fov(160, 120, 80.0, 0.1, 4.0)
    pose = camera_pose([0.0, 0.0, 0.6], 0.0, 0.15)
    zbuf = raycast_depth(env, pose, cam).depth
    inv = pose.inverse()

    B = rng.normal(size=(200_000, 3, 3))
    C = rng.normal(size=(6, 6)) * 1e-3
    A = rng.normal(size=(64, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    lo = rng.uniform(-2, 1, (20, 3))
    centres = rng.uniform([0.2, -1.0, 0.0], [2.4, 1.0, 1.2], (20_000, 3)) @ inv.R.T + inv.t
    _, gaps, order = _subcell_gaps(4)
    label = np.where(rng.uniform(size=(50_000, 26)) < 0.3, rng.integers(0, 5000, (50_000, 26)), -1)
    hidden = rng.uniform(size=(5000, 64)) < 0.05

    return {
        "sym3_max_eigenvalue": (B @ B.transpose(0, 2, 1),),
        "deflation_amounts": (rng.uniform(-3, 3, (200_000, 3)), exp_so3([0.1, 0.2, 0.3]),
                              np.ones(3), exp_so3([0.0, 0.01, 0.0]), C @ C.T, 8.9),
        "union_penetration": (rng.uniform(-1.5, 1.5, (50_000, 3)), A, rng.uniform(0.3, 1.0, 64),
                              np.arange(0, 65, 8, dtype=np.int64), -np.ones((8, 3)), np.ones((8, 3))),
        "raycast_boxes": (np.zeros(3), rng.normal(size=(50_000, 3)), lo, lo + 0.5),
        "brute_nearest": (rng.normal(size=(3000, 3)), rng.normal(size=(3000, 3)), 0.4),
        "observe_voxels": (np.zeros(3, dtype=np.int64), np.array([56, 48, 30]),
                           np.array([-0.2, -1.2, -0.1]), 0.05, inv.R, inv.t, cam.intrinsics, zbuf),
        "visible_subcells": (centres, rng.uniform(-0.02, 0.02, (64, 3)), 0.01, cam.intrinsics, zbuf),
        "edge_gaps": (label, hidden, gaps, order),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    print(f"{'kernel':22s} {'numpy ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, call_args in workloads(np.random.default_rng(0)).items():
        best = {}
        for label, mod in (("numpy", _kernels_py), ("cython", _compiled)):
            if mod is None:
                continue
            fn = getattr(mod, name)
            best[label] = min(timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat))
        py_ms = 1e3 * best["numpy"]
        if "cython" in best:
            cy_ms = 1e3 * best["cython"]
            print(f"{name:22s} {py_ms:10.2f} {cy_ms:10.2f} {py_ms / cy_ms:8.1f}x")
        else:
            print(f"{name:22s} {py_ms:10.2f} {'n/a':>10s} {'':>9s}")


if __name__ == "__main__":
    main()
