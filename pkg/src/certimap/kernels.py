"""Kernel selection: the compiled core when importable, numpy otherwise.

Set ``CERTIMAP_PURE_PYTHON=1`` to force the numpy versions.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("CERTIMAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py

sym3_max_eigenvalue = _impl.sym3_max_eigenvalue
deflation_amounts = _impl.deflation_amounts
union_penetration = _impl.union_penetration
raycast_boxes = _impl.raycast_boxes
brute_nearest = _impl.brute_nearest
observe_voxels = _impl.observe_voxels
visible_subcells = _impl.visible_subcells
edge_gaps = _impl.edge_gaps


def thread_count() -> int:
    """Worker count from ``CERTIMAP_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("CERTIMAP_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("CERTIMAP_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)
