"""Pinhole depth camera in the optical convention (z forward, x right, y down)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    min_range: float = 0.1
    max_range: float = 8.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not self.max_range > self.min_range > 0:
            raise ValueError("need max_range > min_range > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must have at least one pixel")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float, min_range=0.1, max_range=8.0):
        fx = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(fx, fx, (width - 1) / 2.0, (height - 1) / 2.0, width, height, min_range, max_range)

    @property
    def intrinsics(self):
        return (self.fx, self.fy, self.cx, self.cy, self.min_range, self.max_range)

    def pixel_directions(self) -> np.ndarray:
        """(H*W, 3) ray directions with unit z, row-major over (v, u)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.empty((self.height * self.width, 3))
        d[:, 0] = (u.ravel() - self.cx) / self.fx
        d[:, 1] = (v.ravel() - self.cy) / self.fy
        d[:, 2] = 1.0
        return d

    def project(self, p):
        """Nearest pixel (u, v) and depth z for camera-frame points; pixel -1 when outside."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        z = p[:, 2]
        zs = np.where(z > 0.0, z, 1.0)
        u = np.floor(self.fx * p[:, 0] / zs + self.cx + 0.5).astype(np.int64)
        v = np.floor(self.fy * p[:, 1] / zs + self.cy + 0.5).astype(np.int64)
        bad = (z <= 0.0) | (u < 0) | (u >= self.width) | (v < 0) | (v >= self.height)
        u[bad] = -1
        v[bad] = -1
        return u, v, z

    def depth_from_points(self, points) -> np.ndarray:
        """Z-buffer of camera-frame points; ``inf`` where no point lands."""
        zbuf = np.full((self.height, self.width), np.inf)
        u, v, z = self.project(points)
        ok = u >= 0
        np.minimum.at(zbuf, (v[ok], u[ok]), z[ok])
        return zbuf

    def far_depth(self) -> float:
        """Largest z at which every pixel ray is still within ``max_range``."""
        corners = np.array([[0, 0], [self.width - 1, 0], [0, self.height - 1],
                            [self.width - 1, self.height - 1]], dtype=float)
        x = (corners[:, 0] - self.cx) / self.fx
        y = (corners[:, 1] - self.cy) / self.fy
        return float(self.max_range / np.sqrt(1.0 + x * x + y * y).max())

    def frustum_halfspaces(self, far: float | None = None):
        """``(A, b)`` of the pyramid spanned by the outermost pixel rays, capped at depth ``far``."""
        far = self.far_depth() if far is None else far
        ul = (0 - self.cx) / self.fx
        ur = (self.width - 1 - self.cx) / self.fx
        vt = (0 - self.cy) / self.fy
        vb = (self.height - 1 - self.cy) / self.fy
        A = np.array([
            [-1.0, 0.0, ul],   # x >= ul z
            [1.0, 0.0, -ur],   # x <= ur z
            [0.0, -1.0, vt],
            [0.0, 1.0, -vb],
            [0.0, 0.0, 1.0],
        ])
        b = np.array([0.0, 0.0, 0.0, 0.0, far])
        return A, b

    def frustum_box(self, far: float | None = None):
        """Axis-aligned box around the capped frustum, in the camera frame."""
        far = self.far_depth() if far is None else far
        ul = (0 - self.cx) / self.fx
        ur = (self.width - 1 - self.cx) / self.fx
        vt = (0 - self.cy) / self.fy
        vb = (self.height - 1 - self.cy) / self.fy
        lo = np.array([min(ul, 0.0) * far, min(vt, 0.0) * far, 0.0])
        hi = np.array([max(ur, 0.0) * far, max(vb, 0.0) * far, far])
        return lo, hi

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height,
                "min_range": self.min_range, "max_range": self.max_range}
