"""Pinhole camera model and ray generation.

Uses the OpenGL/NeRF-synthetic convention: camera x right, y up, looking
along -z. Pixel (i, j) is column i, row j, sampled at its center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray  # (4, 4) camera-to-world rigid transform
    near: float = 0.2
    far: float = 100.0

    def __post_init__(self):
        self.c2w = np.asarray(self.c2w, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        R = self.c2w[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")

    @classmethod
    def from_fov_x(cls, fov_x: float, width: int, height: int, c2w) -> "Camera":
        fx = width / (2.0 * math.tan(fov_x / 2.0))
        return cls(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height, c2w=np.asarray(c2w))

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        """World-space viewing axis (camera looks along -z)."""
        return -self.c2w[:3, 2]

    def rays(self, dtype=torch.float64):
        """Per-pixel world rays.

        Returns (origin (3,), directions (H, W, 3) unit length).
        """
        j, i = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        x = (i + 0.5 - self.cx) / self.fx
        y = -(j + 0.5 - self.cy) / self.fy
        dirs_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
        dirs = dirs_cam @ self.c2w[:3, :3].T
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return (torch.tensor(self.origin, dtype=dtype),
                torch.tensor(dirs, dtype=dtype))

    def mapped_depth(self, t: torch.Tensor) -> torch.Tensor:
        """Ray depths mapped to [0, 1) between the near and far planes,
        far * (t - near) / ((far - near) * t): the normalized-depth space
        the distortion regularizer operates in, so its strength does not
        depend on scene units.  Depths below near clamp to 0."""
        tc = t.clamp(min=self.near)
        return self.far * (tc - self.near) / ((self.far - self.near) * tc)

    def view_depths(self, points: torch.Tensor) -> torch.Tensor:
        """Depth of world points (N, 3) along the viewing axis."""
        o = torch.tensor(self.origin, dtype=points.dtype)
        f = torch.tensor(self.forward, dtype=points.dtype)
        return (points - o) @ f

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project world points (N, 3) to continuous pixel coordinates (N, 2).

        Points at or behind the camera plane yield nan.
        """
        w2c_R = self.c2w[:3, :3].T
        p_cam = (points - self.origin) @ w2c_R.T
        z = -p_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = np.where(z > 0, self.fx * p_cam[:, 0] / z + self.cx, np.nan)
            py = np.where(z > 0, self.fy * (-p_cam[:, 1]) / z + self.cy, np.nan)
        return np.stack([px, py], axis=-1)

    def rotated(self, rot: np.ndarray) -> "Camera":
        """Camera rigidly rotated by a world-space 3x3 rotation."""
        c2w = self.c2w.copy()
        c2w[:3, :3] = rot @ c2w[:3, :3]
        c2w[:3, 3] = rot @ c2w[:3, 3]
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, c2w)
