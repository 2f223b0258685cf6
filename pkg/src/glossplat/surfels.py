"""2D Gaussian surfel primitives: parameters, activations, and ray-splat math.

Two views of the same primitive live here. The scalar API (Surfel / Ray /
SplatHit, ray_splat_intersect) operates on a single disk and is the reference
used by the tests. SurfelCloud is the batched torch representation the
rasterizer consumes; its raw parameter tensors are the learnable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

RHO_MIN = 0.02          # roughness floor; avoids a delta lobe at mip level 0
NEAR_EPSILON = 1e-4     # reject hits behind or grazing the ray origin
PARALLEL_EPSILON = 1e-8
CUTOFF_SIGMA = 3.0      # disk support radius in units of sigma; hits beyond are skipped


def gaussian_weight(u, v):
    """exp(-(u^2 + v^2) / 2), the unnormalized Gaussian falloff on the disk."""
    return math.exp(-(u * u + v * v) / 2.0)


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Convert quaternions (..., 4) in (w, x, y, z) order to rotation matrices (..., 3, 3).

    Quaternions are normalized internally so gradients stay valid for
    slightly off-unit parameters between optimizer projections.
    """
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


@dataclass
class Surfel:
    """A single 2D Gaussian disk with geometry, material, and a feature vector.

    Raw fields are unconstrained; activated properties are exposed as
    cached attributes (opacity, diffuse, roughness, tint).
    """

    center: np.ndarray                     # (3,)
    rotation: np.ndarray                   # (4,) unit quaternion, (w, x, y, z)
    log_scales: np.ndarray                 # (2,)
    raw_opacity: float = 0.0
    raw_diffuse: np.ndarray = field(default_factory=lambda: np.zeros(3))
    raw_roughness: float = 0.0
    raw_tint: np.ndarray = field(default_factory=lambda: np.zeros(3))
    feature: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.rotation = self.rotation / np.linalg.norm(self.rotation)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64)

    @property
    def frame(self) -> np.ndarray:
        """3x3 rotation matrix with columns (t_u, t_v, n)."""
        q = torch.from_numpy(self.rotation)
        return quat_to_rotmat(q).numpy()

    @property
    def t_u(self) -> np.ndarray:
        return self.frame[:, 0]

    @property
    def t_v(self) -> np.ndarray:
        return self.frame[:, 1]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacity(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.raw_opacity))

    @property
    def diffuse(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.raw_diffuse))

    @property
    def roughness(self) -> float:
        return RHO_MIN + (1.0 - RHO_MIN) / (1.0 + math.exp(-self.raw_roughness))

    @property
    def tint(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.raw_tint))


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, got |d| = {n}")


@dataclass
class SplatHit:
    u: float
    v: float
    depth: float
    weight: float


def surfel_plane_normal(surfel: Surfel) -> np.ndarray:
    """Unoriented disk normal t_u x t_v."""
    return np.cross(surfel.t_u, surfel.t_v)


def surfel_normal(surfel: Surfel, view_dir: np.ndarray) -> np.ndarray:
    """Disk normal oriented toward the viewer (n . view_dir >= 0)."""
    n = surfel_plane_normal(surfel)
    n = n / np.linalg.norm(n)
    if float(np.dot(n, view_dir)) < 0.0:
        n = -n
    return n


def ray_splat_intersect(ray: Ray, surfel: Surfel, near_epsilon: float = NEAR_EPSILON):
    """Intersect a ray with the surfel's disk plane.

    Returns a SplatHit with scaled UV coordinates and Gaussian weight, or
    None when the ray is parallel to the plane, the hit lies behind
    near_epsilon, or the hit falls outside the disk's 3-sigma support.
    """
    n = surfel_plane_normal(surfel)
    denom = float(np.dot(ray.direction, n))
    if abs(denom) < PARALLEL_EPSILON:
        return None
    t = float(np.dot(surfel.center - ray.origin, n)) / denom
    if t <= near_epsilon:
        return None
    p = ray.origin + t * ray.direction
    d = p - surfel.center
    s_u, s_v = surfel.scales
    u = float(np.dot(d, surfel.t_u)) / s_u
    v = float(np.dot(d, surfel.t_v)) / s_v
    if u * u + v * v > CUTOFF_SIGMA * CUTOFF_SIGMA:
        return None
    return SplatHit(u=u, v=v, depth=t, weight=gaussian_weight(u, v))


class SurfelCloud:
    """Batched surfel parameters as torch tensors, the unit of optimization.

    All tensors have leading dimension N. Raw parameters are stored
    unconstrained; activated properties are computed on the fly.
    """

    PARAM_NAMES = ("centers", "rotations", "log_scales", "raw_opacity",
                   "raw_diffuse", "raw_roughness", "raw_tint", "features")

    def __init__(self, centers, rotations, log_scales, raw_opacity,
                 raw_diffuse, raw_roughness, raw_tint, features):
        self.centers = centers          # (N, 3)
        self.rotations = rotations      # (N, 4) quaternions (w, x, y, z)
        self.log_scales = log_scales    # (N, 2)
        self.raw_opacity = raw_opacity  # (N,)
        self.raw_diffuse = raw_diffuse  # (N, 3)
        self.raw_roughness = raw_roughness  # (N,)
        self.raw_tint = raw_tint        # (N, 3)
        self.features = features        # (N, F_k)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_surfels(cls, surfels: list[Surfel], dtype=torch.float64) -> "SurfelCloud":
        def stack(attr):
            return torch.tensor(np.stack([np.atleast_1d(getattr(s, attr)) for s in surfels]), dtype=dtype)
        return cls(
            centers=stack("center"),
            rotations=stack("rotation"),
            log_scales=stack("log_scales"),
            raw_opacity=stack("raw_opacity").squeeze(-1),
            raw_diffuse=stack("raw_diffuse"),
            raw_roughness=stack("raw_roughness").squeeze(-1),
            raw_tint=stack("raw_tint"),
            features=stack("feature"),
        )

    def parameters(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def requires_grad_(self, flag: bool = True) -> "SurfelCloud":
        for p in self.parameters().values():
            p.requires_grad_(flag)
        return self

    def clone(self) -> "SurfelCloud":
        return SurfelCloud(**{k: v.detach().clone() for k, v in self.parameters().items()})

    # -- activated properties ------------------------------------------------

    def frames(self) -> torch.Tensor:
        """(N, 3, 3) rotation matrices; columns are t_u, t_v, n."""
        return quat_to_rotmat(self.rotations)

    def tangents(self):
        R = self.frames()
        return R[:, :, 0], R[:, :, 1]

    def plane_normals(self) -> torch.Tensor:
        """(N, 3) unoriented normals t_u x t_v (third frame column)."""
        return self.frames()[:, :, 2]

    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    def opacity(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_opacity)

    def diffuse(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_diffuse)

    def roughness(self) -> torch.Tensor:
        return RHO_MIN + (1.0 - RHO_MIN) * torch.sigmoid(self.raw_roughness)

    def tint(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_tint)

    def renormalize_rotations_(self):
        """Post-optimizer projection back to unit quaternions."""
        with torch.no_grad():
            self.rotations /= self.rotations.norm(dim=-1, keepdim=True)
