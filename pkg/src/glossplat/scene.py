"""Scene loading (NeRF-synthetic transforms convention) and surfel
initialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .cameras import Camera
from .formats import load_png
from .surfels import SurfelCloud


@dataclass
class Scene:
    cameras: list[Camera]
    gt_rgb: list[torch.Tensor]            # (H, W, 3) composited over background
    gt_alpha: list[torch.Tensor] | None   # (H, W) or None when unavailable
    background: torch.Tensor              # (3,)
    bounding_box: tuple | None = None     # (min (3,), max (3,)) or None
    image_paths: list[str] = field(default_factory=list)

    @property
    def n_views(self) -> int:
        return len(self.cameras)


def load_scene(manifest_path, downsample: int | None = None) -> Scene:
    """Load a transforms-style manifest with RGBA PNG images.

    Recognized keys beyond the standard convention: background_color,
    bounding_box {min, max}, downsample, require_alpha.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        manifest = json.loads(f.read())
    fov_x = float(manifest["camera_angle_x"])
    background = torch.tensor(manifest.get("background_color", [0.0, 0.0, 0.0]),
                              dtype=torch.float64)
    require_alpha = bool(manifest.get("require_alpha", True))
    factor = downsample or int(manifest.get("downsample", 1))
    box = None
    if "bounding_box" in manifest:
        bb = manifest["bounding_box"]
        box = (np.asarray(bb["min"], dtype=np.float64),
               np.asarray(bb["max"], dtype=np.float64))

    cameras, rgbs, alphas, paths = [], [], [], []
    shape = None
    for frame in manifest["frames"]:
        img_path = manifest_path.parent / frame["file_path"]
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise FileNotFoundError(f"missing image file: {img_path}")
        img = load_png(img_path)
        if factor > 1:
            img = cv2.resize(img, (img.shape[1] // factor, img.shape[0] // factor),
                             interpolation=cv2.INTER_AREA)
        if img.ndim != 3 or img.shape[2] not in (3, 4):
            raise ValueError(f"expected RGB(A) image: {img_path}")
        if img.shape[2] == 3:
            if require_alpha:
                raise ValueError(f"image has no alpha channel but the scene "
                                 f"requires one: {img_path}")
            rgb, alpha = img, None
        else:
            rgb, alpha = img[:, :, :3], img[:, :, 3]
        if shape is None:
            shape = rgb.shape[:2]
        elif rgb.shape[:2] != shape:
            raise ValueError(f"image dimensions differ across views: {img_path}")

        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"transform_matrix must be 4x4 in {manifest_path}")
        R = c2w[:3, :3]
        if abs(abs(np.linalg.det(R)) - 1.0) > 1e-6:
            raise ValueError(f"malformed (non-rigid) transform for {img_path}")
        cameras.append(Camera.from_fov_x(fov_x, shape[1], shape[0], c2w))

        rgb_t = torch.from_numpy(np.ascontiguousarray(rgb))
        if alpha is not None:
            a_t = torch.from_numpy(np.ascontiguousarray(alpha))
            rgb_t = rgb_t * a_t.unsqueeze(-1) + background * (1.0 - a_t).unsqueeze(-1)
            alphas.append(a_t)
        rgbs.append(rgb_t)
        paths.append(str(img_path))

    if not cameras:
        raise ValueError(f"manifest has no frames: {manifest_path}")
    return Scene(cameras=cameras, gt_rgb=rgbs,
                 gt_alpha=alphas if alphas else None,
                 background=background, bounding_box=box, image_paths=paths)


def load_cameras(manifest_path, downsample: int | None = None) -> list[Camera]:
    """Cameras only (for novel-view rendering); image files need not exist if
    the manifest carries explicit width/height."""
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        manifest = json.loads(f.read())
    fov_x = float(manifest["camera_angle_x"])
    factor = downsample or int(manifest.get("downsample", 1))
    width, height = manifest.get("width"), manifest.get("height")
    cameras = []
    for frame in manifest["frames"]:
        if width is None:
            img_path = manifest_path.parent / frame["file_path"]
            if img_path.suffix == "":
                img_path = img_path.with_suffix(".png")
            img = load_png(img_path)
            height, width = img.shape[:2]
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        cameras.append(Camera.from_fov_x(fov_x, int(width) // factor,
                                         int(height) // factor, c2w))
    return cameras


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def _random_quats(n: int, gen: torch.Generator) -> torch.Tensor:
    q = torch.randn(n, 4, dtype=torch.float64, generator=gen)
    return q / q.norm(dim=-1, keepdim=True)


def _tangent_quats(normals: np.ndarray, gen: torch.Generator) -> torch.Tensor:
    """Quaternions whose third frame column matches the given normals, with a
    random in-plane rotation."""
    n = normals / np.linalg.norm(normals, axis=-1, keepdims=True)
    up = np.where(np.abs(n[:, 2:3]) < 0.999, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    t1 = np.cross(up, n)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    ang = torch.rand(len(n), generator=gen, dtype=torch.float64).numpy() * 2 * np.pi
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    tu = c * t1 + s * t2
    tv = -s * t1 + c * t2
    R = np.stack([tu, tv, n], axis=-1)  # columns t_u, t_v, n
    return torch.from_numpy(_rotmat_to_quat(R))


def _rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Batch rotation matrices (N, 3, 3) -> quaternions (N, 4), (w, x, y, z)."""
    out = np.zeros((len(R), 4))
    t = np.trace(R, axis1=1, axis2=2)
    for i, (m, tr) in enumerate(zip(R, t)):
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            out[i] = [0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            out[i] = [(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            out[i] = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            out[i] = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def init_surfels(n: int = 200, radius: float = 1.0, center=(0.0, 0.0, 0.0),
                 points: np.ndarray | None = None, seed: int = 0,
                 align_normals: bool = True) -> SurfelCloud:
    """Seed surfels on a sphere (or a supplied point cloud) with scales from
    nearest-neighbor spacing and mid-range material defaults."""
    gen = torch.Generator().manual_seed(seed)
    if points is None:
        pts = _fibonacci_sphere(n) * radius + np.asarray(center, dtype=np.float64)
        normals = pts - np.asarray(center, dtype=np.float64)
    else:
        pts = np.asarray(points, dtype=np.float64)
        n = len(pts)
        normals = None

    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    log_scales = np.log(np.maximum(nn * 0.7, 1e-6))[:, None].repeat(2, axis=1)

    if normals is not None and align_normals:
        quats = _tangent_quats(normals, gen)
    else:
        quats = _random_quats(n, gen)

    def const(val, shape):
        return torch.full(shape, val, dtype=torch.float64)

    return SurfelCloud(
        centers=torch.from_numpy(pts),
        rotations=quats,
        log_scales=torch.from_numpy(log_scales),
        raw_opacity=const(0.0, (n,)),                      # alpha = 0.5
        raw_diffuse=const(0.0, (n, 3)),                    # mid gray
        raw_roughness=const(_inv_rough(0.5), (n,)),
        raw_tint=const(_logit(0.3), (n, 3)),
        features=const(0.0, (n, 4)),
    )


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def _inv_rough(rho: float, rho_min: float = 0.02) -> float:
    return _logit((rho - rho_min) / (1.0 - rho_min))
