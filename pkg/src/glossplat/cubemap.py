"""Cube map and equirectangular geometry plus differentiable bilinear sampling.

Face order is +X, -X, +Y, -Y, +Z, -Z with the usual cube-map (s, t)
orientation; texel centers sit at ((i + 0.5) / R * 2 - 1) in face coords.
All per-face addressing is clamp-to-edge (no seam filtering).
"""

from __future__ import annotations

import numpy as np
import torch


def face_ab_to_dir(face, a, b):
    """Unnormalized direction for face coords a, b in [-1, 1]. numpy arrays."""
    one = np.ones_like(a)
    table = [
        lambda: np.stack([one, -b, -a], -1),
        lambda: np.stack([-one, -b, a], -1),
        lambda: np.stack([a, one, b], -1),
        lambda: np.stack([a, -one, -b], -1),
        lambda: np.stack([a, -b, one], -1),
        lambda: np.stack([-a, -b, -one], -1),
    ]
    out = np.zeros(a.shape + (3,))
    face = np.broadcast_to(face, a.shape)
    for f in range(6):
        m = face == f
        if m.any():
            out[m] = table[f]()[m]
    return out


def face_texel_dirs(face: int, res: int) -> np.ndarray:
    """(res, res, 3) unit directions of texel centers; rows index b, cols a."""
    c = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    b, a = np.meshgrid(c, c, indexing="ij")
    d = face_ab_to_dir(np.full(a.shape, face), a, b)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def all_texel_dirs(res: int) -> np.ndarray:
    """(6, res, res, 3) unit texel directions for a whole cube map."""
    return np.stack([face_texel_dirs(f, res) for f in range(6)])


def dir_to_face_ab_torch(d: torch.Tensor):
    """Map unit directions (..., 3) to (face index, a, b); differentiable in a, b."""
    x, y, z = d.unbind(-1)
    ax, ay, az = x.abs(), y.abs(), z.abs()
    ma = torch.maximum(torch.maximum(ax, ay), az).clamp(min=1e-30)
    axis = torch.where(az >= torch.maximum(ax, ay), 2,
                       torch.where(ay > ax, 1, 0))
    neg = torch.where(axis == 0, x < 0, torch.where(axis == 1, y < 0, z < 0))
    face = axis * 2 + neg.long()
    a = torch.where(face == 0, -z,
        torch.where(face == 1, z,
        torch.where(face == 5, -x, x))) / ma
    b = torch.where(face == 2, z,
        torch.where(face == 3, -z, -y)) / ma
    return face, a, b


def sample_cubemap(faces: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Bilinear clamp-to-edge sample of a cube map.

    faces: (6, R, R, C); dirs: (..., 3) need not be normalized.
    Differentiable with respect to both faces and dirs.
    """
    res = faces.shape[1]
    nch = faces.shape[-1]
    face, a, b = dir_to_face_ab_torch(dirs)
    xs = ((a + 1.0) * 0.5 * res - 0.5).clamp(0.0, res - 1.0)
    ys = ((b + 1.0) * 0.5 * res - 0.5).clamp(0.0, res - 1.0)
    x0 = xs.detach().floor().long().clamp(0, res - 2) if res > 1 else torch.zeros_like(xs).long()
    y0 = ys.detach().floor().long().clamp(0, res - 2) if res > 1 else torch.zeros_like(ys).long()
    fx = (xs - x0).clamp(0.0, 1.0)
    fy = (ys - y0).clamp(0.0, 1.0)
    if res == 1:
        return faces[face.reshape(-1), 0, 0].reshape(face.shape + (nch,))

    flat = faces.reshape(-1, nch)
    def tex(yy, xx):
        idx = (face * res + yy) * res + xx
        return flat[idx.reshape(-1)].reshape(idx.shape + (nch,))

    wx0, wy0 = (1 - fx).unsqueeze(-1), (1 - fy).unsqueeze(-1)
    wx1, wy1 = fx.unsqueeze(-1), fy.unsqueeze(-1)
    return (tex(y0, x0) * wy0 * wx0 + tex(y0, x0 + 1) * wy0 * wx1
            + tex(y0 + 1, x0) * wy1 * wx0 + tex(y0 + 1, x0 + 1) * wy1 * wx1)


def bilinear_taps_np(dirs: np.ndarray, res: int):
    """Clamp-to-edge bilinear taps of a cube map for numpy directions.

    Returns (indices (..., 4) into the flat 6*R*R texel array, weights (..., 4)).
    Mirrors sample_cubemap exactly; used to build the prefilter operator.
    """
    t = torch.from_numpy(np.ascontiguousarray(dirs))
    face, a, b = dir_to_face_ab_torch(t)
    face = face.numpy()
    a = a.numpy()
    b = b.numpy()
    xs = np.clip((a + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    ys = np.clip((b + 1.0) * 0.5 * res - 0.5, 0.0, res - 1.0)
    if res == 1:
        idx = face[..., None] * 1
        return idx.astype(np.int64), np.ones(face.shape + (1,))
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, res - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, res - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    base = face * res * res
    i00 = base + y0 * res + x0
    idx = np.stack([i00, i00 + 1, i00 + res, i00 + res + 1], axis=-1)
    w = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx], axis=-1)
    return idx, w


# -- spherical / equirectangular --------------------------------------------

def dir_to_spherical(d):
    """(theta, phi) with theta = acos(z) in [0, pi], phi = atan2(y, x)."""
    if isinstance(d, torch.Tensor):
        theta = torch.acos(d[..., 2].clamp(-1.0, 1.0))
        phi = torch.atan2(d[..., 1], d[..., 0])
    else:
        d = np.asarray(d)
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        phi = np.arctan2(d[..., 1], d[..., 0])
    return theta, phi


def spherical_to_dir(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def equirect_dirs(height: int, width: int) -> np.ndarray:
    """(H, W, 3) unit directions of equirect pixel centers."""
    theta = (np.arange(height) + 0.5) / height * np.pi
    phi = -np.pi + (np.arange(width) + 0.5) / width * 2.0 * np.pi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    return spherical_to_dir(th, ph)


def sample_equirect(grid: torch.Tensor, theta: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Bilinear sample of an equirect grid (H, W, C); phi wraps, theta clamps."""
    H, W, C = grid.shape
    ys = (theta / np.pi * H - 0.5).clamp(0.0, H - 1.0)
    xs = (phi + np.pi) / (2.0 * np.pi) * W - 0.5
    y0 = ys.detach().floor().long().clamp(0, max(H - 2, 0))
    fy = (ys - y0).clamp(0.0, 1.0)
    x0f = xs.detach().floor()
    fx = xs - x0f
    x0 = (x0f.long() % W + W) % W
    x1 = (x0 + 1) % W
    def tex(yy, xx):
        return grid.reshape(-1, C)[(yy * W + xx).reshape(-1)].reshape(yy.shape + (C,))
    y1 = (y0 + 1).clamp(max=H - 1)
    wy1 = fy.unsqueeze(-1)
    wx1 = fx.unsqueeze(-1)
    return (tex(y0, x0) * (1 - wy1) * (1 - wx1) + tex(y0, x1) * (1 - wy1) * wx1
            + tex(y1, x0) * wy1 * (1 - wx1) + tex(y1, x1) * wy1 * wx1)


def equirect_to_cube(equirect: torch.Tensor, res: int) -> torch.Tensor:
    """Resample an equirect HDR image (H, W, 3) to cube faces (6, res, res, 3)."""
    dirs = torch.from_numpy(all_texel_dirs(res))
    theta, phi = dir_to_spherical(dirs)
    return sample_equirect(equirect.to(torch.float64), theta, phi)


def cube_to_equirect(faces: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Resample cube faces (6, R, R, 3) to an equirect image (height, width, 3)."""
    dirs = torch.from_numpy(equirect_dirs(height, width))
    return sample_cubemap(faces, dirs)


def rotate_cubemap_90(faces: torch.Tensor, rot: np.ndarray) -> torch.Tensor:
    """Apply an axis-aligned 90-degree rotation to a cube map.

    rot must be a signed permutation matrix; the result is an exact texel
    permutation (output texel at direction d holds the input at rot^T d).
    """
    res = faces.shape[1]
    dirs = all_texel_dirs(res)
    src = dirs @ rot  # rot^T applied to each direction
    t = torch.from_numpy(src)
    face, a, b = dir_to_face_ab_torch(t)
    i = ((a + 1.0) * 0.5 * res - 0.5).round().long().clamp(0, res - 1)
    j = ((b + 1.0) * 0.5 * res - 0.5).round().long().clamp(0, res - 1)
    return faces[face, j, i]
