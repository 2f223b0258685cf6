"""Training losses: photometric (L1 + D-SSIM), normal consistency, depth
distortion, silhouette alpha, and the bounding-volume roughness penalty."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .rasterize import BlendRecords
from .surfels import SurfelCloud


@dataclass
class LossWeights:
    ssim_mix: float = 0.2        # D-SSIM share inside the photometric loss
    normal: float = 0.05
    distortion: float = 100.0
    alpha: float = 1.0


def _gaussian_window(size=11, sigma=1.5, dtype=torch.float64):
    x = torch.arange(size, dtype=dtype) - (size - 1) / 2.0
    g = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    g = g / g.sum()
    return g.outer(g)


def ssim(img_a: torch.Tensor, img_b: torch.Tensor, window_size=11, sigma=1.5) -> torch.Tensor:
    """Mean SSIM over pixels and channels, Gaussian-windowed, data range 1.

    Images are (H, W, C). For images smaller than the window, global
    statistics are used instead of windowed ones.
    """
    if img_a.shape != img_b.shape:
        raise ValueError("image shapes differ")
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w = img_a.shape[:2]
    if h < window_size or w < window_size:
        mu_a, mu_b = img_a.mean(), img_b.mean()
        va, vb = img_a.var(unbiased=False), img_b.var(unbiased=False)
        cov = ((img_a - mu_a) * (img_b - mu_b)).mean()
        return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
                / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))

    kern = _gaussian_window(window_size, sigma, img_a.dtype)
    nch = img_a.shape[2]
    kern = kern.expand(nch, 1, window_size, window_size)
    a = img_a.permute(2, 0, 1).unsqueeze(0)
    b = img_b.permute(2, 0, 1).unsqueeze(0)

    def filt(x):
        return F.conv2d(x, kern, groups=nch)

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filt(a * a) - mu_aa
    var_b = filt(b * b) - mu_bb
    cov = filt(a * b) - mu_ab
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return (num / den).mean()


def photometric_loss(img: torch.Tensor, gt: torch.Tensor,
                     ssim_mix: float = 0.2) -> torch.Tensor:
    """(1 - w) * L1 + w * D-SSIM on images clamped to [0, 1]."""
    if img.shape != gt.shape:
        raise ValueError("image shapes differ")
    a = img.clamp(0.0, 1.0)
    b = gt.clamp(0.0, 1.0)
    l1 = (a - b).abs().mean()
    if ssim_mix == 0.0:
        return l1
    dssim = (1.0 - ssim(a, b)) / 2.0
    return (1.0 - ssim_mix) * l1 + ssim_mix * dssim


def normal_consistency_loss(records: BlendRecords,
                            depth_normals: torch.Tensor) -> torch.Tensor:
    """Sum over intersections of w * (1 - n . N), averaged over pixels whose
    depth normal is defined (nonzero)."""
    total = depth_normals.new_zeros(())
    count = 0
    for tile in records.tiles:
        n_map = depth_normals[tile.rows, tile.cols].reshape(-1, 1, 3)
        valid = n_map.norm(dim=-1).squeeze(-1) > 0           # (P,)
        if not valid.any():
            continue
        cosine = (tile.normals * n_map).sum(-1)              # (P, M)
        per_pix = (tile.weights * (1.0 - cosine)).sum(-1)
        total = total + per_pix[valid].sum()
        count += int(valid.sum())
    return total / count if count else total


def depth_distortion_loss(records: BlendRecords,
                          depth_map=None) -> torch.Tensor:
    """Per ray, sum over intersection pairs of w_i w_j |z_i - z_j|, averaged
    over rays that have at least one intersection.

    `depth_map`, when given, is a monotone transform applied to the recorded
    depths first (training uses the camera's near/far-normalized depth so
    the regularizer is independent of scene units).

    Computed per ray on depth-sorted intersections via prefix sums:
    sum_{i<j} w_i w_j (z_j - z_i) = sum_j w_j (z_j W_{<j} - (wz)_{<j}),
    doubled to count both (i, j) orderings of the double sum.
    """
    total = None
    count = 0
    for tile in records.tiles:
        w, z = tile.weights, tile.depths
        if depth_map is not None:
            z = depth_map(z)
        if total is None:
            total = w.new_zeros(())
        has = (w.sum(-1) > 0)
        count += int(has.sum())
        order = torch.argsort(z.detach(), dim=1)
        zs = torch.gather(z, 1, order)
        ws = torch.gather(w, 1, order)
        wz = ws * zs
        w_before = torch.cumsum(ws, dim=1) - ws
        wz_before = torch.cumsum(wz, dim=1) - wz
        total = total + 2.0 * (ws * (zs * w_before - wz_before)).sum()
    if total is None:
        return torch.zeros(())
    return total / count if count else total


def alpha_loss(alpha: torch.Tensor, alpha_gt: torch.Tensor) -> torch.Tensor:
    if alpha.shape != alpha_gt.shape:
        raise ValueError("alpha map shapes differ")
    return (alpha - alpha_gt).abs().mean()


def total_loss(parts: dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    """Weighted sum L_c + ld * L_d + ln * L_n + la * L_a; extra parts (e.g.
    the roughness penalty) are added with weight 1."""
    for name, p in parts.items():
        if not torch.isfinite(p):
            raise FloatingPointError(f"non-finite loss part: {name}")
    out = parts["photometric"]
    if "distortion" in parts:
        out = out + weights.distortion * parts["distortion"]
    if "normal" in parts:
        out = out + weights.normal * parts["normal"]
    if "alpha" in parts:
        out = out + weights.alpha * parts["alpha"]
    for name in parts:
        if name not in ("photometric", "distortion", "normal", "alpha"):
            out = out + parts[name]
    return out


def bounding_volume_roughness_penalty(cloud: SurfelCloud, box,
                                      rho_target: float = 0.9) -> torch.Tensor:
    """Hinge on roughness for surfels whose center lies outside an AABB.

    box: (min_corner, max_corner) arrays of shape (3,).
    """
    lo = torch.as_tensor(box[0], dtype=cloud.centers.dtype)
    hi = torch.as_tensor(box[1], dtype=cloud.centers.dtype)
    with torch.no_grad():
        inside = ((cloud.centers >= lo) & (cloud.centers <= hi)).all(dim=-1)
    outside = ~inside
    if not outside.any():
        return cloud.centers.new_zeros(())
    rho = cloud.roughness()[outside]
    return torch.clamp(rho_target - rho, min=0.0).mean()
