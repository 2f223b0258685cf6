"""Evaluation metrics (PSNR, SSIM, normal MAE, environment-map metrics) and
the line-delimited JSON metrics report."""

from __future__ import annotations

import json
import math

import torch

from .losses import ssim as _ssim

PSNR_CAP = 100.0


def psnr(img: torch.Tensor, gt: torch.Tensor) -> float:
    """10 log10(1 / MSE) for range-[0,1] images, capped at 100 dB."""
    if img.shape != gt.shape:
        raise ValueError("image shapes differ")
    mse = float(((img - gt) ** 2).mean())
    if mse < 1e-10:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def ssim(img: torch.Tensor, gt: torch.Tensor) -> float:
    return float(_ssim(img, gt))


def normal_mae(normals: torch.Tensor, normals_gt: torch.Tensor,
               mask: torch.Tensor) -> float:
    """Mean angular error in degrees over masked pixels."""
    if normals.shape != normals_gt.shape:
        raise ValueError("normal map shapes differ")
    n = normals[mask]
    g = normals_gt[mask]
    n = n / n.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    g = g / g.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    ang = torch.acos((n * g).sum(-1).clamp(-1.0, 1.0))
    return float(ang.mean()) * 180.0 / math.pi


def env_metrics(env: torch.Tensor, env_gt: torch.Tensor):
    """(E-PSNR, E-SSIM) between equirect environment maps at a common size.

    Environment maps are HDR, so both metrics normalize by the reference
    map's data range (peak value, floored at 1); for a reference within
    [0, 1] this reduces to the plain image formulas.
    """
    if env.shape != env_gt.shape:
        raise ValueError("environment map shapes differ")
    rng = max(float(env_gt.max()), 1.0)
    return psnr(env / rng, env_gt / rng), ssim(env / rng, env_gt / rng)


def write_report(records: list[dict], aggregates: dict, path) -> None:
    """One JSON line per view plus a final aggregate line."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
        f.write(json.dumps({"aggregate": True, **aggregates}, sort_keys=True) + "\n")


def read_report(path):
    with open(path) as f:
        rows = [json.loads(line) for line in f if line.strip()]
    agg = [r for r in rows if r.get("aggregate")]
    views = [r for r in rows if not r.get("aggregate")]
    return views, (agg[-1] if agg else None)
