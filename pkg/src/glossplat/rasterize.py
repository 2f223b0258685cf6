"""Depth-sorted alpha blending of surfels into a multi-channel G-buffer.

Traversal is tile-based: surfels are conservatively binned to 16x16 pixel
tiles via the projected corners of their 3-sigma support rectangle. Because
per-pixel inclusion is decided solely by the u^2+v^2 <= 9 cutoff, the output
is independent of the tiling; binning only prunes work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .cameras import Camera
from .surfels import CUTOFF_SIGMA, NEAR_EPSILON, PARALLEL_EPSILON, SurfelCloud

SKIP_ALPHA = 1.0 / 255.0        # contributions below this are dropped (3DGS practice)
STOP_TRANSMITTANCE = 1e-4       # early termination of front-to-back accumulation
TILE = 16


@dataclass
class GBuffer:
    diffuse: torch.Tensor     # (H, W, 3)
    roughness: torch.Tensor   # (H, W)
    tint: torch.Tensor        # (H, W, 3)
    feature: torch.Tensor     # (H, W, F_k)
    normal: torch.Tensor      # (H, W, 3), blended, not renormalized
    alpha: torch.Tensor       # (H, W)
    depth: torch.Tensor       # (H, W), alpha-weighted mean ray parameter
    extra: dict = field(default_factory=dict)  # optional blended channels


@dataclass
class TileRecord:
    """Per-tile blending internals retained for the regularization losses."""
    rows: slice
    cols: slice
    weights: torch.Tensor   # (P, M)
    depths: torch.Tensor    # (P, M) ray parameters of each intersection
    normals: torch.Tensor   # (P, M, 3) viewer-oriented surfel normals


@dataclass
class BlendRecords:
    height: int
    width: int
    tiles: list[TileRecord] = field(default_factory=list)


def sort_surfels(cloud: SurfelCloud, camera: Camera) -> np.ndarray:
    """Indices sorted ascending by center depth along the view axis (stable)."""
    with torch.no_grad():
        depths = camera.view_depths(cloud.centers).numpy()
    return np.argsort(depths, kind="stable")


def _bin_surfels(cloud: SurfelCloud, camera: Camera, tile: int) -> list[np.ndarray]:
    """Conservative surfel lists per tile, from projected 3-sigma corners."""
    with torch.no_grad():
        centers = cloud.centers.numpy()
        R = cloud.frames().numpy()
        s = cloud.scales().numpy()
    eu = (CUTOFF_SIGMA * s[:, 0])[:, None] * R[:, :, 0]
    ev = (CUTOFF_SIGMA * s[:, 1])[:, None] * R[:, :, 1]
    corners = (centers[:, None, :]
               + np.stack([eu + ev, eu - ev, -eu + ev, -eu - ev], axis=1))  # (N, 4, 3)
    n = centers.shape[0]
    flat = corners.reshape(-1, 3)
    z = (flat - camera.origin) @ camera.forward
    px = camera.project(flat).reshape(n, 4, 2)
    z = z.reshape(n, 4)

    nt_x = (camera.width + tile - 1) // tile
    nt_y = (camera.height + tile - 1) // tile
    bins: list[list[int]] = [[] for _ in range(nt_x * nt_y)]
    behind = (z <= 1e-3).any(axis=1)
    lo = np.floor(np.nan_to_num(px.min(axis=1), nan=0.0)).astype(int)
    hi = np.ceil(np.nan_to_num(px.max(axis=1), nan=1e9)).astype(int)
    for i in range(n):
        if behind[i]:
            tx0, tx1, ty0, ty1 = 0, nt_x, 0, nt_y  # corner near/behind camera: no safe bound
        else:
            tx0 = max(lo[i, 0] // tile, 0)
            ty0 = max(lo[i, 1] // tile, 0)
            tx1 = min(hi[i, 0] // tile + 1, nt_x)
            ty1 = min(hi[i, 1] // tile + 1, nt_y)
        for ty in range(ty0, ty1):
            for tx in range(tx0, tx1):
                bins[ty * nt_x + tx].append(i)
    return [np.asarray(b, dtype=np.int64) for b in bins]


def _blend_tile(cloud, props_sorted, origin, dirs, cand, pos, n_total):
    """Alpha-blend candidate surfels (already depth-sorted) into tile pixels.

    dirs: (P, 3) unit ray directions; cand holds global surfel indices in
    depth order and pos their positions in the full sorted list. The channel
    reductions run over the full sorted width n_total (with zeros scattered
    at non-candidates) so the floating-point summation order -- and hence the
    output -- is bitwise independent of how surfels were binned to tiles.
    Returns per-pixel channel sums plus the raw (weights, depths, oriented
    normals) used by the loss records.
    """
    R = cloud.frames()[cand]                     # (M, 3, 3)
    t_u, t_v, n_s = R[:, :, 0], R[:, :, 1], R[:, :, 2]
    s = cloud.scales()[cand]                     # (M, 2)
    centers = cloud.centers[cand]                # (M, 3)
    alpha_s = cloud.opacity()[cand]              # (M,)

    denom = dirs @ n_s.T                          # (P, M)
    num = ((centers - origin) * n_s).sum(-1)      # (M,)
    safe_denom = torch.where(denom.abs() < PARALLEL_EPSILON,
                             torch.ones_like(denom), denom)
    t = num / safe_denom                          # (P, M)
    hit = (denom.abs() >= PARALLEL_EPSILON) & (t > NEAR_EPSILON)

    p = origin + t.unsqueeze(-1) * dirs.unsqueeze(1)          # (P, M, 3)
    d = p - centers
    u = (d * t_u).sum(-1) / s[:, 0]
    v = (d * t_v).sum(-1) / s[:, 1]
    r2 = u * u + v * v
    hit = hit & (r2 <= CUTOFF_SIGMA * CUTOFF_SIGMA)
    G = torch.where(hit, torch.exp(-0.5 * torch.clamp(r2, max=100.0)),
                    torch.zeros_like(r2))

    a = alpha_s * G
    a = torch.where(a >= SKIP_ALPHA, a, torch.zeros_like(a))
    trans = torch.cumprod(1.0 - a, dim=1)
    t_prev = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
    w = a * t_prev * (t_prev >= STOP_TRANSMITTANCE)

    # orient each surfel normal toward the viewer per pixel
    flip = torch.where((denom > 0), -torch.ones_like(denom), torch.ones_like(denom))
    n_pix = flip.unsqueeze(-1) * n_s.unsqueeze(0)             # (P, M, 3)

    P = dirs.shape[0]
    w_full = torch.zeros(P, n_total, dtype=w.dtype)
    w_full[:, pos] = w
    wn_full = torch.zeros(P, n_total, 3, dtype=w.dtype)
    wn_full[:, pos] = w.unsqueeze(-1) * n_pix
    wt_full = torch.zeros(P, n_total, dtype=w.dtype)
    wt_full[:, pos] = w * t

    out = {}
    for name, vals in props_sorted.items():
        out[name] = w_full @ vals                             # (P, C)
    out["alpha"] = w_full.sum(dim=1)
    out["normal"] = wn_full.sum(dim=1)
    zsum = wt_full.sum(dim=1)
    out["depth"] = torch.where(out["alpha"] > 0, zsum / out["alpha"].clamp(min=1e-12),
                               torch.zeros_like(zsum))
    return out, w, t, n_pix


def rasterize_gbuffer(cloud: SurfelCloud, camera: Camera, tile: int = TILE,
                      record: bool = False,
                      extra_props: dict[str, torch.Tensor] | None = None):
    """Render the G-buffer; optionally keep per-ray blend records for losses.

    Returns (GBuffer, BlendRecords or None).
    """
    H, W = camera.height, camera.width
    dtype = cloud.centers.dtype
    fk = cloud.feature_dim
    gb = GBuffer(
        diffuse=torch.zeros(H, W, 3, dtype=dtype),
        roughness=torch.zeros(H, W, dtype=dtype),
        tint=torch.zeros(H, W, 3, dtype=dtype),
        feature=torch.zeros(H, W, fk, dtype=dtype),
        normal=torch.zeros(H, W, 3, dtype=dtype),
        alpha=torch.zeros(H, W, dtype=dtype),
        depth=torch.zeros(H, W, dtype=dtype),
    )
    extra_props = extra_props or {}
    for name, vals in extra_props.items():
        gb.extra[name] = torch.zeros(H, W, vals.shape[1], dtype=dtype)
    records = BlendRecords(H, W) if record else None
    if cloud.n == 0:
        return gb, records

    order = sort_surfels(cloud, camera)
    bins = _bin_surfels(cloud, camera, tile)
    origin, dirs = camera.rays(dtype=dtype)

    props = {
        "diffuse": cloud.diffuse(),
        "roughness": cloud.roughness().unsqueeze(-1),
        "tint": cloud.tint(),
        "feature": cloud.features,
    }
    props.update(extra_props)
    order_t = torch.from_numpy(order)
    props_sorted = {name: vals[order_t] for name, vals in props.items()}

    nt_x = (W + tile - 1) // tile
    order_pos = np.empty_like(order)
    order_pos[order] = np.arange(len(order))
    for ty in range((H + tile - 1) // tile):
        for tx in range(nt_x):
            cand_raw = bins[ty * nt_x + tx]
            if cand_raw.size == 0:
                continue
            pos = np.sort(order_pos[cand_raw])
            cand = order[pos]
            rows = slice(ty * tile, min((ty + 1) * tile, H))
            cols = slice(tx * tile, min((tx + 1) * tile, W))
            tile_dirs = dirs[rows, cols].reshape(-1, 3)
            out, w, t, n_pix = _blend_tile(cloud, props_sorted, origin,
                                           tile_dirs, torch.from_numpy(cand),
                                           torch.from_numpy(pos), cloud.n)
            th, tw = rows.stop - rows.start, cols.stop - cols.start
            gb.diffuse[rows, cols] = out["diffuse"].reshape(th, tw, 3)
            gb.roughness[rows, cols] = out["roughness"].reshape(th, tw)
            gb.tint[rows, cols] = out["tint"].reshape(th, tw, 3)
            gb.feature[rows, cols] = out["feature"].reshape(th, tw, fk)
            gb.normal[rows, cols] = out["normal"].reshape(th, tw, 3)
            gb.alpha[rows, cols] = out["alpha"].reshape(th, tw)
            gb.depth[rows, cols] = out["depth"].reshape(th, tw)
            for name in extra_props:
                gb.extra[name][rows, cols] = out[name].reshape(th, tw, -1)
            if record:
                records.tiles.append(TileRecord(rows, cols, w, t, n_pix))
    return gb, records


def depth_to_normals(depth: torch.Tensor, alpha: torch.Tensor,
                     camera: Camera) -> torch.Tensor:
    """World-space normals from central differences of back-projected depth.

    Border pixels and pixels whose own or neighboring alpha is below 0.5
    yield the zero vector (undefined finite differences there).
    """
    origin, dirs = camera.rays(dtype=depth.dtype)
    pts = origin + depth.unsqueeze(-1) * dirs                  # (H, W, 3)
    H, W = depth.shape
    normals = torch.zeros(H, W, 3, dtype=depth.dtype)
    if H < 3 or W < 3:
        return normals
    dpdx = (pts[1:-1, 2:] - pts[1:-1, :-2]) / 2.0
    dpdy = (pts[2:, 1:-1] - pts[:-2, 1:-1]) / 2.0
    n = torch.cross(dpdx, dpdy, dim=-1)
    n = n / n.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    to_cam = origin - pts[1:-1, 1:-1]
    sign = torch.where((n * to_cam).sum(-1, keepdim=True) < 0, -1.0, 1.0)
    n = n * sign
    ok = (alpha[1:-1, 1:-1] >= 0.5) & (alpha[1:-1, 2:] >= 0.5) \
        & (alpha[1:-1, :-2] >= 0.5) & (alpha[2:, 1:-1] >= 0.5) \
        & (alpha[:-2, 1:-1] >= 0.5)
    normals[1:-1, 1:-1] = torch.where(ok.unsqueeze(-1), n, torch.zeros_like(n))
    return normals
