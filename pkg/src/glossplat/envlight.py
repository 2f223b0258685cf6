"""Learnable HDR environment light: roughness-prefiltered cube mipmap and
the split-sum deferred shading that assembles per-pixel specular radiance.

Prefiltering is a fixed linear operator per level (GGX-importance sample
positions and weights are precomputed from a deterministic low-discrepancy
sequence), so backpropagation through it is exact: level texels are sparse
linear combinations of base texels.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .cameras import Camera
from .cubemap import all_texel_dirs, bilinear_taps_np, sample_cubemap
from .rasterize import GBuffer


def reflect_dir(wo, n):
    """Mirror reflection of the view direction about the normal."""
    if isinstance(wo, torch.Tensor):
        return 2.0 * (wo * n).sum(-1, keepdim=True) * n - wo
    wo = np.asarray(wo, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * np.sum(wo * n, axis=-1, keepdims=True) * n - wo


# -- deterministic sample sequence ------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def _radical_inverse_2(i: np.ndarray) -> np.ndarray:
    i = i.astype(np.uint32)
    i = ((i << np.uint32(16)) | (i >> np.uint32(16)))
    i = ((i & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((i & np.uint32(0xFF00FF00)) >> np.uint32(8))
    i = ((i & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((i & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    i = ((i & np.uint32(0x33333333)) << np.uint32(2)) | ((i & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    i = ((i & np.uint32(0x55555555)) << np.uint32(1)) | ((i & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    return i.astype(np.float64) * 2.0 ** -32


def scrambled_hammersley(n_points: int, seed: int, level: int, texel: np.ndarray):
    """(u1, u2) arrays of shape (len(texel), n_points); Cranley-Patterson
    rotated Hammersley, a pure function of (seed, level, texel, sample)."""
    key = _splitmix64(np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x100000001)
                      + np.uint64(level))
    h = _splitmix64(key + texel.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
    off1 = (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    off2 = (_splitmix64(h) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    s = np.arange(n_points)
    u1 = (s[None, :] / n_points + off1[:, None]) % 1.0
    u2 = (_radical_inverse_2(s)[None, :] + off2[:, None]) % 1.0
    return u1, u2


def _ggx_sample_dirs(n_dirs: np.ndarray, alpha: float, u1, u2):
    """Importance-sample reflected directions around n (= view) for GGX NDF.

    n_dirs: (T, 3); u1, u2: (T, S). Returns light dirs (T, S, 3) and
    n-dot-l weights clamped at zero.
    """
    phi = 2.0 * np.pi * u1
    ct = np.sqrt(np.clip((1.0 - u2) / (1.0 + (alpha * alpha - 1.0) * u2), 0.0, 1.0))
    st = np.sqrt(np.clip(1.0 - ct * ct, 0.0, 1.0))
    h_local = np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=-1)  # (T, S, 3)

    up = np.where(np.abs(n_dirs[:, 2:3]) < 0.999,
                  np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(up, n_dirs)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n_dirs, t1)
    h = (h_local[..., 0:1] * t1[:, None, :] + h_local[..., 1:2] * t2[:, None, :]
         + h_local[..., 2:3] * n_dirs[:, None, :])
    v = n_dirs[:, None, :]
    l = 2.0 * np.sum(v * h, axis=-1, keepdims=True) * h - v
    w = np.clip(np.sum(v * l, axis=-1), 0.0, None)
    return l, w


class PrefilterOperator:
    """Sparse linear maps from base texels to each prefiltered level."""

    def __init__(self, res: int, n_levels: int, samples_per_texel: int, seed: int):
        if n_levels < 2:
            raise ValueError("prefiltering needs at least 2 levels")
        if samples_per_texel < 32:
            raise ValueError("samples_per_texel must be >= 32")
        self.res = res
        self.n_levels = n_levels
        self.samples_per_texel = samples_per_texel
        self.seed = seed
        self.level_res = [max(res >> l, 1) for l in range(n_levels)]
        self.matrices = [self._build_level(l) for l in range(1, n_levels)]

    def _build_level(self, level: int) -> torch.Tensor:
        res_l = self.level_res[level]
        rho = level / (self.n_levels - 1)
        alpha = rho * rho
        dirs = all_texel_dirs(res_l).reshape(-1, 3)      # (T, 3)
        n_tex = dirs.shape[0]
        spp = self.samples_per_texel
        u1, u2 = scrambled_hammersley(spp, self.seed, level, np.arange(n_tex))
        l_dirs, w = _ggx_sample_dirs(dirs, alpha, u1, u2)

        wsum = w.sum(axis=1)
        degenerate = wsum <= 0.0
        if degenerate.any():
            # all samples below the horizon: fall back to the mirror direction
            l_dirs[degenerate, 0] = dirs[degenerate]
            w[degenerate, 0] = 1.0
            wsum = w.sum(axis=1)
        w = w / wsum[:, None]

        taps, tap_w = bilinear_taps_np(l_dirs.reshape(-1, 3), self.res)
        n_taps = taps.shape[-1]
        rows = np.repeat(np.arange(n_tex), spp * n_taps)
        cols = taps.reshape(-1)
        vals = (w.reshape(-1, 1) * tap_w).reshape(-1)
        keep = vals != 0.0
        mat = torch.sparse_coo_tensor(
            torch.from_numpy(np.stack([rows[keep], cols[keep]])),
            torch.from_numpy(vals[keep]),
            size=(n_tex, 6 * self.res * self.res), dtype=torch.float64,
            check_invariants=False)
        return mat.coalesce()

    def apply(self, base: torch.Tensor) -> list[torch.Tensor]:
        """Base faces (6, R, R, 3) -> list of level tensors, level 0 == base."""
        flat = base.reshape(-1, 3)
        levels = [base]
        for l, mat in enumerate(self.matrices, start=1):
            r = self.level_res[l]
            levels.append(torch.sparse.mm(mat, flat).reshape(6, r, r, 3))
        return levels


_OPERATOR_CACHE: dict[tuple, PrefilterOperator] = {}


def get_prefilter_operator(res, n_levels, samples_per_texel, seed) -> PrefilterOperator:
    key = (res, n_levels, samples_per_texel, seed)
    if key not in _OPERATOR_CACHE:
        _OPERATOR_CACHE[key] = PrefilterOperator(res, n_levels, samples_per_texel, seed)
    return _OPERATOR_CACHE[key]


def default_level_count(res: int) -> int:
    return int(math.log2(res)) + 1


class EnvCubeMipmap:
    """HDR environment as a cube map with roughness-indexed mip levels."""

    def __init__(self, levels: list[torch.Tensor]):
        self.levels = levels

    @property
    def base(self) -> torch.Tensor:
        return self.levels[0]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def sample(self, dirs: torch.Tensor, rho: torch.Tensor,
               single_level: bool = False) -> torch.Tensor:
        """Trilinear lookup: bilinear per face, linear across levels in rho."""
        if single_level or self.n_levels == 1:
            return sample_cubemap(self.levels[0], dirs)
        L = self.n_levels
        lam = rho.clamp(0.0, 1.0) * (L - 1)
        l0 = lam.detach().floor().long().clamp(0, L - 2)
        frac = (lam - l0).clamp(0.0, 1.0)
        out = torch.zeros(dirs.shape[:-1] + (3,), dtype=dirs.dtype)
        for l in range(L):
            need = (l0 == l) | (l0 == l - 1)
            if not need.any():
                continue
            smp = sample_cubemap(self.levels[l], dirs[need])
            wgt = torch.where(l0 == l, 1.0 - frac, frac)[need]
            out[need] = out[need] + smp * wgt.unsqueeze(-1)
        return out


def prefilter_env(base: torch.Tensor, n_levels: int | None = None,
                  samples_per_texel: int = 64, seed: int = 0,
                  operator: PrefilterOperator | None = None) -> EnvCubeMipmap:
    """Build a prefiltered mipmap from base faces (6, R, R, 3).

    Level l targets roughness l / (n_levels - 1) with a GGX kernel of
    alpha = rho^2; weights are fixed by (seed, level, texel) so the result
    is reproducible bit for bit and linear in the base.
    """
    if not torch.isfinite(base).all():
        raise ValueError("environment base contains non-finite values")
    res = base.shape[1]
    if n_levels is None:
        n_levels = default_level_count(res)
    if operator is None:
        operator = get_prefilter_operator(res, n_levels, samples_per_texel, seed)
    return EnvCubeMipmap(operator.apply(base))


def shade_deferred(gb: GBuffer, camera: Camera, env: EnvCubeMipmap,
                   single_level: bool = False):
    """Per-pixel split-sum shading of a G-buffer.

    Returns (I_d, I_s) images (H, W, 3); uncovered pixels are zero.
    """
    _, dirs = camera.rays(dtype=gb.alpha.dtype)
    wo = -dirs
    covered = (gb.alpha > 0).unsqueeze(-1)
    n = gb.normal / gb.normal.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    wr = reflect_dir(wo, n)
    ls = env.sample(wr, gb.roughness, single_level=single_level)
    i_s = torch.where(covered, gb.tint * ls, torch.zeros_like(ls))
    i_d = gb.diffuse
    return i_d, i_s
