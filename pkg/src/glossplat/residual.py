"""Directional residual pass: a learnable spherical feature mipmap sampled at
the reflected direction, combined with blended per-pixel features through an
outer product and decoded by a shallow MLP into a residual color image.

The residual only refines novel view synthesis; it is disabled for
relighting and material editing.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .cameras import Camera
from .cubemap import dir_to_spherical, sample_equirect
from .envlight import reflect_dir
from .rasterize import GBuffer


class SphericalFeatureMipmap:
    """Learnable equirect feature grids stacked along a roughness dimension.

    grid: (D, H, W, F); level d corresponds to roughness d / (D - 1).
    """

    def __init__(self, grid: torch.Tensor):
        if grid.shape[0] < 2:
            raise ValueError("spherical mipmap needs at least 2 roughness levels")
        self.grid = grid

    @classmethod
    def zeros(cls, depth=4, height=32, width=32, channels=16, dtype=torch.float64,
              init_scale=0.0, generator=None):
        g = torch.zeros(depth, height, width, channels, dtype=dtype)
        if init_scale > 0:
            g = torch.randn(g.shape, dtype=dtype, generator=generator) * init_scale
        return cls(g)

    @property
    def channels(self) -> int:
        return self.grid.shape[-1]


def sph_mip_encode(wr: torch.Tensor, rho: torch.Tensor,
                   mipmap: SphericalFeatureMipmap) -> torch.Tensor:
    """Trilinear lookup: bilinear on the equirect grid (phi wraps, theta
    clamps) and linear across roughness levels."""
    theta, phi = dir_to_spherical(wr)
    D = mipmap.grid.shape[0]
    lam = rho.clamp(0.0, 1.0) * (D - 1)
    l0 = lam.detach().floor().long().clamp(0, D - 2)
    frac = (lam - l0).clamp(0.0, 1.0)
    out = torch.zeros(wr.shape[:-1] + (mipmap.channels,), dtype=wr.dtype)
    for d in range(D):
        need = (l0 == d) | (l0 == d - 1)
        if not need.any():
            continue
        smp = sample_equirect(mipmap.grid[d], theta[need], phi[need])
        wgt = torch.where(l0 == d, 1.0 - frac, frac)[need]
        out[need] = out[need] + smp * wgt.unsqueeze(-1)
    return out


class ResidualMLP(nn.Module):
    """Two-hidden-layer ReLU decoder with a linear, zero-initialized output
    so training starts from a zero residual image."""

    def __init__(self, enc_dim: int, feat_dim: int, hidden: int = 256,
                 dtype=torch.float64, generator=None):
        super().__init__()
        self.enc_dim = enc_dim
        self.feat_dim = feat_dim
        in_dim = enc_dim + enc_dim * feat_dim
        self.fc1 = nn.Linear(in_dim, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, hidden, dtype=dtype)
        self.fc3 = nn.Linear(hidden, 3, dtype=dtype)
        if generator is not None:
            with torch.no_grad():
                for fc in (self.fc1, self.fc2):
                    bound = 1.0 / np.sqrt(fc.in_features)
                    fc.weight.uniform_(-bound, bound, generator=generator)
                    fc.bias.uniform_(-bound, bound, generator=generator)
        with torch.no_grad():
            self.fc3.weight.zero_()
            self.fc3.bias.zero_()
        self.linear_mode = False  # disables activations (bilinearity tests)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.linear_mode:
            return self.fc3(self.fc2(self.fc1(x)))
        return self.fc3(torch.relu(self.fc2(torch.relu(self.fc1(x)))))


def encoding_input(h: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """concat(h, outer(k, h)) with the outer product flattened row-major,
    k index major: flat[j * F + i] = k_j * h_i."""
    outer = k.unsqueeze(-1) * h.unsqueeze(-2)           # (..., F_k, F)
    return torch.cat([h, outer.reshape(h.shape[:-1] + (-1,))], dim=-1)


def residual_color(h: torch.Tensor, k: torch.Tensor, mlp: ResidualMLP) -> torch.Tensor:
    if h.shape[-1] != mlp.enc_dim or k.shape[-1] != mlp.feat_dim:
        raise ValueError("feature dimensions do not match the decoder")
    return mlp(encoding_input(h, k))


def render_residual_image(gb: GBuffer, camera: Camera,
                          mipmap: SphericalFeatureMipmap,
                          mlp: ResidualMLP) -> torch.Tensor:
    """Residual image I_r, scaled by accumulated alpha so it vanishes on
    the background."""
    _, dirs = camera.rays(dtype=gb.alpha.dtype)
    wo = -dirs
    n = gb.normal / gb.normal.norm(dim=-1, keepdim=True).clamp(min=1e-12)
    wr = reflect_dir(wo, n)
    h = sph_mip_encode(wr, gb.roughness, mipmap)
    c = residual_color(h, gb.feature, mlp)
    return c * gb.alpha.unsqueeze(-1)


# -- spherical-harmonics residual (ablation alternative) ---------------------

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


def sh_basis(dirs: torch.Tensor) -> torch.Tensor:
    """Real spherical harmonics basis up to degree 3 -> (..., 16)."""
    x, y, z = dirs.unbind(-1)
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    return torch.stack([
        torch.full_like(x, SH_C0),
        -SH_C1 * y, SH_C1 * z, -SH_C1 * x,
        SH_C2[0] * xy, SH_C2[1] * yz, SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz, SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy), SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy), SH_C3[6] * x * (xx - 3.0 * yy),
    ], dim=-1)


def sh_residual(view_dirs: torch.Tensor, coeffs: torch.Tensor) -> torch.Tensor:
    """Per-surfel SH color: basis(view_dir) dotted with coefficients.

    view_dirs: (N, 3) unit; coeffs: (N, 16, 3). Returns (N, 3).
    """
    basis = sh_basis(view_dirs)                       # (N, 16)
    return (basis.unsqueeze(-1) * coeffs).sum(dim=1)
