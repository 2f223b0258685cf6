"""Full scene model and the three-pass render: G-buffer rasterization,
deferred split-sum shading, and the optional residual pass."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .cameras import Camera
from .envlight import EnvCubeMipmap, get_prefilter_operator, prefilter_env, shade_deferred, default_level_count
from .losses import (LossWeights, alpha_loss, bounding_volume_roughness_penalty,
                     depth_distortion_loss, normal_consistency_loss,
                     photometric_loss, total_loss)
from .rasterize import GBuffer, depth_to_normals, rasterize_gbuffer
from .residual import ResidualMLP, SphericalFeatureMipmap, render_residual_image, sh_residual
from .surfels import SurfelCloud


@dataclass
class RenderOptions:
    with_residual: bool = False
    sh_residual: bool = False
    single_level_env: bool = False
    record: bool = False


@dataclass
class RenderResult:
    gbuffer: GBuffer
    records: object
    i_d: torch.Tensor
    i_s: torch.Tensor
    i_r: torch.Tensor | None

    @property
    def image(self) -> torch.Tensor:
        img = self.i_d + self.i_s
        if self.i_r is not None:
            img = img + self.i_r
        return img

    def composite(self, background) -> torch.Tensor:
        """Image over a constant background color using accumulated alpha."""
        bg = torch.as_tensor(background, dtype=self.i_d.dtype)
        return self.image + (1.0 - self.gbuffer.alpha).unsqueeze(-1) * bg


class SceneModel:
    """All learnable state: surfels, environment base, residual components."""

    def __init__(self, cloud: SurfelCloud, env_base: torch.Tensor,
                 mipmap: SphericalFeatureMipmap, mlp: ResidualMLP,
                 env_levels: int | None = None, env_spp: int = 64,
                 env_seed: int = 0, sh_coeffs: torch.Tensor | None = None):
        self.cloud = cloud
        self.env_base = env_base
        self.mipmap = mipmap
        self.mlp = mlp
        self.env_levels = env_levels or default_level_count(env_base.shape[1])
        self.env_spp = env_spp
        self.env_seed = env_seed
        self.sh_coeffs = sh_coeffs

    @property
    def env_res(self) -> int:
        return self.env_base.shape[1]

    def build_env(self) -> EnvCubeMipmap:
        op = get_prefilter_operator(self.env_res, self.env_levels,
                                    self.env_spp, self.env_seed)
        return prefilter_env(self.env_base, self.env_levels, self.env_spp,
                             self.env_seed, operator=op)

    def parameters(self) -> dict[str, torch.Tensor]:
        params = dict(self.cloud.parameters())
        params["env_base"] = self.env_base
        params["mipmap"] = self.mipmap.grid
        for name, p in self.mlp.named_parameters():
            params[f"mlp.{name}"] = p
        if self.sh_coeffs is not None:
            params["sh_coeffs"] = self.sh_coeffs
        return params


def render_view(model: SceneModel, camera: Camera,
                options: RenderOptions = RenderOptions(),
                env: EnvCubeMipmap | None = None) -> RenderResult:
    extra = {}
    if options.sh_residual and model.sh_coeffs is not None:
        origin = torch.as_tensor(camera.origin, dtype=model.cloud.centers.dtype)
        vdirs = model.cloud.centers - origin
        vdirs = vdirs / vdirs.norm(dim=-1, keepdim=True).clamp(min=1e-12)
        extra["sh_color"] = sh_residual(vdirs, model.sh_coeffs)
    gb, records = rasterize_gbuffer(model.cloud, camera, record=options.record,
                                    extra_props=extra or None)
    if env is None:
        env = model.build_env()
    i_d, i_s = shade_deferred(gb, camera, env,
                              single_level=options.single_level_env)
    i_r = None
    if options.with_residual:
        i_r = render_residual_image(gb, camera, model.mipmap, model.mlp)
    elif options.sh_residual and model.sh_coeffs is not None:
        i_r = gb.extra["sh_color"]
    return RenderResult(gbuffer=gb, records=records, i_d=i_d, i_s=i_s, i_r=i_r)


def compute_losses(result: RenderResult, camera: Camera, gt_rgb: torch.Tensor,
                   gt_alpha: torch.Tensor | None, background,
                   weights: LossWeights,
                   regularize: bool = True) -> dict[str, torch.Tensor]:
    """Loss parts for one view; gt_rgb must already be composited over the
    same background color."""
    parts = {"photometric": photometric_loss(result.composite(background),
                                             gt_rgb, weights.ssim_mix)}
    if regularize and result.records is not None:
        dn = depth_to_normals(result.gbuffer.depth, result.gbuffer.alpha, camera)
        parts["normal"] = normal_consistency_loss(result.records, dn)
        parts["distortion"] = depth_distortion_loss(result.records,
                                                    camera.mapped_depth)
    if gt_alpha is not None:
        parts["alpha"] = alpha_loss(result.gbuffer.alpha, gt_alpha)
    return parts


def scene_total_loss(model: SceneModel, parts: dict, weights: LossWeights,
                     box=None) -> torch.Tensor:
    if box is not None:
        parts = dict(parts)
        parts["roughness_box"] = bounding_volume_roughness_penalty(model.cloud, box)
    return total_loss(parts, weights)
