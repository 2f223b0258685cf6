"""Shared setup for the demo scripts: a small glossy-sphere scene whose
ground truth is rendered by the engine itself, so every demo is
self-contained and runs in a few minutes on a laptop CPU."""

import math

import numpy as np
import torch

from glossplat.cameras import Camera
from glossplat.cubemap import all_texel_dirs
from glossplat.pipeline import RenderOptions, render_view
from glossplat.scene import Scene, init_surfels
from glossplat.training import TrainConfig, build_model

BLACK = (0.0, 0.0, 0.0)


def lookat_c2w(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)):
    eye = np.asarray(eye, dtype=np.float64)
    z = eye - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, np.cross(z, x), z, eye
    return c2w


def ring_cameras(n, radius=3.5, res=64, fov=0.8):
    cams = []
    for i in range(n):
        az = 2.0 * math.pi * i / n
        el = (-0.35, 0.15, 0.55)[i % 3]
        eye = (radius * math.cos(el) * math.cos(az), radius * math.sin(el),
               radius * math.cos(el) * math.sin(az))
        cams.append(Camera.from_fov_x(fov, res, res, lookat_c2w(eye)))
    return cams


def studio_env(res=64) -> torch.Tensor:
    """Sky gradient plus a warm key light and a cool rim light."""
    dirs = all_texel_dirs(res).reshape(-1, 3)
    sky = 0.2 + 0.4 * (dirs[:, 1] + 1.0) / 2.0
    key = np.exp(-6.0 * np.sum((dirs - np.array([0.43, 0.61, 0.43]) / 0.862) ** 2, 1))
    rim = np.exp(-8.0 * np.sum((dirs - np.array([-0.6, 0.2, -0.77])) ** 2, 1))
    rgb = np.stack([sky + 0.9 * key + 0.3 * rim, sky + 0.8 * key + 0.4 * rim,
                    0.8 * sky + 0.5 * key + 0.7 * rim], -1)
    return torch.from_numpy(rgb.reshape(6, res, res, 3).copy())


def glossy_sphere_model(n_surfels=200, env_res=64, seed=7,
                        patch_rho=0.1, base_rho=0.8):
    """Opaque sphere with a glossy cap facing +z and position-keyed color."""
    cloud = init_surfels(n_surfels, radius=1.0, seed=seed)
    with torch.no_grad():
        c = cloud.centers
        cloud.raw_opacity.fill_(math.log(0.995 / 0.005))
        cloud.raw_diffuse.copy_(torch.logit(
            (0.25 + 0.5 * (c + 1.0) / 2.0).clamp(0.05, 0.95)))
        rough = torch.full((n_surfels,), _inv_rough(base_rho),
                           dtype=torch.float64)
        rough[c[:, 2] > 0.45] = _inv_rough(patch_rho)
        cloud.raw_roughness.copy_(rough)
        cloud.raw_tint.fill_(math.log(0.6 / 0.4))
    cfg = TrainConfig.desk(n_surfels=n_surfels, seed=seed, env_res=env_res)
    model = build_model(cfg, cloud=cloud)
    with torch.no_grad():
        model.env_base.copy_(studio_env(env_res))
    return model, cfg


def _inv_rough(rho, rho_min=0.02):
    f = (rho - rho_min) / (1.0 - rho_min)
    return math.log(f / (1.0 - f))


def render_dataset(model, cameras, background=BLACK):
    opts = RenderOptions(with_residual=False)
    env = model.build_env()
    rgbs, alphas = [], []
    with torch.no_grad():
        for cam in cameras:
            res = render_view(model, cam, opts, env=env)
            rgbs.append(res.composite(background).clamp(0.0, 1.0))
            alphas.append(res.gbuffer.alpha.clamp(0.0, 1.0))
    return rgbs, alphas


def toy_training_scene(n_views=24, res=64, **model_kwargs):
    model, cfg = glossy_sphere_model(**model_kwargs)
    cams = ring_cameras(n_views + 2, res=res)
    rgbs, alphas = render_dataset(model, cams[:n_views])
    scene = Scene(cameras=cams[:n_views], gt_rgb=rgbs, gt_alpha=alphas,
                  background=BLACK,
                  bounding_box=(np.array([-1.3] * 3), np.array([1.3] * 3)),
                  image_paths=[None] * n_views)
    return model, cfg, scene, cams[n_views:]
