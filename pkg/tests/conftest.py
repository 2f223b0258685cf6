"""Shared fixtures: tiny gradcheck scenes and the self-consistency recovery
setup (ground truth rendered by the engine itself, then perturbed and
re-fit) used by the acceptance tests."""

import math
import time

import numpy as np
import pytest
import torch

from glossplat.cameras import Camera
from glossplat.pipeline import RenderOptions, SceneModel, render_view
from glossplat.scene import Scene, init_surfels
from glossplat.training import TrainConfig, build_model, train
from glossplat.cubemap import all_texel_dirs

BLACK = (0.0, 0.0, 0.0)


def lookat_c2w(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """OpenGL-convention camera-to-world: camera looks along -z, y up."""
    eye = np.asarray(eye, dtype=np.float64)
    z = eye - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, z, eye
    return c2w


def ring_cameras(n: int, radius=3.5, res=64, fov=0.8, phase=0.0,
                 elevations=(-0.35, 0.15, 0.55)) -> list:
    cams = []
    for i in range(n):
        az = phase + 2.0 * math.pi * i / n
        el = elevations[i % len(elevations)]
        eye = (radius * math.cos(el) * math.cos(az),
               radius * math.sin(el),
               radius * math.cos(el) * math.sin(az))
        cams.append(Camera.from_fov_x(fov, res, res, lookat_c2w(eye)))
    return cams


def _logit(p):
    return math.log(p / (1.0 - p))


def _inv_rough(rho, rho_min=0.02):
    f = (rho - rho_min) / (1.0 - rho_min)
    return math.log(f / (1.0 - f))


def structured_env(res=64) -> torch.Tensor:
    """Reference environment: sky gradient plus two strong light blobs.

    High contrast on purpose: sharp bright features give the photometric
    loss a strong restoring force on surfel normals through the glossy
    reflections."""
    dirs = all_texel_dirs(res).reshape(-1, 3)
    sky = 0.15 + 0.25 * (dirs[:, 1] + 1.0) / 2.0
    l1 = np.array([0.5, 0.7, 0.5]) / np.linalg.norm([0.5, 0.7, 0.5])
    l2 = np.array([-0.6, 0.2, -0.77]) / np.linalg.norm([-0.6, 0.2, -0.77])
    b1 = np.exp(-6.0 * np.sum((dirs - l1) ** 2, axis=1))
    b2 = np.exp(-8.0 * np.sum((dirs - l2) ** 2, axis=1))
    rgb = np.stack([sky + 1.8 * b1 + 0.6 * b2,
                    sky + 1.6 * b1 + 0.8 * b2,
                    0.8 * sky + 1.0 * b1 + 1.4 * b2], axis=-1)
    return torch.from_numpy(rgb.reshape(6, res, res, 3).copy())


def make_gt_model(n_surfels=200, patch_rho=0.1, base_rho=0.8, seed=7,
                  env_res=64, mip_cfg=(4, 32, 16), mlp_hidden=256,
                  residual_amp=0.0) -> SceneModel:
    """Sphere scene with known materials: a low-roughness cap (center
    direction +z) on an otherwise rough sphere, opaque, position-tinted."""
    cloud = init_surfels(n_surfels, radius=1.0, seed=seed)
    with torch.no_grad():
        c = cloud.centers
        cloud.raw_opacity.fill_(_logit(0.995))
        cloud.raw_diffuse.copy_(torch.logit(
            (0.25 + 0.5 * (c + 1.0) / 2.0).clamp(0.05, 0.95)))
        patch = c[:, 2] > 0.0
        rr = torch.full((n_surfels,), _inv_rough(base_rho), dtype=torch.float64)
        rr[patch] = _inv_rough(patch_rho)
        cloud.raw_roughness.copy_(rr)
        cloud.raw_tint.fill_(_logit(0.6))
    cfg = TrainConfig.desk(n_surfels=n_surfels, seed=seed, env_res=env_res,
                           mip_depth=mip_cfg[0], mip_res=mip_cfg[1],
                           mip_channels=mip_cfg[2], mlp_hidden=mlp_hidden)
    model = build_model(cfg, cloud=cloud)
    with torch.no_grad():
        model.env_base.copy_(structured_env(env_res))
        if residual_amp > 0:
            # give the ground truth a genuine directional residual so the
            # stage-2 pass has a real signal to recover (the MLP head is
            # zero-initialized by default, which would make the residual
            # identically zero)
            gen = torch.Generator().manual_seed(seed + 77)
            model.cloud.features.normal_(0.0, 1.0, generator=gen)
            model.mipmap.grid.normal_(0.0, 1.0, generator=gen)
            model.mlp.fc3.weight.normal_(0.0, residual_amp, generator=gen)
    return model


def render_gt_views(model: SceneModel, cameras, background=BLACK,
                    with_residual=False):
    """(rgb list, alpha list) of engine renders."""
    opts = RenderOptions(with_residual=with_residual)
    rgbs, alphas = [], []
    env = model.build_env()
    with torch.no_grad():
        for cam in cameras:
            res = render_view(model, cam, opts, env=env)
            rgbs.append(res.composite(background).clamp(0.0, 1.0))
            alphas.append(res.gbuffer.alpha.clamp(0.0, 1.0))
    return rgbs, alphas


def perturbed_start(gt_model: SceneModel, config: TrainConfig,
                    noise=0.3) -> SceneModel:
    """Training start: ground-truth geometry, materials jittered by uniform
    pre-activation noise, environment reset to constant gray."""
    cloud = gt_model.cloud.clone()
    gen = torch.Generator().manual_seed(config.seed + 1000)
    with torch.no_grad():
        for p in (cloud.raw_diffuse, cloud.raw_roughness, cloud.raw_tint):
            p.add_((torch.rand(p.shape, generator=gen, dtype=torch.float64)
                    * 2.0 - 1.0) * noise)
        cloud.features.zero_()
    model = build_model(config, cloud=cloud)
    with torch.no_grad():
        model.env_base.fill_(0.5)
    return model


def make_recovery_bundle(patch_rho=0.1, base_rho=0.8, seed=0, n_views=24,
                         res=48, stage1=2000, stage2=500, n_held=2,
                         residual_amp=0.0):
    """Everything criterion 2 needs: training scene, held-out views, the
    ground-truth model, and the training config (not yet trained)."""
    gt_model = make_gt_model(patch_rho=patch_rho, base_rho=base_rho,
                             residual_amp=residual_amp)
    cams = ring_cameras(n_views + n_held, radius=4.4, res=res)
    train_cams, held_cams = cams[:n_views], cams[n_views:]
    with_res = residual_amp > 0
    gt_rgb, gt_alpha = render_gt_views(gt_model, train_cams,
                                       with_residual=with_res)
    held_rgb, _ = render_gt_views(gt_model, held_cams, with_residual=with_res)
    scene = Scene(cameras=train_cams, gt_rgb=gt_rgb, gt_alpha=gt_alpha,
                  background=BLACK,
                  bounding_box=(np.array([-1.3, -1.3, -1.3]),
                                np.array([1.3, 1.3, 1.3])),
                  image_paths=[None] * n_views)
    config = TrainConfig.desk(n_surfels=gt_model.cloud.n, seed=seed,
                              stage1_iters=stage1, stage2_iters=stage2)
    config.views_per_iter = 3
    return {"gt_model": gt_model, "scene": scene,
            "held_cams": held_cams, "held_rgb": held_rgb, "config": config}


@pytest.fixture(scope="session")
def recovery_bundle():
    return make_recovery_bundle()


@pytest.fixture(scope="session")
def trained_recovery(recovery_bundle):
    """The criterion-2 training run, shared by criteria 2, 5, and 8."""
    bundle = recovery_bundle
    start = perturbed_start(bundle["gt_model"], bundle["config"])
    t0 = time.time()
    model, history = train(bundle["scene"], bundle["config"], model=start)
    return {"model": model, "history": history, "runtime": time.time() - t0,
            **bundle}


def build_gradcheck_fixture():
    """Criterion-1 fixture: 5 surfels near a plane, 16x16 image, env 8x8,
    mipmap 2x8x8x4, mlp width 8.  Parameter values keep every pixel clear
    of the hard coverage cutoffs so finite differences are well defined."""
    torch.manual_seed(0)
    cfg = TrainConfig(env_res=8, mip_depth=2, mip_res=8, mip_channels=4,
                      mlp_hidden=8, n_surfels=5, seed=3)
    model = build_model(cfg)
    cam = Camera.from_fov_x(0.8, 16, 16, lookat_c2w((0.0, 0.0, 4.0)))
    with torch.no_grad():
        model.cloud.centers.copy_(0.3 * torch.randn(5, 3, dtype=torch.float64))
        model.cloud.centers[:, 2] *= 0.1
        model.cloud.log_scales.fill_(math.log(0.5))
        model.cloud.raw_diffuse.uniform_(-0.5, 0.5)
        model.cloud.raw_roughness.uniform_(-0.5, 0.5)
        model.cloud.features.uniform_(-0.5, 0.5)
        model.mlp.fc3.weight.uniform_(-0.1, 0.1)
        model.mlp.fc3.bias.uniform_(-0.1, 0.1)
        model.env_base.copy_(0.3 + 0.4 * torch.rand(6, 8, 8, 3,
                                                    dtype=torch.float64))
    opts = RenderOptions(with_residual=True, record=True)
    bg = (0.25, 0.25, 0.25)
    with torch.no_grad():
        res0 = render_view(model, cam, opts)
        gt = (res0.composite(bg)
              + 0.02 * torch.randn_like(res0.i_d)).clamp(0.0, 1.0)
        gt_alpha = res0.gbuffer.alpha.clone().clamp(0.0, 1.0)
    return model, cam, opts, gt, gt_alpha, bg, cfg
