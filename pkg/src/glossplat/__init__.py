"""Differentiable inverse rendering of glossy objects with 2D Gaussian
surfels, pixel-deferred split-sum image-based lighting, and a directional
residual refinement pass."""

from .cameras import Camera
from .envlight import EnvCubeMipmap, prefilter_env, reflect_dir, shade_deferred
from .losses import LossWeights
from .pipeline import RenderOptions, SceneModel, render_view
from .rasterize import GBuffer, depth_to_normals, rasterize_gbuffer, sort_surfels
from .residual import ResidualMLP, SphericalFeatureMipmap, render_residual_image
from .scene import Scene, init_surfels, load_scene
from .surfels import Ray, SplatHit, Surfel, SurfelCloud, gaussian_weight, ray_splat_intersect, surfel_normal
from .training import TrainConfig, gradcheck, train

__version__ = "0.1.0"

__all__ = [
    "Camera", "EnvCubeMipmap", "GBuffer", "LossWeights", "Ray",
    "RenderOptions", "ResidualMLP", "Scene", "SceneModel", "SplatHit",
    "SphericalFeatureMipmap", "Surfel", "SurfelCloud", "TrainConfig",
    "depth_to_normals", "gaussian_weight", "gradcheck", "init_surfels",
    "load_scene", "prefilter_env", "rasterize_gbuffer", "ray_splat_intersect",
    "reflect_dir", "render_residual_image", "render_view", "shade_deferred",
    "sort_surfels", "surfel_normal", "train",
]
