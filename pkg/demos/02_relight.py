"""Relight a fitted model under new environments.

Loads the checkpoint written by demo 01 (run that first), then renders the
sphere under three lights: the learned one, a warm sunset gradient, and a
single hard point light.  Relighting swaps the prefiltered environment and
disables the directional residual, which belongs to the training light.
Outputs land in demos/out/02/.
"""

import pathlib
import sys

import numpy as np
import torch

sys.path.insert(0, str(pathlib.Path(__file__).parent))
from _toy_scene import BLACK, ring_cameras

from glossplat.cubemap import all_texel_dirs
from glossplat.envlight import prefilter_env
from glossplat.formats import load_checkpoint, save_png
from glossplat.pipeline import RenderOptions, render_view

OUT = pathlib.Path(__file__).parent / "out" / "02"
OUT.mkdir(parents=True, exist_ok=True)
CKPT = pathlib.Path(__file__).parent / "out" / "01" / "sphere.ckpt"
if not CKPT.exists():
    sys.exit("run demos/01_fit_glossy_sphere.py first")

model, _ = load_checkpoint(CKPT)
res = model.env_res
dirs = torch.from_numpy(all_texel_dirs(res).reshape(-1, 3))


def sunset() -> torch.Tensor:
    h = ((dirs[:, 1] + 1.0) / 2.0).unsqueeze(-1)
    warm = torch.tensor([1.4, 0.6, 0.25], dtype=torch.float64)
    cool = torch.tensor([0.1, 0.15, 0.35], dtype=torch.float64)
    return ((1 - h) * warm + h * cool).reshape(6, res, res, 3)


def point_light() -> torch.Tensor:
    l = torch.tensor([0.6, 0.7, 0.4], dtype=torch.float64)
    l = l / l.norm()
    w = torch.exp(-80.0 * ((dirs - l) ** 2).sum(-1, keepdim=True))
    base = 0.05 + 12.0 * w * torch.tensor([1.0, 0.95, 0.85],
                                          dtype=torch.float64)
    return base.reshape(6, res, res, 3)


cams = ring_cameras(8, res=128)
lights = {"learned": model.env_base, "sunset": sunset(),
          "point": point_light()}
opts = RenderOptions(with_residual=False)
for name, base in lights.items():
    env = prefilter_env(base, model.env_levels, model.env_spp, model.env_seed)
    with torch.no_grad():
        for i in (0, 3):
            img = render_view(model, cams[i], opts, env=env)
            save_png(OUT / f"{name}_view{i}.png",
                     img.composite(BLACK).clamp(0, 1).numpy())
    print(f"rendered under '{name}' light")
print(f"wrote renders to {OUT}")
