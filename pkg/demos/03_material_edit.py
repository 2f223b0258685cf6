"""Edit materials on a fitted model.

Loads the demo-01 checkpoint and renders three variants: the original,
a mirror-polished version (roughness forced to 0.02 everywhere), and a
matte chalk version (roughness 0.9, specular tint dimmed).  Edits act on
the pre-activation material parameters, so they survive checkpointing.
Outputs land in demos/out/03/.
"""

import math
import pathlib
import sys

import torch

sys.path.insert(0, str(pathlib.Path(__file__).parent))
from _toy_scene import BLACK, ring_cameras

from glossplat.formats import load_checkpoint, save_png
from glossplat.pipeline import RenderOptions, render_view

OUT = pathlib.Path(__file__).parent / "out" / "03"
OUT.mkdir(parents=True, exist_ok=True)
CKPT = pathlib.Path(__file__).parent / "out" / "01" / "sphere.ckpt"
if not CKPT.exists():
    sys.exit("run demos/01_fit_glossy_sphere.py first")


def inv_rough(rho, rho_min=0.02):
    f = (rho - rho_min) / (1.0 - rho_min)
    return math.log(f / (1.0 - f))


def variant(edit):
    model, _ = load_checkpoint(CKPT)
    with torch.no_grad():
        edit(model)
    return model


variants = {
    "original": variant(lambda m: None),
    "polished": variant(
        lambda m: m.cloud.raw_roughness.fill_(inv_rough(0.021))),
    "chalk": variant(lambda m: (m.cloud.raw_roughness.fill_(inv_rough(0.9)),
                                m.cloud.raw_tint.fill_(math.log(0.1 / 0.9)))),
}

cam = ring_cameras(8, res=128)[1]
# the residual models what the split-sum light misses for the *fitted*
# materials, so material edits render without it
opts = RenderOptions(with_residual=False)
for name, model in variants.items():
    with torch.no_grad():
        img = render_view(model, cam, opts)
    save_png(OUT / f"{name}.png", img.composite(BLACK).clamp(0, 1).numpy())
    print(f"rendered '{name}'")
print(f"wrote renders to {OUT}")
