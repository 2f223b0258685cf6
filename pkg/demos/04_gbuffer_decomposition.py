"""Visualize the deferred-shading decomposition.

Renders the ground-truth toy sphere (no training needed) and writes every
G-buffer channel plus the shading decomposition: the final image is
alpha * (diffuse + specular) with an optional learned residual on top.
Outputs land in demos/out/04/.
"""

import pathlib
import sys

import torch

sys.path.insert(0, str(pathlib.Path(__file__).parent))
from _toy_scene import BLACK, glossy_sphere_model, ring_cameras

from glossplat.formats import save_png
from glossplat.pipeline import RenderOptions, render_view

OUT = pathlib.Path(__file__).parent / "out" / "04"
OUT.mkdir(parents=True, exist_ok=True)

model, _ = glossy_sphere_model()
cam = ring_cameras(8, res=160)[1]
with torch.no_grad():
    res = render_view(model, cam, RenderOptions(with_residual=False))

gb = res.gbuffer


def norm01(x):
    lo, hi = float(x.min()), float(x.max())
    return (x - lo) / (hi - lo) if hi > lo else torch.zeros_like(x)


layers = {
    "alpha": gb.alpha,
    "diffuse_albedo": gb.diffuse,
    "roughness": gb.roughness,
    "tint": gb.tint,
    "normal": (gb.normal * 0.5 + 0.5) * gb.alpha.unsqueeze(-1),
    "depth": norm01(torch.nan_to_num(gb.depth, nan=0.0)) * gb.alpha,
    "shading_diffuse": res.i_d,
    "shading_specular": res.i_s,
    "composite": res.composite(BLACK),
}
for name, img in layers.items():
    save_png(OUT / f"{name}.png", img.clamp(0, 1).numpy())
    print(f"wrote {name}.png")
print(f"outputs in {OUT}")
