"""Command-line interface: train, render, relight, edit, eval, envmap export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from .cubemap import cube_to_equirect, equirect_to_cube
from .formats import (load_checkpoint, load_envmap, save_checkpoint, save_hdr,
                      save_pfm, save_png)
from .metrics import env_metrics, normal_mae, psnr, ssim, write_report
from .pipeline import RenderOptions, render_view
from .scene import load_cameras, load_scene
from .surfels import RHO_MIN
from .training import TrainConfig, train


def _render_views(model, cameras, background, out_dir, with_residual=True,
                  env=None, dump_gbuffer=False, write_hdr=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bg = torch.as_tensor(background, dtype=torch.float64)
    if env is None:
        env = model.build_env()
    opts = RenderOptions(with_residual=with_residual and model.mipmap is not None)
    results = []
    with torch.no_grad():
        for i, cam in enumerate(cameras):
            res = render_view(model, cam, opts, env=env)
            comp = res.composite(bg)
            save_png(out_dir / f"view_{i:03d}.png", comp.numpy())
            if write_hdr:
                save_pfm(out_dir / f"view_{i:03d}.pfm", comp.numpy())
            if dump_gbuffer:
                gb = res.gbuffer
                save_png(out_dir / f"view_{i:03d}_diffuse.png", res.i_d.numpy())
                save_png(out_dir / f"view_{i:03d}_specular.png", res.i_s.numpy())
                if res.i_r is not None:
                    save_png(out_dir / f"view_{i:03d}_residual.png",
                             (res.i_r.abs()).numpy())
                save_png(out_dir / f"view_{i:03d}_roughness.png",
                         gb.roughness.unsqueeze(-1).expand(-1, -1, 3).numpy())
                save_png(out_dir / f"view_{i:03d}_tint.png", gb.tint.numpy())
                save_png(out_dir / f"view_{i:03d}_normal.png",
                         (gb.normal.numpy() * 0.5 + 0.5))
                save_png(out_dir / f"view_{i:03d}_alpha.png",
                         gb.alpha.unsqueeze(-1).expand(-1, -1, 3).numpy())
            results.append(res)
    return results


def cmd_train(args):
    scene = load_scene(args.scene, downsample=args.downsample)
    if args.desk:
        config = TrainConfig.desk(seed=args.seed)
    else:
        config = TrainConfig(seed=args.seed)
    if args.iters_1 is not None:
        config.stage1_iters = args.iters_1
    if args.iters_2 is not None:
        config.stage2_iters = args.iters_2
    if args.env_res is not None:
        config.env_res = args.env_res
    if args.surfels is not None:
        config.n_surfels = args.surfels
    config.no_residual = args.no_residual
    config.single_level_env = args.single_level_env
    config.sh_residual = args.sh_residual
    log_path = args.log or (str(Path(args.out).with_suffix(".log.jsonl")))
    model, _ = train(scene, config, log_path=log_path, progress=args.verbose)
    save_checkpoint(args.out, model, config=vars_config(config))
    print(f"checkpoint written to {args.out}")
    return 0


def vars_config(config: TrainConfig) -> dict:
    d = dict(config.__dict__)
    d["weights"] = dict(config.weights.__dict__)
    return d


def cmd_render(args):
    model, _ = load_checkpoint(args.ckpt)
    cameras = load_cameras(args.views, downsample=args.downsample)
    background = _parse_color(args.background)
    _render_views(model, cameras, background, args.out,
                  with_residual=not args.no_residual,
                  dump_gbuffer=args.dump_gbuffer, write_hdr=args.hdr)
    return 0


def cmd_relight(args):
    model, _ = load_checkpoint(args.ckpt)
    if args.envmap is not None:
        equirect = torch.from_numpy(np.ascontiguousarray(load_envmap(args.envmap)))
        model.env_base = equirect_to_cube(equirect, model.env_res)
    cameras = load_cameras(args.views, downsample=args.downsample)
    background = _parse_color(args.background)
    _render_views(model, cameras, background, args.out, with_residual=False)
    return 0


def cmd_edit(args):
    model, _ = load_checkpoint(args.ckpt)
    with torch.no_grad():
        if args.roughness_scale != 1.0 or args.roughness_offset != 0.0:
            rho = model.cloud.roughness()
            rho = (rho * args.roughness_scale + args.roughness_offset).clamp(
                RHO_MIN, 1.0)
            frac = ((rho - RHO_MIN) / (1.0 - RHO_MIN)).clamp(1e-6, 1 - 1e-6)
            model.cloud.raw_roughness.copy_(torch.log(frac / (1.0 - frac)))
        if args.diffuse_tint:
            tint = torch.tensor(_parse_color(args.diffuse_tint),
                                dtype=torch.float64)
            cd = (model.cloud.diffuse() * tint).clamp(1e-6, 1 - 1e-6)
            model.cloud.raw_diffuse.copy_(torch.log(cd / (1.0 - cd)))
    cameras = load_cameras(args.views, downsample=args.downsample)
    background = _parse_color(args.background)
    _render_views(model, cameras, background, args.out, with_residual=False)
    return 0


def cmd_eval(args):
    model, _ = load_checkpoint(args.ckpt)
    scene = load_scene(args.scene, downsample=args.downsample)
    env = model.build_env()
    opts = RenderOptions(with_residual=not args.no_residual)
    records = []
    from .formats import load_pfm
    with torch.no_grad():
        for i, cam in enumerate(scene.cameras):
            res = render_view(model, cam, opts, env=env)
            comp = res.composite(scene.background).clamp(0, 1)
            gt = scene.gt_rgb[i].clamp(0, 1)
            rec = {"view": i, "psnr": psnr(comp, gt), "ssim": ssim(comp, gt)}
            if args.gt_normals:
                gt_n = torch.from_numpy(
                    np.ascontiguousarray(load_pfm(Path(args.gt_normals)
                                                  / f"normal_{i:03d}.pfm")))
                mask = (scene.gt_alpha[i] > 0.5 if scene.gt_alpha is not None
                        else res.gbuffer.alpha > 0.5)
                rec["normal_mae"] = normal_mae(res.gbuffer.normal, gt_n, mask)
            records.append(rec)
        agg = {k: float(np.mean([r[k] for r in records]))
               for k in records[0] if k != "view"}
        if args.gt_env:
            gt_env = torch.from_numpy(np.ascontiguousarray(load_envmap(args.gt_env)))
            he, we = args.env_height, 2 * args.env_height
            ours = cube_to_equirect(model.env_base, he, we)
            theirs = cube_to_equirect(
                equirect_to_cube(gt_env, model.env_res), he, we)
            e_psnr, e_ssim = env_metrics(ours, theirs)
            agg["e_psnr"], agg["e_ssim"] = e_psnr, e_ssim
    write_report(records, agg, args.out)
    print(f"report written to {args.out}")
    return 0


def cmd_envmap_export(args):
    model, _ = load_checkpoint(args.ckpt)
    height = args.height or 2 * model.env_res
    eq = cube_to_equirect(model.env_base, height, 2 * height)
    if str(args.out).lower().endswith(".pfm"):
        save_pfm(args.out, eq.numpy())
    else:
        save_hdr(args.out, eq.numpy())
    return 0


def _parse_color(text):
    if text is None:
        return (0.0, 0.0, 0.0)
    parts = [float(x) for x in str(text).split(",")]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise ValueError(f"expected r,g,b color, got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glossplat",
                                description="Inverse rendering of glossy "
                                "objects with 2D Gaussian surfels")
    sub = p.add_subparsers(dest="command", required=True)

    def common_render_flags(sp):
        sp.add_argument("--downsample", type=int, default=None)
        sp.add_argument("--background", default=None,
                        help="background color r,g,b (default black)")

    t = sub.add_parser("train", help="optimize a scene")
    t.add_argument("--scene", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--iters-1", type=int, default=None)
    t.add_argument("--iters-2", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-residual", action="store_true")
    t.add_argument("--single-level-env", action="store_true")
    t.add_argument("--sh-residual", action="store_true")
    t.add_argument("--env-res", type=int, default=None)
    t.add_argument("--surfels", type=int, default=None)
    t.add_argument("--desk", action="store_true",
                   help="desk-scale defaults (env 64, mipmap 4x32x32x16, "
                        "2000+500 iterations)")
    t.add_argument("--downsample", type=int, default=None)
    t.add_argument("--log", default=None)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render checkpoint views")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--views", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--dump-gbuffer", action="store_true")
    r.add_argument("--hdr", action="store_true", help="also write PFM HDR")
    r.add_argument("--no-residual", action="store_true")
    common_render_flags(r)
    r.set_defaults(func=cmd_render)

    rl = sub.add_parser("relight", help="render under a new environment map")
    rl.add_argument("--ckpt", required=True)
    rl.add_argument("--envmap", default=None,
                    help="equirect .hdr/.pfm; omitted: keep the learned env")
    rl.add_argument("--views", required=True)
    rl.add_argument("--out", required=True)
    common_render_flags(rl)
    rl.set_defaults(func=cmd_relight)

    e = sub.add_parser("edit", help="edit materials and render")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--views", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--roughness-scale", type=float, default=1.0)
    e.add_argument("--roughness-offset", type=float, default=0.0)
    e.add_argument("--diffuse-tint", default=None)
    common_render_flags(e)
    e.set_defaults(func=cmd_edit)

    ev = sub.add_parser("eval", help="compute metrics against a scene")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--scene", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--gt-normals", default=None)
    ev.add_argument("--gt-env", default=None)
    ev.add_argument("--env-height", type=int, default=32)
    ev.add_argument("--no-residual", action="store_true")
    ev.add_argument("--downsample", type=int, default=None)
    ev.set_defaults(func=cmd_eval)

    em = sub.add_parser("envmap", help="environment map utilities")
    em_sub = em.add_subparsers(dest="subcommand", required=True)
    ex = em_sub.add_parser("export", help="export the learned environment")
    ex.add_argument("--ckpt", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--height", type=int, default=None)
    ex.set_defaults(func=cmd_envmap_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
