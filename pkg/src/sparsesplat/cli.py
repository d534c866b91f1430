"""Command-line surface.

Subcommands: render, evaluate, select-views, fit-demo, gen-scene,
diffuse-toy. Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import diffusion
from .errors import NumericError, SceneError, StageError, ValidationError
from .imageops import resize_bilinear
from .metrics import build_report, psnr, save_report_csv, save_report_json, ssim
from .pipeline import PipelineConfig, fit_demo, forward_pipeline, orbit_targets
from .rasterizer import rasterize, reference_rasterize, save_png, save_raw
from .scene_io import generate_synthetic_scene, load_scene
from .viewselect import SelectionPlan, evaluation_split, fps


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    if getattr(args, "no_refine", False):
        cfg.refine = False
    if getattr(args, "no_color_match", False):
        cfg.color_match = False
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_render(args) -> int:
    cfg = _load_config(args)
    scene = load_scene(args.scene)
    if args.plan:
        plan = SelectionPlan.load(args.plan)
        targets = None
    else:
        n_inputs = min(args.inputs, len(scene.views))
        input_idx = fps(scene.camera_positions(), n_inputs)
        plan = SelectionPlan(tuple(input_idx), (), len(scene.views))
        targets = orbit_targets([scene.views[i] for i in input_idx], args.targets)
    result = forward_pipeline(scene, plan, cfg, target_views=targets,
                              check=args.check)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (render, refined) in enumerate(zip(result.renders, result.refined)):
        save_png(out / f"raster_{i:04d}.png", render.rgb)
        save_png(out / f"refined_{i:04d}.png", refined)
        save_raw(out / f"raster_{i:04d}.raw", render)
    print(f"rendered {len(result.renders)} frames with {len(result.cloud)} gaussians "
          f"-> {out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    scene = load_scene(args.scene)
    if args.plan:
        plan = SelectionPlan.load(args.plan)
    else:
        targets = min(args.targets, len(scene.views) - args.inputs)
        plan = evaluation_split(scene.camera_positions(), n_span=args.span,
                                inputs=args.inputs, targets=targets)
    result = forward_pipeline(scene, plan, cfg, check=args.check)
    truth = [scene.views[i].image for i in plan.target_indices]
    psnrs = [psnr(img, gt) for img, gt in zip(result.refined, truth)]
    ssims = [ssim(img, gt) for img, gt in zip(result.refined, truth)]
    report = build_report(plan.target_indices, psnrs, ssims)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_report_json(out / "report.json", report)
    save_report_csv(out / "report.csv", report)
    print(f"evaluated {report['count']} views: "
          f"PSNR {report['mean_psnr']:.3f} dB, SSIM {report['mean_ssim']:.4f}")
    return 0


def _cmd_select_views(args) -> int:
    scene = load_scene(args.scene)
    plan = evaluation_split(scene.camera_positions(), n_span=args.span,
                            inputs=args.inputs, targets=args.targets)
    plan.save(args.out)
    print(f"plan: {len(plan.input_indices)} inputs, {len(plan.target_indices)} targets "
          f"-> {args.out}")
    return 0


def _cmd_fit_demo(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene_dir = out / "scene"
    scene, gt_cloud = generate_synthetic_scene(scene_dir, seed=args.seed,
                                               n_gaussians=args.splats, n_cameras=2,
                                               image_size=(args.size[0], args.size[1]))
    camera = scene.views[0]
    target = reference_rasterize(gt_cloud, camera).rgb
    rng = np.random.default_rng(args.seed + 1)
    init = gt_cloud.copy()
    init.sh_coeffs = init.sh_coeffs + 0.25 * rng.standard_normal(init.sh_coeffs.shape)
    init.opacities = np.clip(
        init.opacities + 0.1 * rng.standard_normal(len(init)), 0.05, 1.0)
    fitted, losses = fit_demo(target, init, camera, steps=args.steps, lr=args.lr)
    save_png(out / "target.png", target)
    save_png(out / "initial.png", rasterize(init, camera).rgb)
    save_png(out / "fitted.png", rasterize(fitted, camera).rgb)
    (out / "losses.json").write_text(
        "[" + ", ".join(f"{v:.8g}" for v in losses) + "]")
    print(f"fit: loss {losses[0]:.6g} -> {losses[-1]:.6g} "
          f"({100.0 * losses[-1] / losses[0]:.2f}% of initial) over {args.steps} steps")
    return 0


def _cmd_gen_scene(args) -> int:
    scene, cloud = generate_synthetic_scene(
        args.out, seed=args.seed, n_gaussians=args.gaussians,
        n_cameras=args.cameras, trajectory=args.trajectory,
        image_size=(args.height, args.width))
    print(f"scene with {len(scene.views)} cameras, {len(cloud)} gaussians -> {args.out}")
    return 0


def _cmd_diffuse_toy(args) -> int:
    h, w = args.size
    if h % 4 or w % 4:
        raise ValidationError("size must be divisible by 4")
    schedule = diffusion.make_schedule(args.schedule, args.schedule_steps)
    denoiser = diffusion.make_denoiser(args.denoiser, schedule)
    cond = diffusion.ConditionBundle(
        spatial=np.zeros((args.frames, 4, h // 4, w // 4)),
        global_embed=np.zeros(19))
    _, images = diffusion.sample(denoiser, cond, schedule, args.steps, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        down = resize_bilinear(np.moveaxis(img, -1, 0), h, w).transpose(1, 2, 0)
        save_png(out / f"sample_{i:04d}.png", np.clip(down, 0.0, 1.0))
    print(f"sampled {len(images)} frames in {args.steps} steps -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsesplat")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, plan=True):
        p.add_argument("--scene", required=True)
        if plan:
            p.add_argument("--plan")
        p.add_argument("--config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--no-refine", action="store_true")
        p.add_argument("--no-color-match", action="store_true")
        p.add_argument("--check", action="store_true")
        p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render novel views of a scene")
    common(p)
    p.add_argument("--inputs", type=int, default=5)
    p.add_argument("--targets", type=int, default=56)
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("evaluate", help="render held-out frames and score them")
    common(p)
    p.add_argument("--inputs", type=int, default=5)
    p.add_argument("--targets", type=int, default=56)
    p.add_argument("--span", type=int, default=None)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("select-views", help="emit a JSON selection plan")
    p.add_argument("--scene", required=True)
    p.add_argument("--inputs", type=int, default=5)
    p.add_argument("--targets", type=int, default=56)
    p.add_argument("--span", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_select_views)

    p = sub.add_parser("fit-demo", help="gradient-descent self-reconstruction demo")
    p.add_argument("--splats", type=int, default=100)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=40.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=(48, 48))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fit_demo)

    p = sub.add_parser("gen-scene", help="generate a synthetic scene on disk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=120)
    p.add_argument("--cameras", type=int, default=8)
    p.add_argument("--trajectory", choices=("orbit", "line"), default="orbit")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_scene)

    p = sub.add_parser("diffuse-toy", help="run the toy diffusion sampler")
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=(32, 48))
    p.add_argument("--denoiser", default="stencil")
    p.add_argument("--schedule", default="cosine")
    p.add_argument("--schedule-steps", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_diffuse_toy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ValidationError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        cause = exc.__cause__
        code = 3 if isinstance(cause, NumericError) else 2
        print(f"error: {exc}", file=sys.stderr)
        return code
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
