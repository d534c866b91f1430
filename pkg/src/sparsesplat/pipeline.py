"""End-to-end orchestration: features -> cost volumes -> depth -> Gaussians
-> target rasterization -> toy diffusion refinement -> color matching.

Also houses the reconstruction loss and a small gradient-descent
self-reconstruction demo that exercises the analytic backward pass.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion
from .costvolume import DepthMap, build_cost_volume, depth_from_volume
from .errors import NumericError, StageError, ValidationError
from .features import FeatureMap, get_extractor, local_group
from .gaussians import GaussianCloud, GaussianHead, build_gaussians
from .geometry import CameraView, depth_planes, look_at
from .imageops import resize_bilinear
from .postprocess import histogram_match
from .rasterizer import rasterize, rasterize_backward
from .viewselect import SelectionPlan


@dataclass
class PipelineConfig:
    """Knobs for the full forward pass; JSON round-trippable."""

    near: float | None = None      # None: take from the scene manifest
    far: float | None = None
    depth_layers: int = 32
    inverse_depth: bool = False
    feature_scale: int = 4
    group_size: int = 2
    sh_order: int = 0
    feature_channels: int = 4
    scale_gain: float = 1.0
    extractor: str = "builtin"
    embedder: str = "statistics"
    denoiser: str = "stencil"
    schedule: str = "cosine"
    schedule_steps: int = 1000
    sample_steps: int = 25
    window_size: int = 14
    seed: int = 0
    refine: bool = True
    color_match: bool = True

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1))

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class PipelineResult:
    renders: list            # RenderOutput per target
    refined: list            # final frames (H, W, 3) in [0, 1]
    input_indices: list
    target_views: list       # CameraView per target
    depth_maps: list         # per input view, image resolution
    cloud: GaussianCloud
    diagnostics: dict = field(default_factory=dict)


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc


def _upsample_depth(depth_map: DepthMap, h: int, w: int) -> DepthMap:
    return DepthMap(
        depth=np.clip(resize_bilinear(depth_map.depth, h, w),
                      depth_map.near, depth_map.far),
        confidence=np.clip(resize_bilinear(depth_map.confidence, h, w), 0.0, 1.0),
        near=depth_map.near, far=depth_map.far,
    )


def forward_pipeline(scene, plan: SelectionPlan, config: PipelineConfig,
                     target_views: list | None = None, check: bool = False) -> PipelineResult:
    """Run the full forward pass for one scene.

    Targets default to the scene frames named by ``plan``; pass
    ``target_views`` to render novel poses instead.
    """
    near = config.near if config.near is not None else scene.near
    far = config.far if config.far is not None else scene.far

    with _stage("select"):
        inputs = [scene.views[i] for i in plan.input_indices]
        if target_views is None:
            target_views = [scene.views[i] for i in plan.target_indices]
        if not inputs or not target_views:
            raise ValidationError("plan selects no inputs or no targets")

    with _stage("features"):
        extractor = get_extractor(config.extractor)
        feats = [extractor(v.image, config.feature_scale, view_index=i)
                 for i, v in enumerate(inputs)]

    with _stage("grouping"):
        positions = np.stack([v.pose.camera_center for v in inputs])
        group = local_group(positions, k=config.group_size)

    with _stage("cost-volume"):
        planes = depth_planes(near, far, config.depth_layers,
                              inverse=config.inverse_depth)
        depth_maps = []
        for i in range(len(inputs)):
            volume = build_cost_volume(i, feats, group, planes, inputs)
            depth_maps.append(depth_from_volume(volume))

    with _stage("gaussians"):
        head = GaussianHead(scale_gain=config.scale_gain, sh_order=config.sh_order,
                            feature_channels=config.feature_channels)
        clouds = []
        full_depths = []
        for view, feat, dm in zip(inputs, feats, depth_maps):
            h, w = view.intrinsics.height, view.intrinsics.width
            dm_full = _upsample_depth(dm, h, w)
            feat_full = FeatureMap(data=resize_bilinear(feat.data, h, w),
                                   view_index=feat.view_index)
            clouds.append(build_gaussians(dm_full, view, feat_full, head=head))
            full_depths.append(dm_full)
        cloud = GaussianCloud.concatenate(clouds)
        if check:
            cloud.validate()

    with _stage("render"):
        renders = [rasterize(cloud, tv) for tv in target_views]
        if check:
            for r in renders:
                if r.alpha.min() < 0 or r.alpha.max() > 1:
                    raise ValidationError("render alpha outside [0, 1]")
                for arr in (r.rgb, r.feat, r.depth):
                    if not np.all(np.isfinite(arr)):
                        raise ValidationError("render output not finite")

    refined = [r.rgb.copy() for r in renders]
    if config.refine:
        with _stage("refine"):
            schedule = diffusion.make_schedule(config.schedule, config.schedule_steps)
            denoiser = diffusion.make_denoiser(config.denoiser, schedule)
            embedder = diffusion.make_embedder(config.embedder)
            embeddings = [embedder(v.image) for v in inputs]
            h, w = target_views[0].intrinsics.height, target_views[0].intrinsics.width
            refined = []
            windows = diffusion.window_partition(len(renders), config.window_size)
            for w_idx, window in enumerate(windows):
                feats_w = [np.moveaxis(renders[i].feat, -1, 0) for i in window]
                cond = diffusion.assemble_conditions(feats_w, embeddings)
                _, images = diffusion.sample(denoiser, cond, schedule,
                                             config.sample_steps,
                                             seed=config.seed + w_idx)
                for img in images:
                    refined.append(np.clip(resize_bilinear(
                        np.moveaxis(img, -1, 0), h, w), 0.0, 1.0).transpose(1, 2, 0))

        if config.color_match:
            with _stage("color-match"):
                refined = [histogram_match(img, r.rgb)
                           for img, r in zip(refined, renders)]

    diag = {
        "n_gaussians": len(cloud),
        "n_targets": len(renders),
        "near": near,
        "far": far,
    }
    return PipelineResult(renders=renders, refined=refined,
                          input_indices=list(plan.input_indices),
                          target_views=list(target_views),
                          depth_maps=full_depths, cloud=cloud, diagnostics=diag)


def reconstruction_loss(rendered: np.ndarray, truth: np.ndarray,
                        l2_weight: float = 1.0, perceptual_weight: float = 0.0,
                        perceptual=None) -> float:
    """w2 * MSE + wp * perceptual(rendered, truth); perceptual defaults off."""
    rendered = np.asarray(rendered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if rendered.shape != truth.shape:
        raise ValidationError(f"shape mismatch: {rendered.shape} vs {truth.shape}")
    loss = l2_weight * float(np.mean((rendered - truth) ** 2))
    if perceptual_weight != 0.0:
        if perceptual is None:
            raise ValidationError("perceptual weight set but no scorer provided")
        loss += perceptual_weight * float(perceptual(rendered, truth))
    return loss


# Splat parameter groups live on wildly different scales (screen-space
# footprint terms dominate color terms), so a single step size cannot be
# stable and useful at once; these static multipliers equalize them.
_GROUP_LR = {"mean": 0.02, "opacity": 0.1, "scale": 0.005, "quat": 0.02,
             "sh": 1.0, "feat": 1.0}


def fit_demo(target: np.ndarray, cloud: GaussianCloud, camera: CameraView,
             steps: int, lr: float, rgb_weight: float = 1.0,
             feat_weight: float = 0.0, target_feat: np.ndarray | None = None,
             grad_stop: bool = False, group_lr: dict | None = None):
    """Plain gradient descent on splat parameters against an L2 image loss.

    Stateless fixed-step descent; the effective step per parameter group is
    lr times a static multiplier (see _GROUP_LR, overridable via
    ``group_lr``). Returns (optimized cloud, loss curve of length
    steps + 1). Aborts with NumericError if the loss exceeds 10x its
    initial value.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    cloud = cloud.copy()
    mult = dict(_GROUP_LR)
    if group_lr:
        unknown = set(group_lr) - set(_GROUP_LR)
        if unknown:
            raise ValidationError(f"unknown parameter groups: {sorted(unknown)}")
        mult.update(group_lr)
    losses = []

    def forward():
        out = rasterize(cloud, camera)
        loss = 0.0
        g_rgb = g_feat = None
        if rgb_weight != 0.0:
            diff = out.rgb - target
            loss += rgb_weight * float(np.mean(diff ** 2))
            g_rgb = rgb_weight * 2.0 * diff / diff.size
        if feat_weight != 0.0:
            if target_feat is None:
                raise ValidationError("feat_weight set but no target_feat given")
            diff_f = out.feat - target_feat
            loss += feat_weight * float(np.mean(diff_f ** 2))
            g_feat = feat_weight * 2.0 * diff_f / diff_f.size
        return loss, g_rgb, g_feat

    for step in range(steps):
        loss, g_rgb, g_feat = forward()
        losses.append(loss)
        if step > 0 and loss > 10.0 * losses[0]:
            raise NumericError(
                f"fit diverged at step {step}: loss {loss:.6g} > 10x initial {losses[0]:.6g}"
            )
        grads = rasterize_backward(cloud, camera, grad_rgb=g_rgb, grad_feat=g_feat,
                                   grad_stop=grad_stop)
        cloud.means -= lr * mult["mean"] * grads.mean
        cloud.opacities = np.clip(cloud.opacities - lr * mult["opacity"] * grads.opacity,
                                  0.0, 1.0)
        cloud.scales = np.maximum(cloud.scales - lr * mult["scale"] * grads.scale, 1e-6)
        cloud.rotations -= lr * mult["quat"] * grads.quat
        touched = np.any(grads.quat != 0.0, axis=1)
        if np.any(touched):
            norms = np.linalg.norm(cloud.rotations[touched], axis=1, keepdims=True)
            cloud.rotations[touched] /= norms
        cloud.sh_coeffs -= lr * mult["sh"] * grads.sh
        cloud.features -= lr * mult["feat"] * grads.feat
    final_loss, _, _ = forward()
    losses.append(final_loss)
    return cloud, np.asarray(losses)


def orbit_targets(views: list, count: int) -> list:
    """Novel poses on the circle best fitting the given camera rig.

    Cameras look at the least-squares intersection of the input optical
    axes; deterministic, no randomness.
    """
    if count < 1:
        raise ValidationError("need at least one target")
    centers = np.stack([v.pose.camera_center for v in views])
    centroid = centers.mean(axis=0)
    _, _, vt = np.linalg.svd(centers - centroid)
    e1, e2 = vt[0], vt[1]
    in_plane = (centers - centroid) @ np.stack([e1, e2]).T
    radius = float(np.mean(np.linalg.norm(in_plane, axis=1)))

    # Least-squares point closest to all optical axes.
    a_mat = np.zeros((3, 3))
    b_vec = np.zeros(3)
    for v in views:
        z_axis = v.pose.rotation[2]
        proj = np.eye(3) - np.outer(z_axis, z_axis)
        a_mat += proj
        b_vec += proj @ v.pose.camera_center
    target = np.linalg.lstsq(a_mat, b_vec, rcond=None)[0]
    up = -np.mean(np.stack([v.pose.rotation[1] for v in views]), axis=0)
    if np.linalg.norm(up) < 1e-9:
        up = np.array([0.0, 1.0, 0.0])

    intr = views[0].intrinsics
    out = []
    for i in range(count):
        ang = 2.0 * np.pi * i / count
        center = centroid + radius * (np.cos(ang) * e1 + np.sin(ang) * e2)
        out.append(CameraView(intrinsics=intr, pose=look_at(center, target, up=up),
                              index=-(i + 1)))
    return out
