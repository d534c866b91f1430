import numpy as np
import pytest

from sparsesplat.gaussians import GaussianCloud, Y00, quat_normalize
from sparsesplat.geometry import CameraView, Intrinsics, Pose


def make_camera(width=32, height=32, focal=None, pose=None, image=None, index=0):
    focal = focal if focal is not None else 1.2 * min(width, height)
    intr = Intrinsics(fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height)
    return CameraView(intrinsics=intr, pose=pose or Pose.identity(), image=image,
                      index=index)


def random_cloud(rng, n, sh_order=0, feature_channels=4, spread=0.6,
                 depth_range=(2.0, 5.0), opacity_range=(0.2, 0.9),
                 scale_range=(0.05, 0.25), feat_scale=1.0):
    """Random splats in front of an identity camera at the origin."""
    bands = (sh_order + 1) ** 2
    means = np.stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(*depth_range, n),
    ], axis=1)
    sh = np.zeros((n, bands, 3))
    sh[:, 0, :] = (rng.uniform(0.2, 0.8, (n, 3)) - 0.5) / Y00
    if sh_order >= 1:
        sh[:, 1:4, :] = rng.uniform(-0.1, 0.1, (n, 3, 3))
    return GaussianCloud(
        means=means,
        opacities=rng.uniform(*opacity_range, n),
        scales=rng.uniform(*scale_range, (n, 3)),
        rotations=quat_normalize(rng.standard_normal((n, 4))),
        sh_coeffs=sh,
        features=feat_scale * rng.standard_normal((n, feature_channels)),
    )


def grid_scene(seed, n_side=10, size=48, depth=3.0, sigma_px=1.6,
               color_noise=0.35, opacity_noise=0.08):
    """Self-reconstruction scene: a jittered grid of similar-footprint splats
    plus a perturbed copy. Homogeneous footprints keep plain gradient
    descent well conditioned. Returns (camera, ground truth, perturbed)."""
    rng_local = np.random.default_rng(seed)
    cam = make_camera(size, size)
    fx = cam.intrinsics.fx
    extent = 0.8 * depth * (size / 2) / fx
    xs = np.linspace(-extent, extent, n_side)
    gx, gy = np.meshgrid(xs, xs)
    n = n_side * n_side
    means = np.stack([gx.ravel(), gy.ravel(), np.full(n, depth)], axis=1)
    means[:, :2] += rng_local.uniform(-0.15, 0.15, (n, 2)) * (2 * extent / n_side)
    colors = rng_local.uniform(0.25, 0.75, (n, 3))
    sh = np.zeros((n, 1, 3))
    sh[:, 0, :] = (colors - 0.5) / Y00
    gt = GaussianCloud(
        means=means,
        opacities=np.full(n, 0.75),
        scales=np.full((n, 3), sigma_px * depth / fx),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        sh_coeffs=sh,
        features=0.3 * rng_local.standard_normal((n, 4)),
    )
    init = gt.copy()
    init.sh_coeffs = init.sh_coeffs + color_noise * rng_local.standard_normal(sh.shape)
    init.opacities = np.clip(
        init.opacities + rng_local.uniform(-opacity_noise, opacity_noise, n), 0.05, 1.0)
    return cam, gt, init


@pytest.fixture
def rng():
    return np.random.default_rng(0)
