"""Differentiable splatting of Gaussian clouds into RGB, multi-channel
features, expected depth, and accumulated alpha.

Forward model
-------------
Each splat is projected with the EWA linearization: the camera-space mean
X_c = R mu + t maps to mean2d by the pinhole projection, while the screen
covariance is cov2d = J W Sigma W^T J^T + 0.3 I with J the projection
Jacobian at X_c and W the world-to-camera rotation. Splats are culled when
the view depth is <= 0.01 or the 3-sigma ellipse misses the frame.

Per pixel, splats sorted front-to-back (stable, ties by cloud index)
composite as

    w_i = min(alpha_i * exp(-0.5 * d^T cov2d^{-1} d), 0.99)
    out = sum_i attr_i * w_i * T_i,   T_i = prod_{j<i} (1 - w_j)

over a black background; a splat stops contributing once the running
transmittance T falls below 1e-4. Both the tiled rasterizer and the
brute-force reference implement this same per-pixel contract; the tiled
version merely restricts which splats are evaluated per 16x16 tile (via a
conservative 7-sigma bounding box, so the discrepancy stays far below the
1e-5 oracle tolerance) and may stop a tile early.

The backward pass is analytic, including the dependence of the projection
Jacobian on the mean, quaternion normalization, and SH bands up to order
1. With ``grad_stop`` the feature-channel upstream reaches only the
feature payloads; the RGB upstream always reaches every parameter group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gaussians import (GaussianCloud, covariance_batch, quat_normalize,
                        quat_to_rotation, sh_basis, _C1)
from .geometry import CameraView, Intrinsics, Pose
from .imageops import to_uint8

_PIXEL_CHUNK = 4096


@dataclass(frozen=True)
class RasterizeOptions:
    tile_size: int = 16
    near_clip: float = 0.01
    dilation: float = 0.3            # screen-space low-pass, added to cov2d
    weight_clip: float = 0.99
    transmittance_floor: float = 1e-4
    frame_cull_sigma: float = 3.0    # cull when this ellipse misses the frame
    assign_sigma: float = 7.0        # conservative tile-assignment extent


DEFAULT_OPTIONS = RasterizeOptions()


@dataclass
class RenderOutput:
    """Rasterized target: rgb (H,W,3), feat (H,W,C_f), depth (H,W), alpha (H,W)."""

    rgb: np.ndarray
    feat: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RenderGradients:
    """Per-splat partials; shapes match the cloud."""

    mean: np.ndarray
    opacity: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    sh: np.ndarray
    feat: np.ndarray


def project_gaussian(mean, scale, quat, intrinsics: Intrinsics, pose: Pose,
                     options: RasterizeOptions = DEFAULT_OPTIONS):
    """EWA projection of a single splat.

    Returns (mean2d (2,), cov2d (2,2) including dilation, depth, cull flag).
    Culling is a flag, not an error.
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(3)
    cam = pose.transform(mean)
    z = cam[2]
    if z <= options.near_clip:
        return np.zeros(2), np.eye(2) * options.dilation, float(z), True
    fx, fy = intrinsics.fx, intrinsics.fy
    mean2d = np.array([fx * cam[0] / z + intrinsics.cx,
                       fy * cam[1] / z + intrinsics.cy])
    jac = np.array([[fx / z, 0.0, -fx * cam[0] / z ** 2],
                    [0.0, fy / z, -fy * cam[1] / z ** 2]])
    rot = quat_to_rotation(quat_normalize(np.asarray(quat, dtype=np.float64)))
    sigma = rot @ np.diag(np.asarray(scale, dtype=np.float64) ** 2) @ rot.T
    m2 = jac @ pose.rotation
    cov2d = m2 @ sigma @ m2.T + options.dilation * np.eye(2)
    rx = options.frame_cull_sigma * np.sqrt(max(cov2d[0, 0], 0.0))
    ry = options.frame_cull_sigma * np.sqrt(max(cov2d[1, 1], 0.0))
    off = (mean2d[0] + rx < -0.5 or mean2d[0] - rx > intrinsics.width - 0.5
           or mean2d[1] + ry < -0.5 or mean2d[1] - ry > intrinsics.height - 0.5)
    return mean2d, cov2d, float(z), bool(off)


class _Prepared:
    """Per-camera splat data, culled and sorted front-to-back."""

    __slots__ = ("keep", "depths", "mean2d", "conic", "colors", "colors_pre",
                 "basis", "dirs", "dir_norm", "alphas", "feats", "xc", "m2",
                 "sigma_world", "scales", "quats_raw", "diagnostics", "n_total")

    def __init__(self, **kw):
        for k, v in kw.items():
            setattr(self, k, v)


def _prepare(cloud: GaussianCloud, camera: CameraView,
             options: RasterizeOptions) -> _Prepared:
    k = camera.intrinsics
    pose = camera.pose
    n = len(cloud)
    diagnostics = {"n_total": n, "n_culled_near": 0, "n_culled_frame": 0,
                   "n_skipped_singular": 0, "n_rendered": 0}
    if n == 0:
        return _Prepared(keep=np.zeros(0, dtype=np.int64), diagnostics=diagnostics,
                         n_total=0, depths=None, mean2d=None, conic=None, colors=None,
                         colors_pre=None, basis=None, dirs=None, dir_norm=None,
                         alphas=None, feats=None, xc=None, m2=None, sigma_world=None,
                         scales=None, quats_raw=None)
    xc = cloud.means @ pose.rotation.T + pose.translation
    z = xc[:, 2]
    near_ok = z > options.near_clip
    z_safe = np.where(near_ok, z, 1.0)
    fx, fy = k.fx, k.fy
    mean2d = np.stack([fx * xc[:, 0] / z_safe + k.cx,
                       fy * xc[:, 1] / z_safe + k.cy], axis=1)
    sigma_world = covariance_batch(cloud.scales, cloud.rotations)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = fx / z_safe
    jac[:, 0, 2] = -fx * xc[:, 0] / z_safe ** 2
    jac[:, 1, 1] = fy / z_safe
    jac[:, 1, 2] = -fy * xc[:, 1] / z_safe ** 2
    m2 = jac @ pose.rotation
    cov2d = np.einsum("nij,njk,nlk->nil", m2, sigma_world, m2)
    cov2d[:, 0, 0] += options.dilation
    cov2d[:, 1, 1] += options.dilation
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    singular = near_ok & (det < 1e-12)
    det_safe = np.where(det < 1e-12, 1.0, det)
    conic = np.stack([cov2d[:, 1, 1] / det_safe,
                      -cov2d[:, 0, 1] / det_safe,
                      cov2d[:, 0, 0] / det_safe], axis=1)
    rx = options.frame_cull_sigma * np.sqrt(np.maximum(cov2d[:, 0, 0], 0.0))
    ry = options.frame_cull_sigma * np.sqrt(np.maximum(cov2d[:, 1, 1], 0.0))
    inside = ((mean2d[:, 0] + rx >= -0.5) & (mean2d[:, 0] - rx <= k.width - 0.5)
              & (mean2d[:, 1] + ry >= -0.5) & (mean2d[:, 1] - ry <= k.height - 0.5))
    keep_mask = near_ok & ~singular & inside
    diagnostics["n_culled_near"] = int(np.sum(~near_ok))
    diagnostics["n_skipped_singular"] = int(np.sum(singular))
    diagnostics["n_culled_frame"] = int(np.sum(near_ok & ~singular & ~inside))
    diagnostics["n_rendered"] = int(np.sum(keep_mask))

    keep = np.nonzero(keep_mask)[0]
    order = np.argsort(z[keep], kind="stable")
    keep = keep[order]

    # View-dependent color, evaluated once per splat.
    offsets = cloud.means[keep] - pose.camera_center
    dir_norm = np.linalg.norm(offsets, axis=1)
    dir_norm = np.where(dir_norm < 1e-12, 1.0, dir_norm)
    dirs = offsets / dir_norm[:, None]
    basis = sh_basis(cloud.sh_order, dirs)
    colors_pre = 0.5 + np.einsum("nb,nbc->nc", basis, cloud.sh_coeffs[keep])
    colors = np.clip(colors_pre, 0.0, 1.0)

    return _Prepared(
        keep=keep, depths=z[keep], mean2d=mean2d[keep], conic=conic[keep],
        colors=colors, colors_pre=colors_pre, basis=basis, dirs=dirs,
        dir_norm=dir_norm, alphas=np.clip(cloud.opacities[keep], 0.0, 1.0),
        feats=cloud.features[keep], xc=xc[keep], m2=m2[keep],
        sigma_world=sigma_world[keep], scales=cloud.scales[keep],
        quats_raw=cloud.rotations[keep], diagnostics=diagnostics, n_total=n,
    )


def _splat_weights(prep: _Prepared, rows: np.ndarray, px: np.ndarray,
                   py: np.ndarray, options: RasterizeOptions):
    """Weights/transmittance stack for the given prep rows over a pixel set.

    Returns (dx, dy, g, w, trans, gate), each (n_rows, n_pixels). ``rows``
    must preserve front-to-back order.
    """
    dx = px[None, :] - prep.mean2d[rows, 0][:, None]
    dy = py[None, :] - prep.mean2d[rows, 1][:, None]
    a = prep.conic[rows, 0][:, None]
    b = prep.conic[rows, 1][:, None]
    c = prep.conic[rows, 2][:, None]
    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
    g = np.exp(-0.5 * q)
    w = np.minimum(prep.alphas[rows][:, None] * g, options.weight_clip)
    trans = np.cumprod(1.0 - w, axis=0)
    trans = np.vstack([np.ones((1, len(px))), trans[:-1]])
    gate = trans >= options.transmittance_floor
    return dx, dy, g, w, trans, gate


_SPLAT_CHUNK = 512


def _composite(prep: _Prepared, rows: np.ndarray, px: np.ndarray, py: np.ndarray,
               cf: int, options: RasterizeOptions, early_stop: bool = False):
    """Gated front-to-back compositing over one pixel set.

    With ``early_stop`` the splat loop breaks once every pixel's
    transmittance has crossed the floor; the gate makes the result
    identical either way.
    """
    npix = len(px)
    rgb = np.zeros((npix, 3))
    feat = np.zeros((npix, cf))
    alpha = np.zeros(npix)
    depth_num = np.zeros(npix)
    if len(rows) == 0:
        return rgb, feat, np.zeros(npix), alpha
    running = np.ones(npix)
    floor = options.transmittance_floor
    for lo in range(0, len(rows), _SPLAT_CHUNK):
        chunk = rows[lo:lo + _SPLAT_CHUNK]
        _, _, _, w, trans, _ = _splat_weights(prep, chunk, px, py, options)
        trans = trans * running
        gate = trans >= floor
        contrib = w * trans * gate
        rgb += contrib.T @ prep.colors[chunk]
        feat += contrib.T @ prep.feats[chunk]
        alpha += contrib.sum(axis=0)
        depth_num += contrib.T @ prep.depths[chunk]
        running = trans[-1] * (1.0 - w[-1])
        if early_stop and running.max() < floor:
            break
    depth = np.divide(depth_num, alpha, out=np.zeros_like(alpha), where=alpha > 0)
    return rgb, feat, depth, alpha


def _empty_output(h, w, cf, diagnostics):
    return RenderOutput(rgb=np.zeros((h, w, 3)), feat=np.zeros((h, w, cf)),
                        depth=np.zeros((h, w)), alpha=np.zeros((h, w)),
                        diagnostics=diagnostics)


def rasterize(cloud: GaussianCloud, camera: CameraView,
              options: RasterizeOptions = DEFAULT_OPTIONS) -> RenderOutput:
    """Tile-based forward rasterization (16x16 tiles by default)."""
    k = camera.intrinsics
    h, w = k.height, k.width
    cf = cloud.features.shape[1] if len(cloud) else 4
    prep = _prepare(cloud, camera, options)
    if len(prep.keep) == 0:
        return _empty_output(h, w, cf, prep.diagnostics)

    ts = options.tile_size
    nx = (w + ts - 1) // ts
    ny = (h + ts - 1) // ts
    # Screen-covariance diagonals recovered from the conic: cov_xx = c/det(A),
    # cov_yy = a/det(A). The assign_sigma box bounds where a splat's weight
    # still matters at the oracle tolerance.
    det_a = _conic_det(prep.conic)
    rx = options.assign_sigma * np.sqrt(np.maximum(prep.conic[:, 2] / det_a, 0.0))
    ry = options.assign_sigma * np.sqrt(np.maximum(prep.conic[:, 0] / det_a, 0.0))
    tx0 = np.clip(np.floor((prep.mean2d[:, 0] - rx) / ts).astype(np.int64), 0, nx - 1)
    tx1 = np.clip(np.floor((prep.mean2d[:, 0] + rx) / ts).astype(np.int64), 0, nx - 1)
    ty0 = np.clip(np.floor((prep.mean2d[:, 1] - ry) / ts).astype(np.int64), 0, ny - 1)
    ty1 = np.clip(np.floor((prep.mean2d[:, 1] + ry) / ts).astype(np.int64), 0, ny - 1)

    tile_lists: list[list[int]] = [[] for _ in range(nx * ny)]
    for row in range(len(prep.keep)):
        for tyi in range(ty0[row], ty1[row] + 1):
            base = tyi * nx
            for txi in range(tx0[row], tx1[row] + 1):
                tile_lists[base + txi].append(row)

    rgb = np.zeros((h, w, 3))
    feat = np.zeros((h, w, cf))
    depth = np.zeros((h, w))
    alpha = np.zeros((h, w))
    for tyi in range(ny):
        y_lo, y_hi = tyi * ts, min((tyi + 1) * ts, h)
        for txi in range(nx):
            rows = np.asarray(tile_lists[tyi * nx + txi], dtype=np.int64)
            if len(rows) == 0:
                continue
            x_lo, x_hi = txi * ts, min((txi + 1) * ts, w)
            ys, xs = np.meshgrid(np.arange(y_lo, y_hi, dtype=np.float64),
                                 np.arange(x_lo, x_hi, dtype=np.float64),
                                 indexing="ij")
            t_rgb, t_feat, t_depth, t_alpha = _composite(
                prep, rows, xs.ravel(), ys.ravel(), cf, options, early_stop=True)
            shape = (y_hi - y_lo, x_hi - x_lo)
            rgb[y_lo:y_hi, x_lo:x_hi] = t_rgb.reshape(*shape, 3)
            feat[y_lo:y_hi, x_lo:x_hi] = t_feat.reshape(*shape, cf)
            depth[y_lo:y_hi, x_lo:x_hi] = t_depth.reshape(shape)
            alpha[y_lo:y_hi, x_lo:x_hi] = t_alpha.reshape(shape)
    return RenderOutput(rgb=rgb, feat=feat, depth=depth, alpha=alpha,
                        diagnostics=prep.diagnostics)


def _conic_det(conic):
    # det of cov2d recovered from its inverse's entries: det(A) = 1/det(cov2d)
    det_a = conic[:, 0] * conic[:, 2] - conic[:, 1] ** 2
    return np.where(det_a <= 0, np.inf, det_a)


def reference_rasterize(cloud: GaussianCloud, camera: CameraView,
                        options: RasterizeOptions = DEFAULT_OPTIONS) -> RenderOutput:
    """Brute-force oracle: every non-culled splat against every pixel.

    No tiling and no early loop exit; shares the per-pixel compositing
    contract with :func:`rasterize`.
    """
    k = camera.intrinsics
    h, w = k.height, k.width
    cf = cloud.features.shape[1] if len(cloud) else 4
    prep = _prepare(cloud, camera, options)
    if len(prep.keep) == 0:
        return _empty_output(h, w, cf, prep.diagnostics)
    rows = np.arange(len(prep.keep))
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    px, py = xs.ravel(), ys.ravel()
    rgb = np.zeros((h * w, 3))
    feat = np.zeros((h * w, cf))
    depth = np.zeros(h * w)
    alpha = np.zeros(h * w)
    for lo in range(0, h * w, _PIXEL_CHUNK):
        hi = min(lo + _PIXEL_CHUNK, h * w)
        rgb[lo:hi], feat[lo:hi], depth[lo:hi], alpha[lo:hi] = _composite(
            prep, rows, px[lo:hi], py[lo:hi], cf, options)
    return RenderOutput(rgb=rgb.reshape(h, w, 3), feat=feat.reshape(h, w, cf),
                        depth=depth.reshape(h, w), alpha=alpha.reshape(h, w),
                        diagnostics=prep.diagnostics)


def _rotation_quat_partials(qn: np.ndarray) -> np.ndarray:
    """d(rotation)/d(unit quaternion components); shape (N, 4, 3, 3)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    zero = np.zeros_like(w)
    d = np.empty((len(qn), 4, 3, 3))
    d[:, 0] = np.moveaxis(np.array([
        [zero, -2 * z, 2 * y],
        [2 * z, zero, -2 * x],
        [-2 * y, 2 * x, zero]]), (0, 1), (1, 2)).reshape(len(qn), 3, 3)
    d[:, 1] = np.moveaxis(np.array([
        [zero, 2 * y, 2 * z],
        [2 * y, -4 * x, -2 * w],
        [2 * z, 2 * w, -4 * x]]), (0, 1), (1, 2)).reshape(len(qn), 3, 3)
    d[:, 2] = np.moveaxis(np.array([
        [-4 * y, 2 * x, 2 * w],
        [2 * x, zero, 2 * z],
        [-2 * w, 2 * z, -4 * y]]), (0, 1), (1, 2)).reshape(len(qn), 3, 3)
    d[:, 3] = np.moveaxis(np.array([
        [-4 * z, -2 * w, 2 * x],
        [2 * w, -4 * z, 2 * y],
        [2 * x, 2 * y, zero]]), (0, 1), (1, 2)).reshape(len(qn), 3, 3)
    return d


def rasterize_backward(cloud: GaussianCloud, camera: CameraView,
                       grad_rgb: np.ndarray | None = None,
                       grad_feat: np.ndarray | None = None,
                       grad_stop: bool = False,
                       options: RasterizeOptions = DEFAULT_OPTIONS) -> RenderGradients:
    """Analytic partials of the composited rgb/feat outputs.

    ``grad_rgb`` (H, W, 3) and ``grad_feat`` (H, W, C_f) are the upstream
    gradients; either may be None (treated as zero). With ``grad_stop``
    the feature upstream contributes only to the feature payloads and
    exactly zero to mean/opacity/scale/rotation.
    """
    k = camera.intrinsics
    h, w = k.height, k.width
    n = len(cloud)
    cf = cloud.features.shape[1] if n else 4
    bands = cloud.sh_coeffs.shape[1] if n else 1
    grads = RenderGradients(
        mean=np.zeros((n, 3)), opacity=np.zeros(n), scale=np.zeros((n, 3)),
        quat=np.zeros((n, 4)), sh=np.zeros((n, bands, 3)), feat=np.zeros((n, cf)),
    )
    if grad_rgb is not None and grad_rgb.shape != (h, w, 3):
        raise ValidationError(f"grad_rgb shape {grad_rgb.shape} != {(h, w, 3)}")
    if grad_feat is not None and grad_feat.shape != (h, w, cf):
        raise ValidationError(f"grad_feat shape {grad_feat.shape} != {(h, w, cf)}")
    if n == 0 or (grad_rgb is None and grad_feat is None):
        return grads
    if cloud.sh_order > 1 and grad_rgb is not None:
        raise ValidationError("analytic backward supports SH order <= 1")

    prep = _prepare(cloud, camera, options)
    kn = len(prep.keep)
    if kn == 0:
        return grads
    rows = np.arange(kn)
    g_rgb = grad_rgb.reshape(-1, 3) if grad_rgb is not None else None
    g_feat = grad_feat.reshape(-1, cf) if grad_feat is not None else None

    d_color = np.zeros((kn, 3))
    d_feat = np.zeros((kn, cf))
    d_alpha = np.zeros(kn)
    d_mean2d = np.zeros((kn, 2))
    g_a = np.zeros(kn)
    g_b = np.zeros(kn)
    g_c = np.zeros(kn)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    px_all, py_all = xs.ravel(), ys.ravel()
    for lo in range(0, h * w, _PIXEL_CHUNK):
        hi = min(lo + _PIXEL_CHUNK, h * w)
        px, py = px_all[lo:hi], py_all[lo:hi]
        dx, dy, g, wgt, trans, gate = _splat_weights(prep, rows, px, py, options)
        contrib = wgt * trans * gate
        u_struct = np.zeros_like(wgt)
        if g_rgb is not None:
            chunk = g_rgb[lo:hi]
            d_color += contrib @ chunk
            u_struct += prep.colors @ chunk.T
        if g_feat is not None:
            chunk_f = g_feat[lo:hi]
            d_feat += contrib @ chunk_f
            if not grad_stop:
                u_struct += prep.feats @ chunk_f.T
        b_term = u_struct * contrib
        suffix = np.flip(np.cumsum(np.flip(b_term, 0), axis=0), 0) - b_term
        one_minus = 1.0 - wgt
        d_w = u_struct * trans * gate - suffix / one_minus
        live = (prep.alphas[:, None] * g) <= options.weight_clip
        d_alpha += np.einsum("np,np->n", d_w, g * live)
        d_g = d_w * prep.alphas[:, None] * live
        d_q = -0.5 * g * d_g
        a = prep.conic[:, 0][:, None]
        b = prep.conic[:, 1][:, None]
        c = prep.conic[:, 2][:, None]
        d_mean2d[:, 0] += np.einsum("np,np->n", d_q, -2.0 * (a * dx + b * dy))
        d_mean2d[:, 1] += np.einsum("np,np->n", d_q, -2.0 * (b * dx + c * dy))
        g_a += np.einsum("np,np->n", d_q, dx * dx)
        g_b += np.einsum("np,np->n", d_q, dx * dy)
        g_c += np.einsum("np,np->n", d_q, dy * dy)

    # Conic -> 2D covariance (inverse-matrix backward).
    a_mat = np.empty((kn, 2, 2))
    a_mat[:, 0, 0] = prep.conic[:, 0]
    a_mat[:, 0, 1] = a_mat[:, 1, 0] = prep.conic[:, 1]
    a_mat[:, 1, 1] = prep.conic[:, 2]
    g_mat = np.empty((kn, 2, 2))
    g_mat[:, 0, 0] = g_a
    g_mat[:, 0, 1] = g_mat[:, 1, 0] = g_b
    g_mat[:, 1, 1] = g_c
    d_cov2d = -np.einsum("nij,njk,nkl->nil", a_mat, g_mat, a_mat)

    # cov2d = M2 Sigma M2^T + dilation I.
    d_sigma = np.einsum("nji,njk,nkl->nil", prep.m2, d_cov2d, prep.m2)
    sym = d_cov2d + np.swapaxes(d_cov2d, 1, 2)
    d_m2 = np.einsum("nij,njk,nkl->nil", sym, prep.m2, prep.sigma_world)
    d_jac = d_m2 @ camera.pose.rotation.T

    # Screen mean and Jacobian both depend on the camera-space point.
    fx, fy = k.fx, k.fy
    x, y, z = prep.xc[:, 0], prep.xc[:, 1], prep.xc[:, 2]
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    d_xc = np.zeros((kn, 3))
    d_xc[:, 0] = d_mean2d[:, 0] * fx * inv_z + d_jac[:, 0, 2] * (-fx * inv_z2)
    d_xc[:, 1] = d_mean2d[:, 1] * fy * inv_z + d_jac[:, 1, 2] * (-fy * inv_z2)
    d_xc[:, 2] = (d_mean2d[:, 0] * (-fx * x * inv_z2)
                  + d_mean2d[:, 1] * (-fy * y * inv_z2)
                  + d_jac[:, 0, 0] * (-fx * inv_z2)
                  + d_jac[:, 1, 1] * (-fy * inv_z2)
                  + d_jac[:, 0, 2] * (2.0 * fx * x * inv_z2 * inv_z)
                  + d_jac[:, 1, 2] * (2.0 * fy * y * inv_z2 * inv_z))
    d_mean = d_xc @ camera.pose.rotation

    # SH coefficients (and, for order 1, the view-direction coupling).
    clamp_gate = (prep.colors_pre > 0.0) & (prep.colors_pre < 1.0)
    d_pre = d_color * clamp_gate
    d_sh = np.einsum("nc,nb->nbc", d_pre, prep.basis)
    if cloud.sh_order >= 1:
        coeffs = cloud.sh_coeffs[prep.keep]
        d_dir = np.stack([
            _C1 * np.einsum("nc,nc->n", d_pre, coeffs[:, 3, :]),
            _C1 * np.einsum("nc,nc->n", d_pre, coeffs[:, 1, :]),
            _C1 * np.einsum("nc,nc->n", d_pre, coeffs[:, 2, :]),
        ], axis=1)
        proj = (np.eye(3)[None] - np.einsum("ni,nj->nij", prep.dirs, prep.dirs))
        d_mean += np.einsum("nij,nj->ni", proj, d_dir) / prep.dir_norm[:, None]

    # Sigma = R(q_hat) diag(s^2) R(q_hat)^T with q_hat = q / |q|.
    qn = quat_normalize(prep.quats_raw)
    rot_q = quat_to_rotation(qn)
    sym_s = d_sigma + np.swapaxes(d_sigma, 1, 2)
    diag_d = np.einsum("nji,njk,nki->ni", rot_q, d_sigma, rot_q)
    d_scale = 2.0 * prep.scales * diag_d
    d_rot = np.einsum("nij,njk->nik", sym_s,
                      rot_q * (prep.scales ** 2)[:, None, :])
    d_qn = np.einsum("nij,ncij->nc", d_rot, _rotation_quat_partials(qn))
    q_norm = np.linalg.norm(prep.quats_raw, axis=1, keepdims=True)
    d_quat = (d_qn - qn * np.einsum("nc,nc->n", qn, d_qn)[:, None]) / q_norm

    grads.mean[prep.keep] = d_mean
    grads.opacity[prep.keep] = d_alpha
    grads.scale[prep.keep] = d_scale
    grads.quat[prep.keep] = d_quat
    grads.sh[prep.keep] = d_sh
    grads.feat[prep.keep] = d_feat
    return grads


def save_png(path, image: np.ndarray) -> None:
    """8-bit PNG; (H, W, 3) writes RGB, (H, W) writes grayscale."""
    from PIL import Image

    arr = to_uint8(np.asarray(image))
    mode = "RGB" if arr.ndim == 3 else "L"
    Image.fromarray(arr, mode=mode).save(Path(path), format="PNG")


def save_raw(path, output: RenderOutput) -> None:
    """Headerless planar float32 little-endian dump of feat/depth/alpha.

    Plane order: feature channels, then depth, then alpha. A JSON sidecar
    (``<path>.json``) records the dimensions.
    """
    path = Path(path)
    planes = np.concatenate([np.moveaxis(output.feat, -1, 0),
                             output.depth[None], output.alpha[None]], axis=0)
    planes.astype("<f4").tofile(path)
    sidecar = {"height": int(output.depth.shape[0]),
               "width": int(output.depth.shape[1]),
               "feat_channels": int(output.feat.shape[2]),
               "planes": [f"feat{i}" for i in range(output.feat.shape[2])] + ["depth", "alpha"]}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))


def load_raw(path):
    """Reload a raw dump; returns (feat (H,W,C), depth (H,W), alpha (H,W))."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    h, w, cf = meta["height"], meta["width"], meta["feat_channels"]
    planes = np.fromfile(path, dtype="<f4").reshape(cf + 2, h, w).astype(np.float64)
    return np.moveaxis(planes[:cf], 0, -1), planes[cf], planes[cf + 1]
