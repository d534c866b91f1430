"""Pinhole camera models, depth-plane layering, and plane-sweep warping.

Conventions
-----------
World frame: arbitrary right-handed frame shared by all cameras.

Camera frame (computer-vision standard): x-right, y-down, z-forward.
Poses are stored world-to-camera: ``X_cam = R @ X_world + t``.

Pixel coordinates are continuous with integer values at pixel centers;
the principal point (cx, cy) lives in the same continuous space, so the
pixel (cx, cy) back-projects onto the optical axis.

Depth layering divides [near, far] uniformly in depth by default; an
inverse-depth mode is available behind a flag but off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .features import FeatureMap

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels for an image of size width x height."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def rescale(self, sx: float, sy: float | None = None) -> "Intrinsics":
        """Intrinsics for a resampled grid, half-pixel-center correct."""
        if sy is None:
            sy = sx
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=int(round(self.width * sx)),
            height=int(round(self.height * sy)),
        )

    @classmethod
    def from_matrix(cls, k: np.ndarray, width: int, height: int) -> "Intrinsics":
        k = np.asarray(k, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValidationError(f"intrinsic matrix must be 3x3, got {k.shape}")
        return cls(fx=float(k[0, 0]), fy=float(k[1, 1]), cx=float(k[0, 2]), cy=float(k[1, 2]),
                   width=width, height=height)


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: X_cam = rotation @ X_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tra)):
            raise ValidationError("pose contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValidationError("rotation is not orthonormal within 1e-6")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise ValidationError("rotation determinant is not +1 within 1e-6")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin expressed in world coordinates."""
        return -self.rotation.T @ self.translation

    def transform(self, points: np.ndarray) -> np.ndarray:
        """World -> camera for points of shape (..., 3)."""
        return points @ self.rotation.T + self.translation

    def inverse_transform(self, points: np.ndarray) -> np.ndarray:
        """Camera -> world for points of shape (..., 3)."""
        return (points - self.translation) @ self.rotation


@dataclass(frozen=True)
class CameraView:
    """One posed view: intrinsics, world-to-camera pose, optional image buffer."""

    intrinsics: Intrinsics
    pose: Pose
    image: np.ndarray | None = None
    index: int = -1


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray = (0.0, 1.0, 0.0)) -> Pose:
    """World-to-camera pose with z toward ``target`` and y pointing world-down.

    ``up`` is the world up hint (camera y maps to -up).
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValidationError("look_at eye and target coincide")
    z = forward / norm
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    if np.linalg.norm(x) < 1e-9:
        # View axis parallel to up: pick any perpendicular.
        down = np.array([1.0, 0.0, 0.0])
        x = np.cross(down, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=0)
    return Pose(rotation=rot, translation=-rot @ eye)


@dataclass(frozen=True)
class DepthPlanes:
    """Strictly increasing depth hypotheses spanning [near, far]."""

    near: float
    far: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.near <= 0 or self.far <= self.near:
            raise ValidationError(f"invalid depth range [{self.near}, {self.far}]")
        if vals.ndim != 1 or len(vals) < 2:
            raise ValidationError("need at least two depth planes")
        if np.any(np.diff(vals) <= 0):
            raise ValidationError("depth planes must be strictly increasing")
        if vals[0] != self.near or vals[-1] != self.far:
            raise ValidationError("depth planes must start at near and end at far")
        object.__setattr__(self, "values", vals)

    @property
    def count(self) -> int:
        return len(self.values)


def depth_planes(near: float, far: float, count: int, inverse: bool = False) -> DepthPlanes:
    """Uniform depth layering: D_m = near + (m-1) * (far-near) / (L-1).

    With ``inverse=True`` the layering is uniform in 1/depth instead
    (endpoints unchanged).
    """
    if near <= 0 or far <= near or count < 2:
        raise ValidationError(
            f"invalid depth-plane request: near={near}, far={far}, count={count}"
        )
    if inverse:
        values = 1.0 / np.linspace(1.0 / near, 1.0 / far, count)
        values[0], values[-1] = near, far
    else:
        values = np.linspace(near, far, count)
        values[0], values[-1] = near, far
    return DepthPlanes(near=float(near), far=float(far), values=values)


def unproject(pixel, depth: float, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Back-project a pixel at the given depth into world coordinates."""
    if depth <= 0:
        raise ValidationError(f"depth must be positive, got {depth}")
    ux, uy = float(pixel[0]), float(pixel[1])
    cam = np.array(
        [(ux - intrinsics.cx) / intrinsics.fx * depth,
         (uy - intrinsics.cy) / intrinsics.fy * depth,
         depth]
    )
    return pose.inverse_transform(cam)


def project(point_world: np.ndarray, intrinsics: Intrinsics, pose: Pose):
    """Project a world point; returns (pixel (2,), depth)."""
    cam = pose.transform(np.asarray(point_world, dtype=np.float64))
    z = cam[2]
    if z <= 0:
        raise ValidationError(f"point projects behind the camera (z={z})")
    return (
        np.array([intrinsics.fx * cam[0] / z + intrinsics.cx,
                  intrinsics.fy * cam[1] / z + intrinsics.cy]),
        float(z),
    )


def unproject_grid(depth: np.ndarray, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Back-project a full (H, W) depth map; returns (H, W, 3) world points."""
    h, w = depth.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    cam = np.stack(
        [(xs - intrinsics.cx) / intrinsics.fx * depth,
         (ys - intrinsics.cy) / intrinsics.fy * depth,
         depth],
        axis=-1,
    )
    return pose.inverse_transform(cam)


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample a planar (C, H, W) grid at continuous (xs, ys) positions.

    Zero padding outside [0, W-1] x [0, H-1]; returns (samples (C, ...),
    valid mask (...)). Points exactly on the border are valid.
    """
    c, h, w = data.shape
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    d00 = data[:, y0, x0]
    d01 = data[:, y0, x1]
    d10 = data[:, y1, x0]
    d11 = data[:, y1, x1]
    out = (d00 * (1 - fy) * (1 - fx) + d01 * (1 - fy) * fx
           + d10 * fy * (1 - fx) + d11 * fy * fx)
    return out * valid, valid


def plane_sweep_warp(feat_j: FeatureMap, cam_i: CameraView, cam_j: CameraView,
                     plane_depth: float):
    """Warp view-j features onto view i's grid through a fronto-parallel plane.

    Every pixel of view i is back-projected at ``plane_depth`` (in view i's
    camera frame), transformed into view j, projected, and sampled
    bilinearly from ``feat_j``. Samples that fall outside view j's grid (or
    behind its camera) are zero and flagged invalid in the returned mask.

    Returns (warped FeatureMap on view i's grid, validity mask (H, W)).
    """
    if plane_depth <= 0:
        raise ValidationError(f"plane depth must be positive, got {plane_depth}")
    c, h, w = feat_j.data.shape
    ki = cam_i.intrinsics.rescale(w / cam_i.intrinsics.width, h / cam_i.intrinsics.height)
    kj = cam_j.intrinsics.rescale(w / cam_j.intrinsics.width, h / cam_j.intrinsics.height)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    cam_pts = np.stack(
        [(xs - ki.cx) / ki.fx * plane_depth,
         (ys - ki.cy) / ki.fy * plane_depth,
         np.full((h, w), plane_depth)],
        axis=-1,
    )
    world = cam_i.pose.inverse_transform(cam_pts)
    in_j = cam_j.pose.transform(world)
    z = in_j[..., 2]
    in_front = z > 1e-9
    z_safe = np.where(in_front, z, 1.0)
    u = kj.fx * in_j[..., 0] / z_safe + kj.cx
    v = kj.fy * in_j[..., 1] / z_safe + kj.cy
    samples, sample_ok = bilinear_sample(feat_j.data, u, v)
    valid = sample_ok & in_front
    samples = samples * valid
    warped = FeatureMap(data=samples, view_index=feat_j.view_index)
    return warped, valid
