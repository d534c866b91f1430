"""Scene persistence (``cameras.json`` schema v1 + 8-bit PNG frames) and
synthetic-scene generation for tests and demos.

cameras.json (version "v1")
---------------------------
{
  "version": "v1",
  "near": 0.5, "far": 8.0,
  "units": "arbitrary",
  "convention": "world_to_camera, x-right y-down z-forward, row-major",
  "frames": [
    {"image_path": "frame_0000.png",
     "intrinsics": [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],
     "world_to_camera": [[...], [...], [...], [0, 0, 0, 1]]},
    ...
  ]
}

Matrices are row-major nested lists. All frames must reference existing
PNGs of identical size; rotation blocks must be orthonormal within 1e-4
(they are re-projected to the nearest rotation on load).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SceneError
from .gaussians import GaussianCloud, Y00, quat_normalize
from .geometry import CameraView, Intrinsics, Pose, look_at
from .imageops import from_uint8
from .rasterizer import reference_rasterize, save_png

SCHEMA_VERSION = "v1"
CONVENTION = "world_to_camera, x-right y-down z-forward, row-major"


@dataclass
class SceneFrame:
    image_path: str
    intrinsics: np.ndarray       # (3, 3) row-major
    world_to_camera: np.ndarray  # (4, 4) row-major


@dataclass
class SceneManifest:
    frames: list
    near: float
    far: float
    units: str = "arbitrary"
    version: str = SCHEMA_VERSION
    convention: str = CONVENTION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "near": self.near,
            "far": self.far,
            "units": self.units,
            "convention": self.convention,
            "frames": [
                {
                    "image_path": f.image_path,
                    "intrinsics": f.intrinsics.tolist(),
                    "world_to_camera": f.world_to_camera.tolist(),
                }
                for f in self.frames
            ],
        }


@dataclass
class Scene:
    manifest: SceneManifest
    views: list  # CameraView, images loaded as float in [0, 1]

    @property
    def near(self) -> float:
        return self.manifest.near

    @property
    def far(self) -> float:
        return self.manifest.far

    def camera_positions(self) -> np.ndarray:
        return np.stack([v.pose.camera_center for v in self.views])


def _as_matrix(obj, shape, what):
    arr = np.asarray(obj, dtype=np.float64)
    if arr.shape != shape:
        raise SceneError("bad-schema", f"{what} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SceneError("invariant-violation", f"{what} contains non-finite values")
    return arr


def load_scene(path) -> Scene:
    """Load and validate a scene directory.

    Raises SceneError with a distinct code per failure class:
    missing-file, malformed-json, bad-schema, invariant-violation,
    image-mismatch.
    """
    from PIL import Image

    root = Path(path)
    manifest_path = root / "cameras.json"
    if not manifest_path.exists():
        raise SceneError("missing-file", f"no cameras.json under {root}")
    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError("malformed-json", f"{manifest_path}: {exc}") from exc
    for key in ("version", "near", "far", "frames"):
        if key not in raw:
            raise SceneError("bad-schema", f"cameras.json missing '{key}'")
    if raw["version"] != SCHEMA_VERSION:
        raise SceneError("bad-schema", f"unsupported schema version {raw['version']}")
    near, far = float(raw["near"]), float(raw["far"])
    if near <= 0 or far <= near:
        raise SceneError("invariant-violation", f"bad depth range [{near}, {far}]")

    frames = []
    views = []
    size = None
    for i, entry in enumerate(raw["frames"]):
        k_mat = _as_matrix(entry.get("intrinsics"), (3, 3), f"frame {i} intrinsics")
        w2c = _as_matrix(entry.get("world_to_camera"), (4, 4), f"frame {i} world_to_camera")
        rot = w2c[:3, :3]
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-4:
            raise SceneError("invariant-violation",
                             f"frame {i} rotation not orthonormal within 1e-4")
        # Snap to the nearest rotation so Pose's tighter invariant holds.
        u, _, vt = np.linalg.svd(rot)
        rot = u @ vt
        if np.linalg.det(rot) < 0:
            raise SceneError("invariant-violation", f"frame {i} rotation is a reflection")
        img_path = root / entry.get("image_path", "")
        if not img_path.exists():
            raise SceneError("missing-file", f"frame {i} image missing: {img_path}")
        image = from_uint8(np.asarray(Image.open(img_path).convert("RGB")))
        if size is None:
            size = image.shape
        elif image.shape != size:
            raise SceneError("image-mismatch",
                             f"frame {i} size {image.shape} differs from {size}")
        h, w = image.shape[:2]
        frames.append(SceneFrame(image_path=entry["image_path"], intrinsics=k_mat,
                                 world_to_camera=w2c))
        views.append(CameraView(
            intrinsics=Intrinsics.from_matrix(k_mat, width=w, height=h),
            pose=Pose(rotation=rot, translation=w2c[:3, 3]),
            image=image,
            index=i,
        ))
    manifest = SceneManifest(frames=frames, near=near, far=far,
                             units=raw.get("units", "arbitrary"))
    return Scene(manifest=manifest, views=views)


def save_manifest(path, manifest: SceneManifest) -> None:
    Path(path, "cameras.json").write_text(json.dumps(manifest.to_dict(), indent=1))


def generate_synthetic_scene(out_dir, seed: int, n_gaussians: int = 120,
                             n_cameras: int = 8, trajectory: str = "orbit",
                             image_size=(64, 96), sh_order: int = 0,
                             feature_channels: int = 4):
    """Write a renderable scene to disk; returns (Scene, ground-truth cloud).

    Random Gaussians fill a unit box; cameras sit on the requested
    trajectory looking at the box center. Images come from the reference
    rasterizer; the ground-truth cloud is serialized alongside for
    regression tests. Byte-identical for a fixed seed.
    """
    if n_cameras < 2:
        raise SceneError("bad-schema", "need at least two cameras")
    if trajectory not in ("orbit", "line"):
        raise SceneError("bad-schema", f"unknown trajectory '{trajectory}'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = image_size
    rng = np.random.default_rng(seed)

    means = rng.uniform(-0.5, 0.5, size=(n_gaussians, 3))
    colors = rng.uniform(0.1, 0.9, size=(n_gaussians, 3))
    bands = (sh_order + 1) ** 2
    sh = np.zeros((n_gaussians, bands, 3))
    sh[:, 0, :] = (colors - 0.5) / Y00
    cloud = GaussianCloud(
        means=means,
        opacities=rng.uniform(0.4, 0.95, size=n_gaussians),
        scales=np.exp(rng.uniform(np.log(0.02), np.log(0.07), size=(n_gaussians, 3))),
        rotations=quat_normalize(rng.standard_normal((n_gaussians, 4))),
        sh_coeffs=sh,
        features=0.3 * rng.standard_normal((n_gaussians, feature_channels)),
    )
    target = means.mean(axis=0)

    radius = 2.5
    centers = []
    if trajectory == "orbit":
        for i in range(n_cameras):
            ang = 2.0 * np.pi * i / n_cameras
            centers.append(target + radius * np.array([np.cos(ang), 0.0, np.sin(ang)]))
    else:
        for i in range(n_cameras):
            s = -1.0 + 2.0 * i / max(n_cameras - 1, 1)
            centers.append(target + np.array([1.5 * s, 0.0, -radius]))

    focal = 1.1 * min(h, w)
    intr = Intrinsics(fx=focal, fy=focal, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
                      width=w, height=h)
    frames = []
    views = []
    for i, center in enumerate(centers):
        pose = look_at(center, target)
        view = CameraView(intrinsics=intr, pose=pose, index=i)
        render = reference_rasterize(cloud, view)
        name = f"frame_{i:04d}.png"
        save_png(out / name, render.rgb)
        w2c = np.eye(4)
        w2c[:3, :3] = pose.rotation
        w2c[:3, 3] = pose.translation
        frames.append(SceneFrame(image_path=name, intrinsics=intr.matrix(),
                                 world_to_camera=w2c))
        views.append(view)

    near = max(0.2 * (radius - 1.0), 0.05)
    far = 2.0 * (radius + 1.0)
    manifest = SceneManifest(frames=frames, near=near, far=far)
    save_manifest(out, manifest)
    cloud.save(out / "gaussians.bin")
    return load_scene(out), cloud
