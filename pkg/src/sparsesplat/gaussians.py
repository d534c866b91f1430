"""Per-pixel 3D Gaussian construction: means from back-projected depth,
covariances factored as R(q) diag(s^2) R(q)^T, clamp(0.5 + SH) colors,
and a multi-channel feature payload per splat.

The cloud is stored struct-of-arrays. Serialization is a little-endian
binary stream: a versioned header (magic ``GCLD``, version, count, C_f,
SH order) followed by float32 blocks (means, opacities, scales,
quaternions, SH coefficients, features) and int32 provenance blocks
(source view, source pixel).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .costvolume import DepthMap
from .errors import ValidationError
from .features import FeatureMap
from .geometry import CameraView, unproject_grid

Y00 = 0.28209479177387814  # 1 / (2 sqrt(pi))

_MAGIC = b"GCLD"
_VERSION = 1

# Real spherical harmonics polynomial coefficients, bands 0..3
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
       1.0925484305920792, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
       0.3731763325901154, 0.4570457994644658, 1.445305721320277,
       0.5900435899266435)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions (w, x, y, z); shape (..., 3, 3)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    rot = np.empty(w.shape + (3, 3))
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def covariance(scale: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """Sigma = R(q) diag(s^2) R(q)^T. Rejects non-unit quaternions beyond 1e-4."""
    scale = np.asarray(scale, dtype=np.float64).reshape(3)
    quat = np.asarray(quat, dtype=np.float64).reshape(4)
    if np.any(scale <= 0):
        raise ValidationError(f"scales must be positive, got {scale}")
    norm = np.linalg.norm(quat)
    if abs(norm - 1.0) > 1e-4:
        raise ValidationError(f"quaternion norm {norm} deviates from 1 beyond 1e-4")
    rot = quat_to_rotation(quat / norm)
    return rot @ np.diag(scale ** 2) @ rot.T


def covariance_batch(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """Vectorized covariance for (N, 3) scales and (N, 4) quaternions."""
    rot = quat_to_rotation(quat_normalize(quats))
    scaled = rot * (scales ** 2)[:, None, :]
    return np.einsum("nij,nkj->nik", scaled, rot)


def sh_basis(order: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values for unit directions; shape (..., (order+1)^2).

    Bands 0..3 use hardcoded polynomials; higher bands fall back to
    scipy's spherical harmonics combined into the real form.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    cols = [np.full(x.shape, Y00)]
    if order >= 1:
        cols += [_C1 * y, _C1 * z, _C1 * x]
    if order >= 2:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _C2[0] * x * y,
            _C2[1] * y * z,
            _C2[2] * (2 * zz - xx - yy),
            _C2[3] * x * z,
            _C2[4] * (xx - yy),
        ]
    if order >= 3:
        xx, yy, zz = x * x, y * y, z * z
        cols += [
            _C3[0] * y * (3 * xx - yy),
            _C3[1] * x * y * z,
            _C3[2] * y * (4 * zz - xx - yy),
            _C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            _C3[4] * x * (4 * zz - xx - yy),
            _C3[5] * z * (xx - yy),
            _C3[6] * x * (xx - 3 * yy),
        ]
    if order >= 4:
        cols += _sh_basis_scipy(order, x, y, z)
    return np.stack(cols, axis=-1)


def _sh_basis_scipy(order, x, y, z):
    from scipy.special import sph_harm_y

    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.arctan2(y, x)
    cols = []
    for ell in range(4, order + 1):
        for m in range(-ell, ell + 1):
            ylm = sph_harm_y(ell, abs(m), theta, phi)
            if m < 0:
                col = np.sqrt(2.0) * (-1.0) ** m * ylm.imag
            elif m == 0:
                col = ylm.real
            else:
                col = np.sqrt(2.0) * (-1.0) ** m * ylm.real
            cols.append(col)
    return cols


def sh_color(coeffs: np.ndarray, view_dir: np.ndarray, order: int) -> np.ndarray:
    """clamp(0.5 + sum_lm c_lm Y_lm(dir), 0, 1) per channel.

    ``coeffs`` has shape ((order+1)^2, 3); ``view_dir`` must be unit length.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis_size = (order + 1) ** 2
    if coeffs.shape != (basis_size, 3):
        raise ValidationError(
            f"expected {(basis_size, 3)} SH coefficients for order {order}, got {coeffs.shape}"
        )
    view_dir = np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(view_dir) - 1.0) > 1e-6:
        raise ValidationError("view direction must be unit length")
    basis = sh_basis(order, view_dir)
    return np.clip(0.5 + basis @ coeffs, 0.0, 1.0)


@dataclass
class GaussianCloud:
    """Struct-of-arrays splat collection with per-splat provenance."""

    means: np.ndarray          # (N, 3) world
    opacities: np.ndarray      # (N,) in [0, 1]
    scales: np.ndarray         # (N, 3) positive
    rotations: np.ndarray      # (N, 4) unit quaternions (w, x, y, z)
    sh_coeffs: np.ndarray      # (N, (S+1)^2, 3)
    features: np.ndarray       # (N, C_f)
    src_view: np.ndarray = None    # (N,) int32, -1 when synthetic
    src_pixel: np.ndarray = None   # (N, 2) int32 (row, col), -1 when synthetic

    def __post_init__(self):
        n = len(self.means)
        if self.src_view is None:
            self.src_view = np.full(n, -1, dtype=np.int32)
        if self.src_pixel is None:
            self.src_pixel = np.full((n, 2), -1, dtype=np.int32)

    def __len__(self) -> int:
        return len(self.means)

    @property
    def sh_order(self) -> int:
        return int(round(np.sqrt(self.sh_coeffs.shape[1]))) - 1

    @property
    def feature_channels(self) -> int:
        return self.features.shape[1]

    def validate(self) -> None:
        """Assert every member invariant; raises ValidationError."""
        n = len(self)
        shapes = {
            "means": (n, 3), "opacities": (n,), "scales": (n, 3),
            "rotations": (n, 4), "src_view": (n,), "src_pixel": (n, 2),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ValidationError(f"{name} has shape {got}, expected {want}")
        if self.sh_coeffs.shape[0] != n or self.sh_coeffs.shape[2] != 3:
            raise ValidationError(f"sh_coeffs has shape {self.sh_coeffs.shape}")
        if (self.sh_order + 1) ** 2 != self.sh_coeffs.shape[1]:
            raise ValidationError("sh_coeffs band count is not a perfect square")
        for arr in (self.means, self.opacities, self.scales, self.rotations,
                    self.sh_coeffs, self.features):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("cloud contains non-finite values")
        if n == 0:
            return
        if self.opacities.min() < 0 or self.opacities.max() > 1:
            raise ValidationError("opacities outside [0, 1]")
        if self.scales.min() <= 0:
            raise ValidationError("scales must be positive")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise ValidationError("quaternions deviate from unit norm beyond 1e-6")

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            means=self.means.copy(), opacities=self.opacities.copy(),
            scales=self.scales.copy(), rotations=self.rotations.copy(),
            sh_coeffs=self.sh_coeffs.copy(), features=self.features.copy(),
            src_view=self.src_view.copy(), src_pixel=self.src_pixel.copy(),
        )

    @classmethod
    def concatenate(cls, clouds) -> "GaussianCloud":
        return cls(
            means=np.concatenate([c.means for c in clouds]),
            opacities=np.concatenate([c.opacities for c in clouds]),
            scales=np.concatenate([c.scales for c in clouds]),
            rotations=np.concatenate([c.rotations for c in clouds]),
            sh_coeffs=np.concatenate([c.sh_coeffs for c in clouds]),
            features=np.concatenate([c.features for c in clouds]),
            src_view=np.concatenate([c.src_view for c in clouds]),
            src_pixel=np.concatenate([c.src_pixel for c in clouds]),
        )

    def save(self, path) -> None:
        """Write the versioned little-endian binary record stream."""
        path = Path(path)
        n = len(self)
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIII", _VERSION, n, self.feature_channels, self.sh_order))
            for arr in (self.means, self.opacities, self.scales, self.rotations,
                        self.sh_coeffs, self.features):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.src_view, dtype="<i4").tobytes())
            fh.write(np.ascontiguousarray(self.src_pixel, dtype="<i4").tobytes())

    @classmethod
    def load(cls, path) -> "GaussianCloud":
        path = Path(path)
        raw = path.read_bytes()
        if raw[:4] != _MAGIC:
            raise ValidationError(f"{path} is not a gaussian cloud file")
        version, n, c_f, order = struct.unpack("<IIII", raw[4:20])
        if version != _VERSION:
            raise ValidationError(f"unsupported cloud version {version}")
        bands = (order + 1) ** 2
        offset = 20
        out = {}
        for name, shape in (("means", (n, 3)), ("opacities", (n,)), ("scales", (n, 3)),
                            ("rotations", (n, 4)), ("sh_coeffs", (n, bands, 3)),
                            ("features", (n, c_f))):
            count = int(np.prod(shape))
            out[name] = np.frombuffer(raw, dtype="<f4", count=count,
                                      offset=offset).reshape(shape).astype(np.float64)
            offset += count * 4
        src_view = np.frombuffer(raw, dtype="<i4", count=n, offset=offset).copy()
        offset += n * 4
        src_pixel = np.frombuffer(raw, dtype="<i4", count=n * 2,
                                  offset=offset).reshape(n, 2).copy()
        return cls(src_view=src_view, src_pixel=src_pixel, **out)


@dataclass(frozen=True)
class GaussianHead:
    """Deterministic surrogate for the per-pixel parameter heads.

    scale_gain sets the isotropic footprint s = scale_gain * depth / fx;
    features come from a fixed linear projection of the local feature
    vector.
    """

    scale_gain: float = 1.0
    sh_order: int = 0
    feature_channels: int = 4


def feature_projection(c_in: int, c_out: int = 4) -> np.ndarray:
    """Fixed linear map from extractor channels to the splat payload.

    For the built-in 8-channel extractor the rows are interpretable
    (luma, blue-red opponent, gradient energy, variance energy); other
    channel counts get a deterministic seeded projection.
    """
    if c_in == 8 and c_out == 4:
        return np.array([
            [0.299, 0.587, 0.114, 0.0, 0.0, 0.0, 0.0, 0.0],
            [-0.5, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1 / 3, 1 / 3, 1 / 3],
        ])
    rng = np.random.default_rng(0x5EED + 31 * c_in + c_out)
    return rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)


def build_gaussians(depth_map: DepthMap, view: CameraView, features: FeatureMap,
                    offsets: np.ndarray | None = None,
                    head: GaussianHead = GaussianHead()) -> GaussianCloud:
    """One Gaussian per depth-map pixel.

    Means are back-projections plus the (world-frame) offsets; opacity is
    the soft-argmax confidence; scales are isotropic pixel footprints
    proportional to depth / fx; rotations start at identity; the SH DC
    band reproduces the source pixel color; the feature payload is a
    fixed linear map of the local feature vector.

    ``depth_map``, ``features``, and ``view.image`` must share the
    resolution implied by ``view.intrinsics``.
    """
    k = view.intrinsics
    h, w = depth_map.depth.shape
    if (k.height, k.width) != (h, w):
        raise ValidationError(
            f"depth map {h}x{w} does not match intrinsics {k.height}x{k.width}"
        )
    if view.image is None or view.image.shape[:2] != (h, w):
        raise ValidationError("view image missing or resolution mismatch")
    if (features.height, features.width) != (h, w):
        raise ValidationError("feature map resolution mismatch")
    if offsets is None:
        offsets = np.zeros((h, w, 3))
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.shape != (h, w, 3) or not np.all(np.isfinite(offsets)):
        raise ValidationError("offsets must be finite with shape (H, W, 3)")

    means = unproject_grid(depth_map.depth, k, view.pose) + offsets
    n = h * w
    depths = depth_map.depth.reshape(n)
    scales = np.repeat((head.scale_gain * depths / k.fx)[:, None], 3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    bands = (head.sh_order + 1) ** 2
    sh = np.zeros((n, bands, 3))
    sh[:, 0, :] = (view.image.reshape(n, 3) - 0.5) / Y00
    proj = feature_projection(features.channels, head.feature_channels)
    payload = features.data.reshape(features.channels, n).T @ proj.T

    ys, xs = np.meshgrid(np.arange(h, dtype=np.int32), np.arange(w, dtype=np.int32),
                         indexing="ij")
    cloud = GaussianCloud(
        means=means.reshape(n, 3),
        opacities=np.clip(depth_map.confidence.reshape(n), 0.0, 1.0),
        scales=scales,
        rotations=rotations,
        sh_coeffs=sh,
        features=payload,
        src_view=np.full(n, view.index, dtype=np.int32),
        src_pixel=np.stack([ys.reshape(n), xs.reshape(n)], axis=1).astype(np.int32),
    )
    return cloud
