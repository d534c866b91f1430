"""Per-view feature extraction and local-group neighbor selection.

The built-in extractor is deterministic (no learned weights): 8 channels
at 1/scale resolution combining area-averaged color, luma gradient
magnitudes, and per-channel local variance. Alternatives can be
registered by name and selected through the pipeline config.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .imageops import LUMA_WEIGHTS


@dataclass
class FeatureMap:
    """Dense per-view feature grid, planar (C, H, W)."""

    data: np.ndarray
    view_index: int = -1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValidationError(f"feature data must be (C, H, W), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValidationError(f"degenerate feature shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature map contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LocalGroup:
    """Per-view neighbor lists (no view is its own neighbor)."""

    neighbors: tuple
    k: int

    def __post_init__(self):
        for i, group in enumerate(self.neighbors):
            if i in group:
                raise ValidationError(f"view {i} lists itself as a neighbor")


def extract_features(image: np.ndarray, scale: int = 4, view_index: int = -1) -> FeatureMap:
    """Deterministic 8-channel features at 1/scale resolution.

    Channels: 3 area-averaged colors, 2 luma gradient magnitudes
    (horizontal, vertical), 3 per-channel local variances. ``scale`` must
    divide both image dimensions; pixel values must lie in [0, 1].
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]
    if scale < 1 or h % scale or w % scale:
        raise ValidationError(f"scale {scale} does not divide image size {h}x{w}")
    if image.min() < -1e-9 or image.max() > 1 + 1e-9:
        raise ValidationError("image values must lie in [0, 1]")
    blocks = image.reshape(h // scale, scale, w // scale, scale, 3)
    color = blocks.mean(axis=(1, 3))
    var = blocks.var(axis=(1, 3))
    lum = color @ LUMA_WEIGHTS
    gy, gx = np.gradient(lum)
    data = np.concatenate(
        [
            np.moveaxis(color, -1, 0),
            np.abs(gx)[None],
            np.abs(gy)[None],
            np.moveaxis(var, -1, 0),
        ],
        axis=0,
    )
    return FeatureMap(data=data, view_index=view_index)


_EXTRACTORS: dict[str, Callable[..., FeatureMap]] = {"builtin": extract_features}


def register_extractor(name: str, fn: Callable[..., FeatureMap]) -> None:
    """Register an alternative (image, scale) -> FeatureMap extractor."""
    _EXTRACTORS[name] = fn


def get_extractor(name: str) -> Callable[..., FeatureMap]:
    if name not in _EXTRACTORS:
        raise ValidationError(f"unknown extractor '{name}' (have {sorted(_EXTRACTORS)})")
    return _EXTRACTORS[name]


def local_group(camera_positions: Sequence[np.ndarray], k: int = 2) -> LocalGroup:
    """k nearest other views per view, by Euclidean distance of camera centers.

    Ties break toward the lower view index. Coincident camera centers are
    not an error; the tie-break still applies. Each list has exactly
    min(k, N-1) entries.
    """
    positions = np.asarray(camera_positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[0] < 2:
        raise ValidationError("need at least two camera positions")
    if not np.all(np.isfinite(positions)):
        raise ValidationError("camera positions must be finite")
    n = positions.shape[0]
    take = min(k, n - 1)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    neighbors = []
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, dist[i]))
        neighbors.append(tuple(int(j) for j in order[:take]))
    return LocalGroup(neighbors=tuple(neighbors), k=k)
