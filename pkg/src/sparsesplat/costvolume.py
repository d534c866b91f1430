"""Plane-sweep cost volumes and softmax depth estimation.

For a reference view i, neighbor features are warped onto each depth
plane and correlated per pixel: C_D = <F_warped, F_ref> / sqrt(C). The
stored slice is the validity-weighted mean over the view's local-group
neighbors. Depth is recovered per pixel as the softmax-expected plane
depth (soft-argmax); the max softmax weight doubles as a confidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .features import FeatureMap, LocalGroup
from .geometry import CameraView, DepthPlanes, plane_sweep_warp


@dataclass
class CostVolume:
    """Per-view correlation stack (L, H, W) plus a validity fraction."""

    view_index: int
    planes: DepthPlanes
    data: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        if self.data.shape != self.validity.shape:
            raise ValidationError("cost volume data/validity shape mismatch")
        if self.data.shape[0] != self.planes.count:
            raise ValidationError(
                f"volume has {self.data.shape[0]} slices for {self.planes.count} planes"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("cost volume contains non-finite values")


@dataclass
class DepthMap:
    """Per-pixel depths in [near, far] and softmax confidence in [0, 1]."""

    depth: np.ndarray
    confidence: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if self.depth.shape != self.confidence.shape:
            raise ValidationError("depth/confidence shape mismatch")
        if self.depth.min() < self.near - 1e-9 or self.depth.max() > self.far + 1e-9:
            raise ValidationError("depth values outside [near, far]")


def correlate(f_warped: FeatureMap, f_ref: FeatureMap,
              valid: np.ndarray | None = None) -> np.ndarray:
    """Per-pixel channel dot product divided by sqrt(C).

    Invalid-warp pixels (per ``valid``) contribute zero.
    """
    if f_warped.data.shape != f_ref.data.shape:
        raise ValidationError(
            f"feature shape mismatch: {f_warped.data.shape} vs {f_ref.data.shape}"
        )
    c = f_warped.channels
    corr = np.einsum("chw,chw->hw", f_warped.data, f_ref.data) / np.sqrt(c)
    if valid is not None:
        corr = corr * valid
    return corr


def build_cost_volume(view_index: int, feature_maps: Sequence[FeatureMap],
                      group: LocalGroup, planes: DepthPlanes,
                      cameras: Sequence[CameraView]) -> CostVolume:
    """Sweep all planes, warping each local-group neighbor onto the reference.

    Each slice is the validity-weighted mean of the per-neighbor
    correlations; the validity channel stores the fraction of neighbors
    with a valid warp per pixel.
    """
    neighbors = group.neighbors[view_index]
    if not neighbors:
        raise ValidationError(f"view {view_index} has no neighbors")
    ref = feature_maps[view_index]
    l, h, w = planes.count, ref.height, ref.width
    data = np.zeros((l, h, w))
    validity = np.zeros((l, h, w))
    for m, depth in enumerate(planes.values):
        acc = np.zeros((h, w))
        weight = np.zeros((h, w))
        for j in neighbors:
            warped, valid = plane_sweep_warp(feature_maps[j], cameras[view_index],
                                             cameras[j], float(depth))
            acc += correlate(warped, ref, valid)
            weight += valid
        nonzero = weight > 0
        data[m][nonzero] = acc[nonzero] / weight[nonzero]
        validity[m] = weight / len(neighbors)
    return CostVolume(view_index=view_index, planes=planes, data=data, validity=validity)


def depth_from_volume(volume: CostVolume) -> DepthMap:
    """Soft-argmax depth: softmax over planes, expectation of plane depths."""
    corr = volume.data
    shifted = corr - corr.max(axis=0, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=0, keepdims=True)
    depth = np.einsum("lhw,l->hw", weights, volume.planes.values)
    depth = np.clip(depth, volume.planes.near, volume.planes.far)
    confidence = weights.max(axis=0)
    return DepthMap(depth=depth, confidence=confidence,
                    near=volume.planes.near, far=volume.planes.far)
