"""Per-channel color histogram matching.

Refined views can drift in color relative to the splat renders; before
pixel-aligned scoring each refined frame is remapped so its per-channel
histogram matches the corresponding render. Values are binned into 256
uniform bins; source pixels map through the midpoint empirical CDF and
back through the reference's inverse CDF by monotone piecewise-linear
interpolation over the bin centers. The midpoint convention sends a
constant image to the reference median and keeps the map monotone.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

BINS = 256


def _midpoint_cdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.clip((values * BINS).astype(np.int64), 0, BINS - 1)
    hist = np.bincount(idx, minlength=BINS).astype(np.float64)
    cum = np.cumsum(hist)
    return (cum - hist / 2.0) / values.size, idx


def histogram_match(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Match each channel of ``src`` to the histogram of ``ref``.

    Both images share a shape with values in [0, 1]; the per-channel rank
    order of ``src`` is preserved (ties may merge).
    """
    src = np.asarray(src, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if src.shape != ref.shape:
        raise ValidationError(f"size mismatch: {src.shape} vs {ref.shape}")
    for name, img in (("src", src), ("ref", ref)):
        if img.min() < -1e-9 or img.max() > 1 + 1e-9:
            raise ValidationError(f"{name} values must lie in [0, 1]")
    if src.ndim == 2:
        return _match_channel(src, ref)
    out = np.empty_like(src)
    for c in range(src.shape[-1]):
        out[..., c] = _match_channel(src[..., c], ref[..., c])
    return out


def _match_channel(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    cdf_src, src_bins = _midpoint_cdf(np.clip(src.ravel(), 0.0, 1.0))
    cdf_ref, _ = _midpoint_cdf(np.clip(ref.ravel(), 0.0, 1.0))
    quantiles = cdf_src[src_bins]
    centers = (np.arange(BINS) + 0.5) / BINS
    # Strictly increasing knots keep np.interp well defined on empty bins.
    knots = cdf_ref + np.arange(BINS) * 1e-12
    out = np.interp(quantiles, knots, centers)
    return np.clip(out, 0.0, 1.0).reshape(src.shape)
