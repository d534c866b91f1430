"""Small image-array helpers: bilinear resizing (and its adjoint), luma,
8-bit conversion. Images are float arrays in [0, 1] with shape (H, W) or
(H, W, C); planar grids use (C, H, W).

Resizing uses the half-pixel-center convention: output pixel center x_out
maps to input coordinate (x_out + 0.5) * (w_in / w_out) - 0.5, clamped to
the valid range. Resizing to the same size is an exact copy.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def luma(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (..., 3) image."""
    if image.shape[-1] != 3:
        raise ValidationError(f"expected trailing RGB axis, got shape {image.shape}")
    return image @ LUMA_WEIGHTS


def _source_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(n_in - 2, 0))
    frac = x - x0
    return x0, np.minimum(x0 + 1, n_in - 1), frac


def resize_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resize the trailing two axes of ``grid`` to (out_h, out_w)."""
    *lead, h, w = grid.shape
    if out_h <= 0 or out_w <= 0:
        raise ValidationError("output size must be positive")
    if (h, w) == (out_h, out_w):
        return grid.copy()
    y0, y1, fy = _source_coords(out_h, h)
    x0, x1, fx = _source_coords(out_w, w)
    a = grid[..., y0[:, None], x0[None, :]]
    b = grid[..., y0[:, None], x1[None, :]]
    c = grid[..., y1[:, None], x0[None, :]]
    d = grid[..., y1[:, None], x1[None, :]]
    fy = fy[:, None]
    fx = fx[None, :]
    top = a * (1.0 - fx) + b * fx
    bot = c * (1.0 - fx) + d * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear_adjoint(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Adjoint of :func:`resize_bilinear` (scatter of the sampling weights).

    Satisfies <resize(x), y> == <x, adjoint(y)> for all x, y; used to push
    latent-space gradients back to full-resolution feature renders.
    """
    *lead, out_h, out_w = grad_out.shape
    if (out_h, out_w) == (in_h, in_w):
        return grad_out.copy()
    y0, y1, fy = _source_coords(out_h, in_h)
    x0, x1, fx = _source_coords(out_w, in_w)
    fy = fy[:, None]
    fx = fx[None, :]
    flat = grad_out.reshape(-1, out_h, out_w)
    out = np.zeros((flat.shape[0], in_h, in_w), dtype=grad_out.dtype)
    yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
    for i in range(flat.shape[0]):
        g = flat[i]
        np.add.at(out[i], (yy0, xx0), g * (1.0 - fy) * (1.0 - fx))
        np.add.at(out[i], (yy0, xx1), g * (1.0 - fy) * fx)
        np.add.at(out[i], (yy1, xx0), g * fy * (1.0 - fx))
        np.add.at(out[i], (yy1, xx1), g * fy * fx)
    return out.reshape(*lead, in_h, in_w)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0
