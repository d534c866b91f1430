"""Pixel-aligned metrics (PSNR, SSIM) and report aggregation.

Perceptual metrics need pretrained networks and are out of scope; an
external scorer can be registered and wired into the reconstruction loss
instead.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import correlate

from .errors import ValidationError
from .imageops import luma

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """10 log10(max^2 / MSE), capped at 99 dB (the zero-error sentinel)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(max_val ** 2 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, k1: float = 0.01,
         k2: float = 0.03, sigma: float = 1.5, max_val: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Color inputs are converted to luma first. SSIM(a, a) is exactly 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = luma(a), luma(b)
    if min(a.shape) < window:
        raise ValidationError(f"image {a.shape} smaller than window {window}")
    kernel = _gaussian_kernel(window, sigma)
    margin = window // 2

    def filt(img):
        return correlate(img, kernel, mode="constant")[margin:-margin, margin:-margin]

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


_PERCEPTUAL: dict[str, Callable] = {}


def register_perceptual(name: str, fn: Callable) -> None:
    """Register an external perceptual scorer: (a, b) -> float."""
    _PERCEPTUAL[name] = fn


def get_perceptual(name: str) -> Callable:
    if name not in _PERCEPTUAL:
        raise ValidationError(f"no perceptual scorer '{name}' registered")
    return _PERCEPTUAL[name]


def build_report(frame_indices: Sequence[int], psnr_values: Sequence[float],
                 ssim_values: Sequence[float]) -> dict:
    """Per-frame scores plus means, JSON/CSV serializable."""
    frames = [
        {"frame": int(i), "psnr": float(p), "ssim": float(s)}
        for i, p, s in zip(frame_indices, psnr_values, ssim_values)
    ]
    return {
        "frames": frames,
        "mean_psnr": float(np.mean(psnr_values)) if frames else 0.0,
        "mean_ssim": float(np.mean(ssim_values)) if frames else 0.0,
        "count": len(frames),
    }


def save_report_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1))


def save_report_csv(path, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "psnr", "ssim"])
        for row in report["frames"]:
            writer.writerow([row["frame"], row["psnr"], row["ssim"]])
        writer.writerow(["mean", report["mean_psnr"], report["mean_ssim"]])
