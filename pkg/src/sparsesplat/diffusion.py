"""Diffusion math and conditioning scaffolding over pluggable components.

The schedule stores cumulative products alpha_bar_t in (0, 1] with
alpha_t = sqrt(alpha_bar_t) and sigma_t = sqrt(1 - alpha_bar_t), so
alpha_t^2 + sigma_t^2 = 1 identically. Forward noising follows

    z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps,

the denoiser predicts the velocity v = alpha_t eps - sigma_t z_0, and
predictions translate back via z0_hat = alpha_t z_t - sigma_t v. The
training loss is the latent MSE |z_0 - z0_hat|^2.

Learned components are interfaces with deterministic toys: an orthonormal
per-patch autoencoder (8x downsample, 4 channels, frozen), a fixed
convolutional-stencil denoiser with learnable scalar gains, and a
per-view statistics embedder standing in for a semantic image encoder.
Conditioning is hybrid: rendered feature maps resized to the latent grid
(concatenated spatially by consumers) plus one global token averaged over
the input views.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import ValidationError
from .imageops import LUMA_WEIGHTS, resize_bilinear, resize_bilinear_adjoint


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_bar_0..alpha_bar_T (alpha_bar_0 = 1), non-increasing in (0, 1]."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or len(ab) < 2:
            raise ValidationError("schedule needs entries for t = 0 .. T")
        if ab[0] != 1.0:
            raise ValidationError("alpha_bar_0 must be 1")
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ValidationError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab) > 0):
            raise ValidationError("alpha_bar must be non-increasing")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return len(self.alpha_bar) - 1

    def alpha(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar[t]))

    def sigma(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar[t]))

    @classmethod
    def cosine(cls, steps: int = 1000, offset: float = 0.008) -> "NoiseSchedule":
        t = np.arange(steps + 1) / steps
        f = np.cos((t + offset) / (1 + offset) * np.pi / 2.0) ** 2
        ab = f / f[0]
        ab = np.minimum.accumulate(np.clip(ab, 1e-40, 1.0))
        ab[0] = 1.0
        return cls(ab)

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, steps)
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(ab)

    @classmethod
    def from_alpha_bar(cls, values: Sequence[float]) -> "NoiseSchedule":
        """Schedule from alpha_bar values for t = 1..T (prepends alpha_bar_0 = 1)."""
        return cls(np.concatenate([[1.0], np.asarray(values, dtype=np.float64)]))


def make_schedule(name: str, steps: int = 1000) -> NoiseSchedule:
    if name == "cosine":
        return NoiseSchedule.cosine(steps)
    if name == "linear":
        return NoiseSchedule.linear(steps)
    raise ValidationError(f"unknown schedule '{name}'")


@dataclass
class DiffusionState:
    """A latent batch mid-trajectory, with the noise used (when training)."""

    z: np.ndarray
    t: int
    noise: np.ndarray | None = None

    def __post_init__(self):
        if self.z.ndim != 4 or self.z.shape[0] < 1:
            raise ValidationError(f"latent batch must be (M, C, h, w), got {self.z.shape}")
        if not np.all(np.isfinite(self.z)):
            raise ValidationError("latent batch contains non-finite values")
        if self.noise is not None and self.noise.shape != self.z.shape:
            raise ValidationError("noise record shape mismatch")


@dataclass
class ConditionBundle:
    """Hybrid condition: spatial latents (M, C, h', w') + one global vector."""

    spatial: np.ndarray
    global_embed: np.ndarray

    def __post_init__(self):
        if self.spatial.ndim != 4:
            raise ValidationError(f"spatial condition must be 4D, got {self.spatial.shape}")
        if not np.all(np.isfinite(self.global_embed)):
            raise ValidationError("global embedding must be finite")


def _check_t(schedule: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= schedule.steps:
        raise ValidationError(f"t={t} outside [1, {schedule.steps}]")


def add_noise(z0: np.ndarray, t: int, eps: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    """Forward perturbation z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    _check_t(schedule, t)
    if z0.shape != eps.shape:
        raise ValidationError(f"shape mismatch: {z0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def v_target(z0: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule,
             t: int) -> np.ndarray:
    """Velocity target v = alpha_t eps - sigma_t z0."""
    _check_t(schedule, t)
    return schedule.alpha(t) * eps - schedule.sigma(t) * z0


def v_to_z0(z_t: np.ndarray, v: np.ndarray, schedule: NoiseSchedule,
            t: int) -> np.ndarray:
    """Translate a velocity prediction back to the clean latent."""
    _check_t(schedule, t)
    return schedule.alpha(t) * z_t - schedule.sigma(t) * v


def diffusion_loss(denoiser, z0: np.ndarray, t: int, eps: np.ndarray,
                   cond: ConditionBundle, schedule: NoiseSchedule) -> float:
    """Latent-space MSE between z0 and the denoiser's implied clean latent."""
    z_t = add_noise(z0, t, eps, schedule)
    v = denoiser(z_t, t, cond)
    if v.shape != z_t.shape:
        raise ValidationError(f"denoiser output shape {v.shape} != {z_t.shape}")
    z0_hat = v_to_z0(z_t, v, schedule, t)
    return float(np.mean((z0 - z0_hat) ** 2))


def assemble_conditions(rendered_feats: Sequence[np.ndarray],
                        view_embeddings: Sequence[np.ndarray]) -> ConditionBundle:
    """Resize rendered feature maps to the latent grid; average the tokens.

    Feature maps are planar (C, h, w); the latent grid is (h/4, w/4),
    matching latents encoded from 2x-upscaled images through the 8x
    encoder.
    """
    if len(rendered_feats) == 0 or len(view_embeddings) == 0:
        raise ValidationError("need at least one feature map and one embedding")
    maps = [np.asarray(f, dtype=np.float64) for f in rendered_feats]
    c, h, w = maps[0].shape
    if h % 4 or w % 4:
        raise ValidationError(f"feature size {h}x{w} not divisible by 4")
    spatial = np.stack([resize_bilinear(m, h // 4, w // 4) for m in maps])
    global_embed = np.mean(np.stack([np.asarray(e, dtype=np.float64)
                                     for e in view_embeddings]), axis=0)
    return ConditionBundle(spatial=spatial, global_embed=global_embed)


def window_partition(frame_count: int, window: int) -> list[list[int]]:
    """Contiguous non-overlapping index windows; the last may be shorter."""
    if frame_count < 1 or window < 1:
        raise ValidationError("frame count and window must be positive")
    return [list(range(lo, min(lo + window, frame_count)))
            for lo in range(0, frame_count, window)]


def sample(denoiser, cond: ConditionBundle, schedule: NoiseSchedule,
           steps: int, seed: int, decoder=None):
    """Deterministic ancestral sampling from pure noise.

    Start z_T ~ N(0, I) from the seeded generator; at each step predict
    v, form z0_hat, and re-noise deterministically to the next timestep
    using the noise implied by the current state (no added stochasticity).
    Returns (final latents, decoded images clamped to [0, 1]).
    """
    if steps < 1 or steps > schedule.steps:
        raise ValidationError(f"steps {steps} outside [1, {schedule.steps}]")
    if decoder is None:
        decoder = ToyAutoencoder().decode
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(cond.spatial.shape)
    ts = np.unique(np.round(np.linspace(schedule.steps, 1, steps)).astype(int))[::-1]
    for i, t in enumerate(ts):
        t = int(t)
        v = denoiser(z, t, cond)
        if v.shape != z.shape:
            raise ValidationError(f"denoiser output shape {v.shape} != {z.shape}")
        z0_hat = schedule.alpha(t) * z - schedule.sigma(t) * v
        if i + 1 == len(ts):
            z = z0_hat
        else:
            sigma_t = schedule.sigma(t)
            eps_hat = (z - schedule.alpha(t) * z0_hat) / sigma_t if sigma_t > 0 \
                else np.zeros_like(z)
            t_next = int(ts[i + 1])
            z = schedule.alpha(t_next) * z0_hat + schedule.sigma(t_next) * eps_hat
    images = [np.clip(decoder(frame), 0.0, 1.0) for frame in z]
    return z, images


def alignment_loss(encoder, targets: np.ndarray, rendered_feats: np.ndarray) -> float:
    """Latent MSE between encoded targets and rendered feature latents.

    Targets (M, h, w, 3) are upscaled 2x bilinearly before encoding (the
    resolution contract); rendered features (M, C, h, w) are resized to
    the same latent grid. The encoder is frozen: gradients belong to the
    rendered features only (see :func:`alignment_loss_grad`).
    """
    latents, feats = _aligned_pair(encoder, targets, rendered_feats)
    return float(np.mean((latents - feats) ** 2))


def alignment_loss_grad(encoder, targets: np.ndarray,
                        rendered_feats: np.ndarray) -> np.ndarray:
    """d(alignment_loss)/d(rendered_feats), at full feature resolution."""
    latents, feats = _aligned_pair(encoder, targets, rendered_feats)
    d_lat = 2.0 * (feats - latents) / latents.size
    m, c, h, w = rendered_feats.shape
    return np.stack([resize_bilinear_adjoint(d_lat[i], h, w) for i in range(m)])


def _aligned_pair(encoder, targets, rendered_feats):
    targets = np.asarray(targets, dtype=np.float64)
    rendered_feats = np.asarray(rendered_feats, dtype=np.float64)
    if targets.ndim == 3:
        targets = targets[None]
    if rendered_feats.ndim == 3:
        rendered_feats = rendered_feats[None]
    if targets.shape[0] != rendered_feats.shape[0]:
        raise ValidationError("frame-count mismatch between targets and features")
    latents = []
    for img in targets:
        h, w = img.shape[:2]
        up = resize_bilinear(np.moveaxis(img, -1, 0), 2 * h, 2 * w)
        latents.append(encoder(np.moveaxis(up, 0, -1)))
    latents = np.stack(latents)
    m, c, h, w = rendered_feats.shape
    feats = np.stack([resize_bilinear(rendered_feats[i], latents.shape[2],
                                      latents.shape[3]) for i in range(m)])
    if latents.shape != feats.shape:
        raise ValidationError(
            f"latent/feature shape mismatch after the resolution contract: "
            f"{latents.shape} vs {feats.shape}"
        )
    return latents, feats


class ToyAutoencoder:
    """Frozen per-patch orthonormal autoencoder: 8x downsample, 4 channels.

    The first three latent channels are exact per-channel patch means
    (scaled), so decode(encode(x)) reproduces 8x8-patch means; the fourth
    is a horizontal luma-edge channel orthogonal to the first three.
    Linear, deterministic, never trained.
    """

    downsample = 8
    channels = 4

    def __init__(self):
        patch = self.downsample
        basis = np.zeros((self.channels, patch, patch, 3))
        for c in range(3):
            basis[c, :, :, c] = 1.0 / patch
        edge = np.zeros((patch, patch, 3))
        sign = np.where(np.arange(patch) < patch // 2, 1.0, -1.0)
        for c in range(3):
            edge[:, :, c] = LUMA_WEIGHTS[c] * sign[None, :]
        basis[3] = edge / np.linalg.norm(edge)
        self._basis = basis

    def encode(self, image: np.ndarray) -> np.ndarray:
        """(h, w, 3) image -> (4, h/8, w/8) latent."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValidationError(f"expected (h, w, 3) image, got {image.shape}")
        h, w = image.shape[:2]
        p = self.downsample
        if h % p or w % p:
            raise ValidationError(f"image size {h}x{w} not divisible by {p}")
        patches = image.reshape(h // p, p, w // p, p, 3)
        return np.einsum("hpwqc,kpqc->khw", patches, self._basis)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """(4, h', w') latent -> (8h', 8w', 3) image."""
        latent = np.asarray(latent, dtype=np.float64)
        if latent.ndim != 3 or latent.shape[0] != self.channels:
            raise ValidationError(f"expected (4, h', w') latent, got {latent.shape}")
        patches = np.einsum("khw,kpqc->hpwqc", latent, self._basis)
        hh, p, ww, q, c = patches.shape
        return patches.reshape(hh * p, ww * q, c)


def embed_view_statistics(image: np.ndarray) -> np.ndarray:
    """Per-view global token: mean RGB plus a 16-bin luma histogram."""
    image = np.asarray(image, dtype=np.float64)
    mean_rgb = image.reshape(-1, 3).mean(axis=0)
    lum = image.reshape(-1, 3) @ LUMA_WEIGHTS
    hist, _ = np.histogram(lum, bins=16, range=(0.0, 1.0))
    return np.concatenate([mean_rgb, hist / max(lum.size, 1)])


class StencilDenoiser:
    """Toy denoiser: fixed stencils with learnable scalar gains.

    v = g0 * z + g1 * box3(z) + g2 * cond.spatial + g3 * mean(global).
    Linear in the gains, which makes the loss gradient exactly computable
    for the plumbing checks.
    """

    def __init__(self, gains=(0.6, 0.2, 0.2, 0.0)):
        self.gains = np.asarray(gains, dtype=np.float64)

    def basis(self, z: np.ndarray, t: int, cond: ConditionBundle) -> np.ndarray:
        if cond.spatial.shape != z.shape:
            raise ValidationError(
                f"spatial condition {cond.spatial.shape} does not match latent {z.shape}"
            )
        blur = uniform_filter(z, size=(1, 1, 3, 3), mode="nearest")
        glob = np.full_like(z, float(np.mean(cond.global_embed)))
        return np.stack([z, blur, cond.spatial, glob])

    def __call__(self, z: np.ndarray, t: int, cond: ConditionBundle) -> np.ndarray:
        return np.einsum("g,g...->...", self.gains, self.basis(z, t, cond))


def diffusion_loss_gain_gradient(denoiser: StencilDenoiser, z0: np.ndarray, t: int,
                                 eps: np.ndarray, cond: ConditionBundle,
                                 schedule: NoiseSchedule) -> np.ndarray:
    """Analytic d(diffusion_loss)/d(gains) for the stencil denoiser."""
    z_t = add_noise(z0, t, eps, schedule)
    basis = denoiser.basis(z_t, t, cond)
    v = np.einsum("g,g...->...", denoiser.gains, basis)
    sigma = schedule.sigma(t)
    residual = z0 - (schedule.alpha(t) * z_t - sigma * v)
    weight = 2.0 * sigma * residual / residual.size
    return (basis.reshape(len(denoiser.gains), -1) @ weight.reshape(-1))


class CondOracleDenoiser:
    """Emits the velocity consistent with the spatial condition as z0."""

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    def __call__(self, z: np.ndarray, t: int, cond: ConditionBundle) -> np.ndarray:
        sigma = self.schedule.sigma(t)
        if sigma == 0:
            return np.zeros_like(z)
        return (self.schedule.alpha(t) * z - cond.spatial) / sigma


class FixedPointDenoiser:
    """Emits the velocity consistent with a fixed clean latent z0*."""

    def __init__(self, schedule: NoiseSchedule, z0_star: np.ndarray):
        self.schedule = schedule
        self.z0_star = np.asarray(z0_star, dtype=np.float64)

    def __call__(self, z: np.ndarray, t: int, cond: ConditionBundle) -> np.ndarray:
        sigma = self.schedule.sigma(t)
        if sigma == 0:
            return np.zeros_like(z)
        return (self.schedule.alpha(t) * z - self.z0_star) / sigma


_DENOISERS: dict[str, Callable] = {
    "stencil": lambda schedule: StencilDenoiser(),
    "zero": lambda schedule: (lambda z, t, cond: np.zeros_like(z)),
    "cond_oracle": lambda schedule: CondOracleDenoiser(schedule),
}
_EMBEDDERS: dict[str, Callable] = {"statistics": embed_view_statistics}
_ENCODERS: dict[str, Callable] = {"toy": lambda: ToyAutoencoder()}


def register_denoiser(name: str, builder: Callable) -> None:
    """Register a denoiser builder: (schedule) -> callable (z, t, cond) -> v."""
    _DENOISERS[name] = builder


def make_denoiser(name: str, schedule: NoiseSchedule):
    if name not in _DENOISERS:
        raise ValidationError(f"unknown denoiser '{name}' (have {sorted(_DENOISERS)})")
    return _DENOISERS[name](schedule)


def register_embedder(name: str, fn: Callable) -> None:
    _EMBEDDERS[name] = fn


def make_embedder(name: str):
    if name not in _EMBEDDERS:
        raise ValidationError(f"unknown embedder '{name}' (have {sorted(_EMBEDDERS)})")
    return _EMBEDDERS[name]


def make_autoencoder(name: str = "toy"):
    if name not in _ENCODERS:
        raise ValidationError(f"unknown autoencoder '{name}'")
    return _ENCODERS[name]()
