"""The diffusion math stack on its own: schedules, noising, v-prediction,
the frozen toy autoencoder, conditioning, deterministic sampling, and the
latent alignment loss.
"""

import numpy as np

from sparsesplat import (ConditionBundle, NoiseSchedule, StencilDenoiser,
                         ToyAutoencoder, add_noise, alignment_loss,
                         assemble_conditions, diffusion_loss, sample, v_target,
                         v_to_z0, window_partition)
from sparsesplat.diffusion import FixedPointDenoiser, embed_view_statistics
from sparsesplat.imageops import resize_bilinear

rng = np.random.default_rng(0)

# --- schedule: alpha_t^2 + sigma_t^2 = 1 everywhere -------------------------
sched = NoiseSchedule.cosine(1000)
ident = max(abs(sched.alpha(t) ** 2 + sched.sigma(t) ** 2 - 1.0)
            for t in range(1001))
print(f"cosine schedule, T={sched.steps}: worst |alpha^2+sigma^2-1| = {ident:.1e}")

# --- forward noising and the v round trip ----------------------------------
z0 = rng.standard_normal((2, 4, 8, 8))
eps = rng.standard_normal(z0.shape)
t = 400
z_t = add_noise(z0, t, eps, sched)
v = v_target(z0, eps, sched, t)
back = v_to_z0(z_t, v, sched, t)
print(f"v round trip at t={t}: max |back - z0| = {np.max(np.abs(back - z0)):.1e}")

# A denoiser that emits the true velocity drives the loss to zero.
oracle = lambda z, t_, cond: v_target(z0, eps, sched, t_)
cond = ConditionBundle(spatial=np.zeros(z0.shape), global_embed=np.zeros(19))
print(f"diffusion loss with oracle denoiser: "
      f"{diffusion_loss(oracle, z0, t, eps, cond, sched):.1e}")

# --- frozen autoencoder: patch means survive the round trip -----------------
ae = ToyAutoencoder()
img = rng.uniform(0, 1, (64, 96, 3))
recon = ae.decode(ae.encode(img))
patch_means = lambda x: x.reshape(8, 8, 12, 8, 3).mean(axis=(1, 3))
print(f"autoencoder patch-mean error: "
      f"{np.max(np.abs(patch_means(recon) - patch_means(img))):.1e}")
print(f"latent shape for a 2x-upscaled 64x96 image: "
      f"{ae.encode(np.moveaxis(resize_bilinear(np.moveaxis(img, -1, 0), 128, 192), 0, -1)).shape}")

# --- hybrid conditioning -----------------------------------------------------
feats = [rng.standard_normal((4, 64, 96)) for _ in range(3)]
embeddings = [embed_view_statistics(rng.uniform(0, 1, (32, 32, 3)))
              for _ in range(5)]
bundle = assemble_conditions(feats, embeddings)
print(f"condition bundle: spatial {bundle.spatial.shape}, "
      f"global {bundle.global_embed.shape}")
print(f"56 frames in windows of 14: "
      f"{[len(w) for w in window_partition(56, 14)]}")

# --- deterministic sampling --------------------------------------------------
target_latents = rng.standard_normal((2, 4, 8, 8))
denoiser = FixedPointDenoiser(sched, target_latents)
latents, images = sample(denoiser, cond, sched, steps=12, seed=7)
print(f"fixed-point sampler: |latents - target| = "
      f"{np.max(np.abs(latents - target_latents)):.1e}")
again, _ = sample(StencilDenoiser(), bundle, sched, steps=6, seed=3)
once, _ = sample(StencilDenoiser(), bundle, sched, steps=6, seed=3)
print(f"stencil sampler bitwise deterministic: {np.array_equal(once, again)}")

# --- latent alignment loss ---------------------------------------------------
target_img = rng.uniform(0, 1, (16, 24, 3))
up = np.moveaxis(resize_bilinear(np.moveaxis(target_img, -1, 0), 32, 48), 0, -1)
perfect = ae.encode(up)
print(f"alignment loss, perfectly aligned: "
      f"{alignment_loss(ae.encode, target_img[None], perfect[None]):.1e}")
print(f"alignment loss, 0.3 offset: "
      f"{alignment_loss(ae.encode, target_img[None], (perfect + 0.3)[None]):.4f} "
      f"(expect 0.09)")
