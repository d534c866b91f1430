"""Feed-forward sparse-view reconstruction and rendering.

Plane-sweep cost volumes over posed input views yield per-pixel depth;
each pixel becomes a 3D Gaussian carrying color and a multi-channel
feature payload; a differentiable tile-based rasterizer renders RGB,
features, depth, and alpha for novel poses; and a deterministic toy
diffusion stack (schedules, v-prediction, conditioning, sampling,
latent alignment) refines the renders.
"""

from .costvolume import CostVolume, DepthMap, build_cost_volume, correlate, depth_from_volume
from .diffusion import (ConditionBundle, DiffusionState, NoiseSchedule, StencilDenoiser,
                        ToyAutoencoder, add_noise, alignment_loss, assemble_conditions,
                        diffusion_loss, sample, v_target, v_to_z0, window_partition)
from .errors import (NumericError, SceneError, SparseSplatError, StageError,
                     ValidationError)
from .features import FeatureMap, LocalGroup, extract_features, local_group, register_extractor
from .gaussians import (GaussianCloud, GaussianHead, build_gaussians, covariance,
                        sh_color)
from .geometry import (CameraView, DepthPlanes, Intrinsics, Pose, depth_planes, look_at,
                       plane_sweep_warp, project, unproject)
from .metrics import psnr, ssim
from .pipeline import (PipelineConfig, PipelineResult, fit_demo, forward_pipeline,
                       orbit_targets, reconstruction_loss)
from .postprocess import histogram_match
from .rasterizer import (RasterizeOptions, RenderGradients, RenderOutput,
                         project_gaussian, rasterize, rasterize_backward,
                         reference_rasterize)
from .scene_io import Scene, SceneManifest, generate_synthetic_scene, load_scene
from .viewselect import SelectionPlan, curriculum, evaluation_split, fps

__version__ = "0.1.0"
