"""ndfield: per-scene neural disparity fields from 4D light-field data.

Reconstructs a continuous, coordinate-based disparity function from a grid
of sub-aperture views by optimizing a hash-grid + MLP field through a
differentiable warping forward model with an occlusion-robust viewpoint
selection loss.
"""

from . import backend
from .errors import DataError, DivergenceError, NdfieldError
from .lfdata import (DisparityMap, LightField, SceneSpec, ViewCoordinate,
                     load_lightfield, load_scene, read_pfm, save_lightfield,
                     scene_disparity, synth_lightfield, view_image, write_pfm)
from .loss import (LossWeights, ViewSelection, mssim_map, objective_full,
                   select_views, training_loss, tv_term, view_distance)
from .metrics import MetricsReport, badpix, evaluate, mse100, profile_line
from .ndf import (NDFModel, encode, init_model, load_checkpoint,
                  model_backward, param_count, predict, render_grid,
                  save_checkpoint)
from .optim import (OptimizerState, PatchBatch, ReconstructionConfig,
                    grad_check, noise_sigma, read_config, reconstruct,
                    sample_patches, train_step, write_config)
from .warp import (WarpBatch, WarpSample, aggregate_center, bilinear_sample,
                   warp_all_views, warp_view)

__version__ = "0.1.0"
