"""Single-image generative modelling with three GAN tiers.

Stage 0 learns coarse layouts from a GAN-inversion prior (structural tier),
the next ``n`` stages add semantic detail under a perceptual loss (semantic
tier), and the remaining stages add residual texture (texture tier).

Modules
-------
pyramid   cubic / geometric size schedules and image pyramids
priors    GAN inversion, jittered latent dataset, feature extractors
models    stage plans, generators, critics, forward rules
losses    WGAN-GP, perceptual and reconstruction objectives
training  stage trainers, pipeline, checkpoints
tasks     sampling, editing, harmonization, paint-to-image
metrics   SIFID and SSIM diversity
"""
__version__ = "0.1.0"

from .errors import (CapabilityError, DegenerateScheduleError, FormatError, InvalidParameterError,
                     InvalidScheduleError, OptimizationError, TierGANError)
from .pyramid import ImagePyramid, RescaleSchedule, basic_schedule, build_pyramid, make_schedule
from .models import StagePlan, StageSpec, make_plan, positional_encoding, texture_forward
from .losses import LossWeights, adversarial_losses, gradient_penalty, perceptual_loss, reconstruction_loss
from .priors import (BroadcastBackend, FeatureStack, LatentCode, MockExtractor, StructuralDataset,
                     extract_features, invert, jitter_dataset)
from .training import (PriorConfig, TrainConfig, TrainedModel, train_pipeline, train_semantic_stage,
                       train_structural, train_texture_stage)
from .tasks import edit_composite, harmonize, inject, paint_to_image, sample
from .metrics import diversity, frechet_distance, sifid, ssim
