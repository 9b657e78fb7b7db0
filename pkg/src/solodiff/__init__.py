"""Diffusion models trained on a single image or a single video.

The package implements an attention-free fully-convolutional DDPM that
trains on large crops of one image, the three-model video framework built
from it (frame predictor, frame projector, frame interpolator), the
generation pipelines they enable (diverse image/video generation, temporal
extrapolation and upsampling, image refinement), and the matching evaluation
machinery (future-frame prediction benchmark, nearest-neighbour-field
diversity metrics).
"""

__version__ = "0.1.0"

from .clips import VideoClip
from .diffusion import (
    DiffusionSchedule,
    NoisySample,
    ParameterError,
    build_schedule,
    forward_diffuse,
    invert_forward,
    loss_epsilon,
    loss_x0,
    reverse_step,
    sample_loop,
    truncated_project,
)
from .network import (
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    EmbeddingVector,
    build_denoiser,
    denoise_forward,
    embed_scalar,
    receptive_field_radius,
)
from .training import (
    CropPolicy,
    CurriculumState,
    TrainResult,
    TrainTask,
    TrainingDiverged,
    config_for_role,
    curriculum_k,
    sample_crop,
    train_image_ddpm,
    train_interpolator,
    train_predictor,
)
from .pipelines import (
    GeneratedVideo,
    VideoGenSpec,
    correct_frame,
    extrapolate,
    generate_image,
    generate_video,
    predict_next_frame,
    refine_image,
    upsample_temporal,
)

__all__ = [name for name in dir() if not name.startswith("_")]
