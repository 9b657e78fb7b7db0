"""Application pipelines built from trained models.

Video generation is autoregressive: each new frame is a full conditional
sample from the predictor given the previous generated frame, then run
through a shallow noise/denoise pass of the projector to pull its patches
back onto the training distribution before it is used as the next condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clips import VideoClip
from .diffusion import (
    DiffusionSchedule,
    ParameterError,
    sample_loop,
    truncated_project,
)
from .network import Denoiser, denoise_forward


@dataclass
class VideoGenSpec:
    """Parameters of one diverse-generation / extrapolation run."""

    length: int
    seed_frame: np.ndarray | None = None
    direction: str = "forward"
    t_corr: int = 3  # 0 disables projector correction (ablation)
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ParameterError("video length must be >= 1")
        if self.direction not in ("forward", "backward"):
            raise ParameterError(f"unknown direction {self.direction!r}")
        if self.t_corr < 0:
            raise ParameterError("t_corr must be >= 0 (0 disables correction)")


@dataclass
class GeneratedVideo:
    frames: list[np.ndarray]
    provenance: list[str] = field(default_factory=list)

    def clip(self) -> VideoClip:
        return VideoClip(np.stack(self.frames))


def _require_role(net: Denoiser, role: str) -> None:
    if net.role != role:
        raise ParameterError(f"model has role {net.role!r}, pipeline needs {role!r}")


def _uncond_fn(net: Denoiser):
    return lambda x, t: denoise_forward(net, x, (), t).prediction


def _cond_fn(net: Denoiser, conds: list[np.ndarray], k: int | None):
    return lambda x, t: denoise_forward(net, x, conds, t, k).prediction


def generate_image(
    projector: Denoiser,
    shape: tuple[int, int, int],
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Unconditional sample at any requested shape (fully convolutional)."""
    if projector.role not in ("image", "projector"):
        raise ParameterError(
            f"generate_image needs an image/projector model, got role {projector.role!r}"
        )
    if min(shape[1], shape[2]) < projector.cfg.min_input_size:
        raise ParameterError(
            f"requested {shape[1]}x{shape[2]} below minimum size "
            f"{projector.cfg.min_input_size}"
        )
    return sample_loop(_uncond_fn(projector), shape, projector.pred_mode, sched, rng)


def correct_frame(
    frame: np.ndarray,
    projector: Denoiser,
    t_corr: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Shallow noise/denoise pass that removes small artifacts from a frame."""
    return truncated_project(
        frame, t_corr, _uncond_fn(projector), projector.pred_mode, sched, rng
    )


def predict_next_frame(
    predictor: Denoiser,
    cond: np.ndarray,
    k: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full conditional sample of the frame at signed gap k from ``cond``."""
    _require_role(predictor, "predictor")
    fn = _cond_fn(predictor, [np.ascontiguousarray(cond, dtype=np.float32)], k)
    return sample_loop(fn, cond.shape, predictor.pred_mode, sched, rng)


def generate_video(
    predictor: Denoiser,
    projector: Denoiser | None,
    spec: VideoGenSpec,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> GeneratedVideo:
    """Autoregressive diverse video generation.

    Frame 1 is the seed frame if given, otherwise an unconditional projector
    sample. Every following frame is predicted from its predecessor with
    k=+1 (forward) or k=-1 (backward) and, unless t_corr == 0, corrected by
    the projector.
    """
    _require_role(predictor, "predictor")
    correcting = spec.t_corr > 0
    if projector is not None:
        if projector.role not in ("image", "projector"):
            raise ParameterError(
                f"projector handle has role {projector.role!r}"
            )
    elif correcting or spec.seed_frame is None:
        raise ParameterError("a projector model is required unless t_corr=0 and a seed frame is given")

    k = 1 if spec.direction == "forward" else -1
    frames: list[np.ndarray] = []
    provenance: list[str] = []
    if spec.seed_frame is not None:
        first = np.ascontiguousarray(spec.seed_frame, dtype=np.float32)
        if predictor.train_size is not None and first.shape[1:] != tuple(
            predictor.train_size
        ):
            raise ParameterError(
                f"seed frame {first.shape[1:]} does not match the predictor's "
                f"training resolution {predictor.train_size}"
            )
        provenance.append("seeded")
    else:
        h, w = projector.train_size if projector.train_size else (None, None)
        if h is None:
            raise ParameterError("projector has no recorded training size; pass a seed frame")
        first = generate_image(projector, (3, h, w), sched, rng)
        provenance.append("projector_sampled")
    frames.append(first)

    for _ in range(spec.length - 1):
        pred = predict_next_frame(predictor, frames[-1], k, sched, rng)
        if correcting:
            pred = correct_frame(pred, projector, spec.t_corr, sched, rng)
            provenance.append("predicted+corrected")
        else:
            provenance.append("predicted")
        frames.append(pred)
    return GeneratedVideo(frames=frames, provenance=provenance)


def extrapolate(
    video: VideoClip,
    predictor: Denoiser,
    projector: Denoiser | None,
    direction: str,
    count: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    t_corr: int = 3,
) -> GeneratedVideo:
    """Continue a real video beyond its last frame (or before its first).

    Returns only the newly generated frames, oldest-first for forward and
    closest-to-the-input-first for backward.
    """
    if count < 0:
        raise ParameterError("count must be >= 0")
    if count == 0:
        return GeneratedVideo(frames=[], provenance=[])
    seed = video.frame(len(video) - 1) if direction == "forward" else video.frame(0)
    spec = VideoGenSpec(
        length=count + 1, seed_frame=seed, direction=direction, t_corr=t_corr
    )
    out = generate_video(predictor, projector, spec, sched, rng)
    return GeneratedVideo(frames=out.frames[1:], provenance=out.provenance[1:])


def upsample_temporal(
    video: VideoClip,
    interpolator: Denoiser,
    projector: Denoiser | None,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    t_corr: int = 3,
) -> VideoClip:
    """Double the frame rate: sample a new frame between every adjacent pair.

    Originals land on even output indices untouched; each odd index holds an
    interpolator sample conditioned on its two neighbours, corrected by the
    projector unless t_corr == 0.
    """
    _require_role(interpolator, "interpolator")
    if len(video) < 2:
        raise ParameterError("temporal upsampling needs at least 2 frames")
    out: list[np.ndarray] = []
    for i in range(len(video) - 1):
        left = np.ascontiguousarray(video.frame(i), dtype=np.float32)
        right = np.ascontiguousarray(video.frame(i + 1), dtype=np.float32)
        fn = _cond_fn(interpolator, [left, right], None)
        mid = sample_loop(fn, left.shape, interpolator.pred_mode, sched, rng)
        if t_corr > 0:
            if projector is None:
                raise ParameterError("projector required when t_corr > 0")
            mid = correct_frame(mid, projector, t_corr, sched, rng)
        out.append(video.frame(i))
        out.append(mid)
    out.append(video.frame(len(video) - 1))
    return VideoClip(np.stack(out))


def refine_image(
    image: np.ndarray,
    image_ddpm: Denoiser,
    t_start: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Project an (edited, sketched, corrupted) image back onto the model.

    Noises the input to step t_start and denoises back; larger t_start means
    stronger deviation from the input, t_start == T is a full re-generation.
    """
    if image_ddpm.role not in ("image", "projector"):
        raise ParameterError(
            f"refine_image needs an image/projector model, got role {image_ddpm.role!r}"
        )
    return truncated_project(
        np.ascontiguousarray(image, dtype=np.float32),
        t_start,
        _uncond_fn(image_ddpm),
        image_ddpm.pred_mode,
        sched,
        rng,
    )
