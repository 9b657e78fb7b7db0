"""Crop sampling and the three training procedures.

All three video models are trained as single-image DDPMs that differ only in
their inputs:

- projector / single image: unconditional, predicts the clean crop
- predictor: conditioned on a frame at signed gap k, predicts the noise,
  with a curriculum that starts at k=1 and gradually opens up to [-k_range,
  k_range] excluding 0
- interpolator: conditioned on the two neighbours of the target frame,
  predicts the clean crop

Training is batch-size-1 over large random crops. All randomness flows from
one numpy Generator so identical seeds give identical parameter trajectories.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .clips import VideoClip
from .diffusion import DiffusionSchedule, ParameterError
from .network import Denoiser, DenoiserConfig, build_denoiser


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class CropPolicy:
    """Uniform random crops at a fixed per-dimension fraction of the source."""

    fraction: float = 0.95
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ParameterError(f"crop fraction must be in (0, 1], got {self.fraction}")


def crop_size(shape_hw: tuple[int, int], fraction: float) -> tuple[int, int]:
    return round(fraction * shape_hw[0]), round(fraction * shape_hw[1])


def sample_crop(
    source: np.ndarray, policy: CropPolicy, min_size: int = 6
) -> tuple[np.ndarray, tuple[int, int]]:
    """Random crop of round(fraction * dims); returns the crop and its offset."""
    h, w = source.shape[-2:]
    ch, cw = crop_size((h, w), policy.fraction)
    if ch < min_size or cw < min_size:
        raise ParameterError(
            f"crop {ch}x{cw} below the network minimum input size {min_size}"
        )
    rng = policy.rng if policy.rng is not None else np.random.default_rng()
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    return source[..., oy : oy + ch, ox : ox + cw], (oy, ox)


@dataclass
class TrainTask:
    """What to train and for how long.

    loss_mode defaults by role: the predictor learns to predict the noise,
    everything else predicts the clean crop. Passing loss_mode explicitly
    overrides this (the noise-prediction ablation).
    """

    role: str  # image | projector | predictor | interpolator
    iterations: int
    loss_mode: str | None = None
    lr: float = 2e-4
    lr_drop_at: int = 100_000
    lr_after: float = 2e-5
    k_range: int = 3
    curriculum_warmup: int | None = None  # default: 20% of iterations
    crop_fraction: float = 0.95
    grad_clip: float = 1.0
    trace_every: int = 1

    def __post_init__(self):
        if self.role not in ("image", "projector", "predictor", "interpolator"):
            raise ParameterError(f"unknown role {self.role!r}")
        if self.iterations < 0:
            raise ParameterError("iterations must be >= 0")
        if self.loss_mode is None:
            self.loss_mode = "epsilon" if self.role == "predictor" else "x0"
        if self.loss_mode not in ("epsilon", "x0"):
            raise ParameterError(f"unknown loss mode {self.loss_mode!r}")
        if self.k_range < 1:
            raise ParameterError("k_range must be >= 1")
        if self.curriculum_warmup is None:
            self.curriculum_warmup = self.iterations // 5


@dataclass
class CurriculumState:
    """Frame-gap curriculum: {1} at iteration 0, widening to the full signed range."""

    k_range: int = 3
    warmup: int = 0
    iteration: int = 0

    def support(self) -> tuple[int, ...]:
        if self.warmup <= 0 or self.iteration >= self.warmup:
            stage = self.k_range
        else:
            stage = min(self.k_range, self.iteration * self.k_range // self.warmup)
        if stage == 0:
            return (1,)
        mags = range(1, stage + 1)
        return tuple(-m for m in reversed(mags)) + tuple(mags)

    def advance(self) -> None:
        self.iteration += 1


def curriculum_k(state: CurriculumState, rng: np.random.Generator) -> int:
    """Draw a frame gap uniformly from the current curriculum support. Never 0."""
    support = state.support()
    return int(support[rng.integers(0, len(support))])


def config_for_role(role: str, cfg: DenoiserConfig) -> DenoiserConfig:
    """Adjust channel/conditioning fields of a base config to fit a role."""
    if role == "predictor":
        return replace(cfg, in_channels=6, uses_frame_gap=True)
    if role == "interpolator":
        return replace(cfg, in_channels=9, uses_frame_gap=False)
    return replace(cfg, in_channels=3, uses_frame_gap=False)


@dataclass
class TrainResult:
    denoiser: Denoiser
    trace: list[tuple[int, float, float, int | None]] = field(default_factory=list)
    curriculum: CurriculumState | None = None

    def losses(self) -> np.ndarray:
        return np.array([row[1] for row in self.trace])


def save_loss_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "lr", "k"])
        for it, loss, lr, k in trace:
            writer.writerow([it, f"{loss:.8g}", lr, "" if k is None else k])


def _validate_cfg(role: str, cfg: DenoiserConfig) -> None:
    want = config_for_role(role, cfg)
    if (cfg.in_channels, cfg.uses_frame_gap) != (want.in_channels, want.uses_frame_gap):
        raise ParameterError(
            f"role {role!r} needs in_channels={want.in_channels}, "
            f"uses_frame_gap={want.uses_frame_gap}; got in_channels={cfg.in_channels}, "
            f"uses_frame_gap={cfg.uses_frame_gap} (see config_for_role)"
        )


def _fit(net, sched, task, rng, draw_example) -> TrainResult:
    """Shared training loop: crop -> noise -> single gradient step, repeated."""
    opt = torch.optim.Adam(net.parameters(), lr=task.lr)
    sqrt_ab = np.sqrt(sched.alpha_bars).astype(np.float32)
    sqrt_1mab = np.sqrt(1.0 - sched.alpha_bars).astype(np.float32)
    trace: list[tuple[int, float, float, int | None]] = []
    for it in range(task.iterations):
        lr = task.lr if it < task.lr_drop_at else task.lr_after
        for group in opt.param_groups:
            group["lr"] = lr
        x0, conds, k = draw_example(it)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(x0.shape).astype(np.float32)
        x_t = sqrt_ab[t - 1] * x0 + sqrt_1mab[t - 1] * eps
        stacked = np.concatenate([x_t, *conds], axis=0) if conds else x_t
        inp = torch.from_numpy(np.ascontiguousarray(stacked))[None]
        target = eps if task.loss_mode == "epsilon" else x0
        target_t = torch.from_numpy(np.ascontiguousarray(target))[None]
        pred = net(inp, t, k)
        loss = F.mse_loss(pred, target_t)
        loss_val = float(loss.item())
        if not math.isfinite(loss_val):
            raise TrainingDiverged(
                f"non-finite loss {loss_val} at iteration {it} (role={task.role}, "
                f"t={t}, k={k}, lr={lr})"
            )
        opt.zero_grad()
        loss.backward()
        if task.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(net.parameters(), task.grad_clip)
        opt.step()
        if it % task.trace_every == 0:
            trace.append((it, loss_val, lr, k))
    return TrainResult(denoiser=net, trace=trace)


def _as_float32(frame: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frame, dtype=np.float32)


def train_image_ddpm(
    image: np.ndarray | VideoClip,
    task: TrainTask,
    sched: DiffusionSchedule,
    cfg: DenoiserConfig,
    rng: np.random.Generator,
) -> TrainResult:
    """Train an unconditional single-image DDPM on large random crops.

    For the projector role a VideoClip may be passed; each iteration then
    crops a uniformly random frame, so the model learns the patch statistics
    of all frames.
    """
    if task.role not in ("image", "projector"):
        raise ParameterError(f"train_image_ddpm handles image/projector, got {task.role!r}")
    _validate_cfg(task.role, cfg)
    frames = image.frames if isinstance(image, VideoClip) else image[None]
    h, w = frames.shape[-2:]
    policy = CropPolicy(fraction=task.crop_fraction, rng=rng)
    net = build_denoiser(cfg, rng)
    net.role = task.role
    net.pred_mode = task.loss_mode
    net.train_size = (h, w)

    def draw(it):
        idx = int(rng.integers(0, len(frames))) if len(frames) > 1 else 0
        crop, _ = sample_crop(frames[idx], policy, cfg.min_input_size)
        return _as_float32(crop), [], None

    result = _fit(net, sched, task, rng, draw)
    net.iterations += task.iterations
    return result


def train_predictor(
    video: VideoClip,
    task: TrainTask,
    sched: DiffusionSchedule,
    cfg: DenoiserConfig,
    rng: np.random.Generator,
) -> TrainResult:
    """Train the frame predictor: denoise frame n+k conditioned on frame n.

    k is drawn from the curriculum, then n uniformly from the positions where
    both frames exist (k is never clamped). The same crop window is applied
    to the conditioning and target frames.
    """
    if task.role != "predictor":
        raise ParameterError(f"train_predictor needs role 'predictor', got {task.role!r}")
    _validate_cfg(task.role, cfg)
    n_frames = len(video)
    if n_frames < task.k_range + 1:
        raise ParameterError(
            f"predictor training needs >= k_range+1 = {task.k_range + 1} frames, "
            f"got {n_frames}"
        )
    h, w = video.frame_shape[1:]
    policy = CropPolicy(fraction=task.crop_fraction, rng=rng)
    state = CurriculumState(k_range=task.k_range, warmup=task.curriculum_warmup)
    net = build_denoiser(cfg, rng)
    net.role = task.role
    net.pred_mode = task.loss_mode
    net.train_size = (h, w)

    def draw(it):
        k = curriculum_k(state, rng)
        lo, hi = max(0, -k), n_frames - 1 - max(0, k)
        n = int(rng.integers(lo, hi + 1))
        pair = np.stack([video.frame(n + k), video.frame(n)])
        crop, _ = sample_crop(pair, policy, cfg.min_input_size)
        state.advance()
        return _as_float32(crop[0]), [_as_float32(crop[1])], k

    result = _fit(net, sched, task, rng, draw)
    result.curriculum = state
    net.iterations += task.iterations
    return result


def train_interpolator(
    video: VideoClip,
    task: TrainTask,
    sched: DiffusionSchedule,
    cfg: DenoiserConfig,
    rng: np.random.Generator,
) -> TrainResult:
    """Train the middle-frame interpolator conditioned on (frame n, frame n+2)."""
    if task.role != "interpolator":
        raise ParameterError(
            f"train_interpolator needs role 'interpolator', got {task.role!r}"
        )
    _validate_cfg(task.role, cfg)
    if len(video) < 3:
        raise ParameterError("interpolator training needs at least 3 frames")
    h, w = video.frame_shape[1:]
    policy = CropPolicy(fraction=task.crop_fraction, rng=rng)
    net = build_denoiser(cfg, rng)
    net.role = task.role
    net.pred_mode = task.loss_mode
    net.train_size = (h, w)

    def draw(it):
        n = int(rng.integers(0, len(video) - 2))
        triple = np.stack([video.frame(n + 1), video.frame(n), video.frame(n + 2)])
        crop, _ = sample_crop(triple, policy, cfg.min_input_size)
        return _as_float32(crop[0]), [_as_float32(crop[1]), _as_float32(crop[2])], None

    result = _fit(net, sched, task, rng, draw)
    net.iterations += task.iterations
    return result
