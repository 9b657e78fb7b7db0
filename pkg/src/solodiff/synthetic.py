"""Synthetic inputs for demos, sanity runs and benchmarks.

The moving-square clip is the workhorse: a rigid square translating at a
constant velocity with wrap-around, so every consecutive-frame pair differs
in exactly the same number of pixels and the copy baseline's PSNR is known
in closed form (see ``copy_baseline_psnr``).
"""

from __future__ import annotations

import math

import numpy as np

from .clips import VideoClip


def texture_image(
    size: tuple[int, int] = (64, 64), rng: np.random.Generator | None = None
) -> np.ndarray:
    """A smooth random RGB texture in [-1, 1]: low-frequency cosine mixture."""
    rng = rng if rng is not None else np.random.default_rng(0)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((3, h, w))
    for _ in range(6):
        fy, fx = rng.uniform(0.5, 3.0, 2)
        phase = rng.uniform(0, 2 * math.pi, 3)[:, None, None]
        amp = rng.uniform(0.2, 0.5)
        wave = 2 * math.pi * (fy * yy / h + fx * xx / w)
        img += amp * np.cos(wave[None] + phase)
    img /= np.abs(img).max()
    return img.astype(np.float32)


def moving_square_video(
    num_frames: int = 80,
    size: tuple[int, int] = (64, 64),
    square: int = 12,
    velocity: tuple[int, int] = (0, 2),
    start: tuple[int, int] = (26, 4),
    foreground: float = 1.0,
    background: float = -1.0,
) -> VideoClip:
    """A square of constant colour translating with wrap-around.

    velocity is (dy, dx) pixels per frame. Positions wrap modulo the frame
    size, so the scene is a rigid translation on a torus and every pair of
    consecutive frames differs in the same set size of pixels.
    """
    h, w = size
    frames = np.full((num_frames, 3, h, w), background, dtype=np.float32)
    ys = (start[0] + np.arange(square)) % h
    xs = (start[1] + np.arange(square)) % w
    for n in range(num_frames):
        oy = (ys + n * velocity[0]) % h
        ox = (xs + n * velocity[1]) % w
        frames[n][:, oy[:, None], ox[None, :]] = foreground
    return VideoClip(frames)


def changed_pixels_per_step(
    size: tuple[int, int], square: int, velocity: tuple[int, int]
) -> int:
    """Pixels (per channel) that differ between consecutive moving-square frames."""
    dy, dx = abs(velocity[0]), abs(velocity[1])
    overlap_h = max(0, square - dy) if dy < size[0] - square else 0
    overlap_w = max(0, square - dx) if dx < size[1] - square else 0
    return 2 * (square * square - overlap_h * overlap_w)


def copy_baseline_psnr(
    size: tuple[int, int] = (64, 64),
    square: int = 12,
    velocity: tuple[int, int] = (0, 2),
    foreground: float = 1.0,
    background: float = -1.0,
    peak: float = 2.0,
) -> float:
    """Closed-form PSNR of predicting "next frame = current frame"."""
    changed = changed_pixels_per_step(size, square, velocity)
    mse = changed * (foreground - background) ** 2 / (size[0] * size[1])
    return 10.0 * math.log10(peak**2 / mse)


def impulse_corrupt(
    image: np.ndarray,
    rng: np.random.Generator,
    fraction: float = 0.02,
    magnitude: float = 2.0,
) -> np.ndarray:
    """Flip a random subset of pixels by +-magnitude (clipped to [-1, 1])."""
    out = image.copy()
    h, w = image.shape[-2:]
    n_hits = max(1, int(fraction * h * w))
    ys = rng.integers(0, h, n_hits)
    xs = rng.integers(0, w, n_hits)
    signs = rng.choice([-1.0, 1.0], n_hits)
    out[:, ys, xs] = np.clip(out[:, ys, xs] + signs * magnitude, -1.0, 1.0)
    return out
