"""Image and video containers.

An image is a float32 numpy array of shape (C, H, W) with values in [-1, 1].
A VideoClip stacks frames as (N, C, H, W) and keeps the 1-based source index
of every frame, so subsampled clips remember where their frames came from.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClipError(ValueError):
    """Malformed image or clip data."""


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    if img.ndim != 3:
        raise ClipError(f"{name} must be (C, H, W), got shape {img.shape}")
    return img


@dataclass
class VideoClip:
    """A sequence of equally-shaped frames with their source indices."""

    frames: np.ndarray
    indices: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4:
            raise ClipError(f"frames must be (N, C, H, W), got {self.frames.shape}")
        if self.indices is None:
            self.indices = np.arange(1, len(self.frames) + 1)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if len(self.indices) != len(self.frames):
            raise ClipError("one index per frame required")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return tuple(self.frames.shape[1:])  # (C, H, W)

    def frame(self, i: int) -> np.ndarray:
        """Frame at 0-based position i."""
        return self.frames[i]

    def window(self, start: int, stop: int) -> "VideoClip":
        return VideoClip(self.frames[start:stop], self.indices[start:stop])
