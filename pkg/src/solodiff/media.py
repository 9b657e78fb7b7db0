"""PNG frame-directory and image I/O.

Frame directories hold zero-padded 1-based files (frame_000001.png, ...).
Pixels are mapped between 8-bit and the internal [-1, 1] float range; an
optional resolution cap downscales uniformly so the long side fits. Container
video files are handled by an external codec tool (ffmpeg) when one is on
PATH; without it, loading falls back to PNG directories only.
"""

from __future__ import annotations

import json
import re
import shutil
import subprocess
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .clips import VideoClip

FRAME_PATTERN = re.compile(r"^frame_(\d{6})\.png$")


class InputError(ValueError):
    """Unreadable or inconsistent media input."""


def to_unit(img8: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    arr = img8.astype(np.float32) / 255.0 * 2.0 - 1.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3), clipped and rounded."""
    arr = (np.clip(img, -1.0, 1.0) + 1.0) / 2.0 * 255.0
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def _capped_size(w: int, h: int, cap: int | None) -> tuple[int, int]:
    if cap is None or max(w, h) <= cap:
        return w, h
    scale = cap / max(w, h)
    return max(1, round(w * scale)), max(1, round(h * scale))


def load_image(path, resolution_cap: int | None = None) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = _capped_size(im.width, im.height, resolution_cap)
        if (w, h) != (im.width, im.height):
            im = im.resize((w, h), Image.LANCZOS)
        return to_unit(np.asarray(im))


def save_image(img: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path)


def _load_frame_dir(path: Path, resolution_cap: int | None) -> VideoClip:
    found = {}
    for p in path.iterdir():
        m = FRAME_PATTERN.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise InputError(f"no frame_NNNNNN.png files in {path}")
    numbers = sorted(found)
    for want, got in zip(range(numbers[0], numbers[0] + len(numbers)), numbers):
        if want != got:
            raise InputError(
                f"missing frame file frame_{want:06d}.png in {path} "
                f"(numbering jumps to frame_{got:06d}.png)"
            )
    frames = []
    shape = None
    for num in numbers:
        img = load_image(found[num], resolution_cap)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise InputError(
                f"{found[num].name} has size {img.shape[1:]}, expected {shape[1:]}"
            )
        frames.append(img)
    return VideoClip(np.stack(frames), np.array(numbers))


def codec_tool() -> str | None:
    """Path of the external video codec tool, if present."""
    return shutil.which("ffmpeg")


def _load_container(path: Path, resolution_cap: int | None) -> VideoClip:
    tool = codec_tool()
    if tool is None:
        raise InputError(
            f"{path} is a container video but no codec tool (ffmpeg) is available; "
            "provide a directory of PNG frames instead"
        )
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "frame_%06d.png"
        proc = subprocess.run(
            [tool, "-v", "error", "-i", str(path), "-start_number", "1", str(out)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise InputError(f"codec tool failed on {path}: {proc.stderr.strip()}")
        return _load_frame_dir(Path(tmp), resolution_cap)


def load_video_frames(path, resolution_cap: int | None = None) -> VideoClip:
    """Load a clip from a PNG frame directory or (with ffmpeg) a video file."""
    path = Path(path)
    if path.is_dir():
        return _load_frame_dir(path, resolution_cap)
    if path.is_file():
        return _load_container(path, resolution_cap)
    raise InputError(f"no such input: {path}")


def save_video_frames(clip: VideoClip, path, provenance: list[str] | None = None) -> None:
    """Write frame_NNNNNN.png files (1-based) plus optional provenance JSON."""
    if len(clip) == 0:
        raise InputError("refusing to write an empty clip")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i in range(len(clip)):
        save_image(clip.frame(i), path / f"frame_{i + 1:06d}.png")
    if provenance is not None:
        (path / "provenance.json").write_text(
            json.dumps({"frames": provenance}, indent=2)
        )


def encode_container(frame_dir, out_path, fps: int = 10) -> bool:
    """Encode a frame directory to a video file; returns False without ffmpeg."""
    tool = codec_tool()
    if tool is None:
        return False
    proc = subprocess.run(
        [
            tool, "-v", "error", "-y",
            "-framerate", str(fps),
            "-i", str(Path(frame_dir) / "frame_%06d.png"),
            "-pix_fmt", "yuv420p",
            str(out_path),
        ],
        capture_output=True,
        text=True,
    )
    return proc.returncode == 0
