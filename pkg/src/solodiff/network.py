"""The attention-free fully-convolutional denoising network.

The backbone is a chain of ConvNext-style blocks with residual connections
and no spatial resampling, so the receptive field stays local and grows
linearly with depth. The diffusion step t (and, for frame-conditioned models,
the signed frame gap k) enter through sinusoidal embeddings that are
projected per block and added to the features after the depthwise stage.
Conditioning frames enter only by channel concatenation.

Ablation toggles restore pieces of the standard DDPM UNet (attention,
up/down-sampling, ResNet blocks); with any of those enabled the receptive
field is no longer bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion import ParameterError


@dataclass(frozen=True)
class DenoiserConfig:
    depth: int = 16
    width: int = 64
    in_channels: int = 3  # 3 unconditional, 6 one cond frame, 9 two
    out_channels: int = 3
    embed_dim: int = 64
    uses_frame_gap: bool = False
    block_kind: str = "convnext"  # or "resnet" (ablation)
    with_attention: bool = False  # ablation
    with_resampling: bool = False  # ablation
    stem_kernel: int = 3
    block_kernel: int = 7

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.in_channels not in (3, 6, 9):
            raise ParameterError(f"in_channels must be 3, 6 or 9, got {self.in_channels}")
        if self.block_kind not in ("convnext", "resnet"):
            raise ParameterError(f"unknown block kind {self.block_kind!r}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ParameterError("embed_dim must be even and >= 2")

    @property
    def min_input_size(self) -> int:
        """Smallest accepted H or W: twice the stem kernel."""
        return 2 * self.stem_kernel

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)

    def cond_frames(self) -> int:
        return (self.in_channels - 3) // 3


def sinusoidal_embedding(value: float, embed_dim: int) -> np.ndarray:
    """Sinusoidal embedding of a raw (possibly negative) scalar.

    Layout is [sin(v * w_0), ..., sin(v * w_{h-1}), cos(v * w_0), ...] with
    geometrically spaced frequencies, so value 0 maps to zeros in the first
    half. Distinct integers in the supported ranges give distinct vectors.
    """
    half = embed_dim // 2
    if half > 1:
        freqs = np.exp(-math.log(10000.0) * np.arange(half) / (half - 1))
    else:
        freqs = np.ones(1)
    ang = value * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float32)


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    source: str  # "timestep" or "frame_gap"


def embed_scalar(
    value: int,
    kind: str,
    embed_dim: int,
    t_max: int | None = None,
    k_max: int = 3,
) -> EmbeddingVector:
    """Deterministic sinusoidal embedding of a timestep or signed frame gap."""
    if kind == "timestep":
        if value < 1 or (t_max is not None and value > t_max):
            raise ParameterError(f"timestep {value} out of range")
    elif kind == "frame_gap":
        if value == 0 or abs(value) > k_max:
            raise ParameterError(f"frame gap {value} outside [-{k_max}, {k_max}] \\ {{0}}")
    else:
        raise ParameterError(f"unknown embedding kind {kind!r}")
    vec = sinusoidal_embedding(float(value), embed_dim)
    if not np.all(np.isfinite(vec)):
        raise ParameterError("non-finite embedding")
    return EmbeddingVector(values=vec, source=kind)


class LayerNorm2d(nn.Module):
    """Per-position layer norm over the channel axis of (N, C, H, W)."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = (x - mu).pow(2).mean(dim=1, keepdim=True)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ConvNextBlock(nn.Module):
    """Depthwise 7x7 -> +embedding -> norm -> 1x1 expand x4 -> GELU -> 1x1, residual."""

    def __init__(self, width: int, embed_dim: int, kernel: int = 7):
        super().__init__()
        self.dwconv = nn.Conv2d(width, width, kernel, padding=kernel // 2, groups=width)
        self.norm = LayerNorm2d(width)
        self.pw1 = nn.Conv2d(width, 4 * width, 1)
        self.act = nn.GELU()
        self.pw2 = nn.Conv2d(4 * width, width, 1)
        self.emb_proj = nn.Linear(embed_dim, width)

    def forward(self, x, emb):
        h = self.dwconv(x)
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.pw2(self.act(self.pw1(self.norm(h))))
        return x + h


class ResnetBlock(nn.Module):
    """Two 3x3 convolutions with pre-norm, embedding added between them."""

    def __init__(self, width: int, embed_dim: int):
        super().__init__()
        self.norm1 = LayerNorm2d(width)
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.norm2 = LayerNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.act = nn.GELU()
        self.emb_proj = nn.Linear(embed_dim, width)

    def forward(self, x, emb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class GlobalAttention(nn.Module):
    """Single-head spatial self-attention (global receptive field, ablation only)."""

    def __init__(self, width: int):
        super().__init__()
        self.norm = LayerNorm2d(width)
        self.qkv = nn.Conv2d(width, 3 * width, 1)
        self.proj = nn.Conv2d(width, width, 1)
        self.scale = width ** -0.5

    def forward(self, x):
        n, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(n, 3, c, h * w).unbind(dim=1)
        attn = torch.softmax(q.transpose(1, 2) @ k * self.scale, dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(n, c, h, w)
        return x + self.proj(out)


class Denoiser(nn.Module):
    """Fully-convolutional denoiser; spatial size is preserved exactly.

    Forward signature: (x, t, k) with x of shape (1, in_channels, H, W),
    t a 1-based diffusion step and k the signed frame gap (required iff the
    config uses frame-gap conditioning). Output is (1, out_channels, H, W).

    Instances carry bookkeeping attributes set by the trainer and the
    checkpoint layer: ``role``, ``pred_mode``, ``train_size``, ``iterations``.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.role: str | None = None
        self.pred_mode: str = "x0"
        self.train_size: tuple[int, int] | None = None
        self.iterations: int = 0

        w, e = cfg.width, cfg.embed_dim
        self.stem = nn.Conv2d(cfg.in_channels, w, cfg.stem_kernel, padding=cfg.stem_kernel // 2)
        cond_in = 2 * e if cfg.uses_frame_gap else e
        self.emb_mlp = nn.Sequential(nn.Linear(cond_in, e), nn.GELU(), nn.Linear(e, e))
        block = ConvNextBlock if cfg.block_kind == "convnext" else ResnetBlock
        if cfg.block_kind == "convnext":
            self.blocks = nn.ModuleList(block(w, e, cfg.block_kernel) for _ in range(cfg.depth))
        else:
            self.blocks = nn.ModuleList(block(w, e) for _ in range(cfg.depth))
        self.attention = GlobalAttention(w) if cfg.with_attention else None
        if cfg.with_resampling:
            self.down = nn.Conv2d(w, w, 3, stride=2, padding=1)
            self.up = nn.Conv2d(w, w, 3, padding=1)
        self.head = nn.Conv2d(w, cfg.out_channels, 1)

    def _embedding(self, t: int, k: int | None) -> torch.Tensor:
        parts = [embed_scalar(t, "timestep", self.cfg.embed_dim).values]
        if self.cfg.uses_frame_gap:
            if k is None:
                raise ParameterError("this model conditions on a frame gap; k is required")
            parts.append(embed_scalar(k, "frame_gap", self.cfg.embed_dim).values)
        elif k is not None:
            raise ParameterError("this model does not take a frame gap")
        raw = torch.from_numpy(np.concatenate(parts))[None, :]
        p = next(self.parameters())
        return self.emb_mlp(raw.to(dtype=p.dtype, device=p.device))

    def forward(self, x: torch.Tensor, t: int, k: int | None = None) -> torch.Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ParameterError(
                f"expected (N, {cfg.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        if min(x.shape[2], x.shape[3]) < cfg.min_input_size:
            raise ParameterError(
                f"input {tuple(x.shape[2:])} below minimum size {cfg.min_input_size}"
            )
        emb = self._embedding(t, k)
        h = self.stem(x)
        mid = len(self.blocks) // 2
        third = max(1, len(self.blocks) // 3)
        size = h.shape[2:]
        for i, block in enumerate(self.blocks):
            if cfg.with_resampling and i == third:
                h = self.down(h)
            h = block(h, emb)
            if self.attention is not None and i == mid:
                h = self.attention(h)
            if cfg.with_resampling and i == len(self.blocks) - third:
                h = self.up(F.interpolate(h, size=size, mode="nearest"))
        return self.head(h)


def build_denoiser(cfg: DenoiserConfig, rng: np.random.Generator) -> Denoiser:
    """Construct a denoiser with parameters drawn deterministically from rng."""
    seed = int(rng.integers(0, 2**63 - 1))
    torch.manual_seed(seed)
    return Denoiser(cfg)


@dataclass(frozen=True)
class DenoiserOutput:
    prediction: np.ndarray  # (out_channels, H, W)


def denoise_forward(
    net: Denoiser,
    x_t: np.ndarray,
    cond_frames: list[np.ndarray] | tuple[np.ndarray, ...] = (),
    t: int = 1,
    k: int | None = None,
) -> DenoiserOutput:
    """Numpy-facing forward pass with conditioning by channel concatenation."""
    cfg = net.cfg
    expected = cfg.cond_frames()
    if len(cond_frames) != expected:
        raise ParameterError(
            f"model expects {expected} conditioning frame(s), got {len(cond_frames)}"
        )
    for c in cond_frames:
        if c.shape != x_t.shape:
            raise ParameterError(
                f"conditioning frame shape {c.shape} != input shape {x_t.shape}"
            )
    stacked = np.concatenate([x_t, *cond_frames], axis=0) if cond_frames else x_t
    with torch.no_grad():
        inp = torch.from_numpy(np.ascontiguousarray(stacked, dtype=np.float32))[None]
        out = net(inp, t, k)
    return DenoiserOutput(prediction=out[0].numpy())


def receptive_field_radius(cfg: DenoiserConfig) -> float:
    """Chebyshev radius of the output receptive field.

    Sum of per-layer radii: stem kernel, then one spatial kernel per block
    (the 1x1 convolutions contribute nothing). Unbounded (inf) when attention
    or resampling is enabled.
    """
    if cfg.with_attention or cfg.with_resampling:
        return math.inf
    per_block = cfg.block_kernel // 2 if cfg.block_kind == "convnext" else 2 * (3 // 2)
    return cfg.stem_kernel // 2 + cfg.depth * per_block
