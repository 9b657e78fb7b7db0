"""Checkpoint persistence: opaque weights blob + JSON manifest.

A checkpoint is a directory holding ``weights.pt`` (torch state dict) and
``manifest.json`` recording the network config, schedule parameters, role,
prediction mode, training resolution and iteration count, plus a checksum of
the weights blob. Loading rebuilds the network and restores parameters bit
for bit; a checksum or config mismatch is refused.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .diffusion import DiffusionSchedule, ParameterError, build_schedule
from .network import Denoiser, DenoiserConfig

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Corrupt, incomplete or mismatched checkpoint."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def schedule_params(sched: DiffusionSchedule) -> dict:
    return {
        "kind": sched.kind,
        "T": sched.T,
        "beta_start": float(sched.betas[0]),
        "beta_end": float(sched.betas[-1]),
    }


def schedule_from_params(params: dict) -> DiffusionSchedule:
    return build_schedule(
        params["kind"], params["T"], params["beta_start"], params["beta_end"]
    )


def save_checkpoint(net: Denoiser, sched: DiffusionSchedule, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    weights = path / "weights.pt"
    torch.save(net.state_dict(), weights)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": net.cfg.to_dict(),
        "schedule": schedule_params(sched),
        "role": net.role,
        "pred_mode": net.pred_mode,
        "train_size": list(net.train_size) if net.train_size else None,
        "iterations": net.iterations,
        "weights_sha256": _sha256(weights),
    }
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    tmp.replace(path / "manifest.json")
    return path


def load_manifest(path) -> dict:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest.json in {path}")
    return json.loads(manifest_path.read_text())


def load_checkpoint(
    path, expect_role: str | None = None
) -> tuple[Denoiser, DiffusionSchedule, dict]:
    path = Path(path)
    manifest = load_manifest(path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')!r}"
        )
    weights = path / "weights.pt"
    if not weights.exists():
        raise CheckpointError(f"no weights.pt in {path}")
    if _sha256(weights) != manifest["weights_sha256"]:
        raise CheckpointError(f"weights checksum mismatch in {path}")
    if expect_role is not None and manifest["role"] != expect_role:
        raise CheckpointError(
            f"checkpoint role is {manifest['role']!r}, pipeline needs {expect_role!r}"
        )
    cfg = DenoiserConfig.from_dict(manifest["config"])
    net = Denoiser(cfg)
    try:
        net.load_state_dict(torch.load(weights, weights_only=True), strict=True)
    except (RuntimeError, ParameterError) as exc:
        raise CheckpointError(f"weights do not fit the manifest config: {exc}") from exc
    net.role = manifest["role"]
    net.pred_mode = manifest["pred_mode"]
    net.train_size = tuple(manifest["train_size"]) if manifest["train_size"] else None
    net.iterations = manifest["iterations"]
    net.eval()
    sched = schedule_from_params(manifest["schedule"])
    return net, sched, manifest
