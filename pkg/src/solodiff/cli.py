"""Command-line entry point tying the toolkit into reproducible runs.

Every run writes a manifest (config snapshot, versions, wall clock,
checkpoint paths, outputs) into the output directory. Failures exit nonzero
with a machine-readable JSON error record on stderr; bad usage exits 2.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoints import load_checkpoint, save_checkpoint
from .clips import VideoClip
from .config import ConfigError, ExperimentConfig, config_schema
from .diffusion import build_schedule
from .media import (
    InputError,
    load_image,
    load_video_frames,
    save_image,
    save_video_frames,
)
from .metrics import (
    diversity_report,
    frame_prediction_benchmark,
    psnr,
)
from .network import DenoiserConfig
from .nnf import compute_nnf, nnf_colormap, nnfdist, nnfdiv
from .pipelines import (
    VideoGenSpec,
    extrapolate,
    generate_image,
    generate_video,
    refine_image,
    upsample_temporal,
)
from .training import (
    TrainTask,
    config_for_role,
    train_image_ddpm,
    train_interpolator,
    train_predictor,
)


def _denoiser_config(cfg: ExperimentConfig, role: str) -> DenoiserConfig:
    base = DenoiserConfig(
        depth=cfg.depth,
        width=cfg.width,
        embed_dim=cfg.embed_dim,
        stem_kernel=cfg.stem_kernel,
        block_kernel=cfg.block_kernel,
        block_kind="resnet" if cfg.resnet_blocks else "convnext",
        with_attention=cfg.with_attention,
        with_resampling=cfg.with_resampling,
    )
    return config_for_role(role, base)


def _train_task(cfg: ExperimentConfig) -> TrainTask:
    return TrainTask(
        role=cfg.role,
        iterations=cfg.resolved_iterations(),
        loss_mode="epsilon" if cfg.noise_prediction else None,
        lr=cfg.lr,
        lr_drop_at=cfg.lr_drop_at,
        lr_after=cfg.lr_after,
        k_range=cfg.effective_k_range(),
        curriculum_warmup=cfg.curriculum_warmup,
        crop_fraction=cfg.crop_fraction,
        grad_clip=cfg.grad_clip,
        trace_every=cfg.trace_every,
    )


def _write_manifest(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    tmp.replace(out_dir / "manifest.json")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _manifest_base(command: str, cfg: ExperimentConfig | None, started: float) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict() if cfg else None,
        "started_unix": started,
        "wall_clock_s": round(time.time() - started, 3),
    }


def _load_config(args, role: str | None = None) -> ExperimentConfig:
    overrides = {}
    for key in (
        "role", "input", "seed", "iterations", "depth", "width", "t_corr",
        "frames", "direction", "crop_fraction", "k_range", "resolution_cap",
        "timesteps", "schedule",
    ):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    for flag in (
        "noise_prediction", "with_attention", "with_resampling",
        "resnet_blocks", "no_projector", "k_only_pm1",
    ):
        if getattr(args, flag, False):
            overrides[flag] = True
    if role is not None:
        overrides.setdefault("role", role)
    if getattr(args, "config", None):
        return ExperimentConfig.load(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


# ---------------------------------------------------------------- commands


def _cmd_train(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    if cfg.input is None:
        raise ConfigError("train needs --input (or an input path in the config)")
    out = Path(args.output)
    rng = np.random.default_rng(cfg.seed)
    sched = build_schedule(cfg.schedule_kind(), cfg.timesteps, cfg.beta_start, cfg.beta_end)
    net_cfg = _denoiser_config(cfg, cfg.role)
    task = _train_task(cfg)

    in_path = Path(cfg.input)
    if cfg.role == "image" and in_path.is_file():
        source = load_image(in_path, cfg.resolution_cap)
    else:
        source = load_video_frames(in_path, cfg.resolution_cap)

    if cfg.role in ("image", "projector"):
        result = train_image_ddpm(source, task, sched, net_cfg, rng)
    elif cfg.role == "predictor":
        result = train_predictor(source, task, sched, net_cfg, rng)
    else:
        result = train_interpolator(source, task, sched, net_cfg, rng)

    ckpt = save_checkpoint(result.denoiser, sched, out / "checkpoint")
    from .training import save_loss_trace

    save_loss_trace(result.trace, out / "loss_trace.csv")
    manifest = _manifest_base("train", cfg, started)
    manifest.update(
        {
            "iterations": task.iterations,
            "checkpoint": str(ckpt),
            "loss_trace": str(out / "loss_trace.csv"),
            "final_loss": result.trace[-1][1] if result.trace else None,
        }
    )
    _write_manifest(out, manifest)
    return 0


def _cmd_generate_image(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    net, sched, _ = load_checkpoint(args.checkpoint)
    if net.role not in ("image", "projector"):
        raise InputError(f"checkpoint role {net.role!r} cannot generate images")
    rng = np.random.default_rng(cfg.seed)
    h = args.height or (net.train_size[0] if net.train_size else None)
    w = args.width or (net.train_size[1] if net.train_size else None)
    if not h or not w:
        raise ConfigError("no --height/--width and the checkpoint records no size")
    paths = []
    for i in range(args.count):
        img = generate_image(net, (3, h, w), sched, rng)
        p = out / f"sample_{i + 1:06d}.png"
        save_image(img, p)
        paths.append(str(p))
    manifest = _manifest_base("generate-image", cfg, started)
    manifest.update({"checkpoint": str(args.checkpoint), "outputs": paths,
                     "size": [h, w]})
    _write_manifest(out, manifest)
    return 0


def _load_video_models(args, cfg: ExperimentConfig):
    predictor, sched, _ = load_checkpoint(args.predictor, expect_role="predictor")
    projector = None
    t_corr = 0 if cfg.no_projector else cfg.t_corr
    if args.projector:
        projector, _, _ = load_checkpoint(args.projector, expect_role="projector")
    elif t_corr > 0:
        raise ConfigError("a --projector checkpoint is required unless t_corr is 0 "
                          "or --no-projector is set")
    return predictor, projector, sched, t_corr


def _cmd_generate_video(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    predictor, projector, sched, t_corr = _load_video_models(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    seed_frame = load_image(args.seed_frame, cfg.resolution_cap) if args.seed_frame else None
    spec = VideoGenSpec(
        length=cfg.frames, seed_frame=seed_frame, direction=cfg.direction,
        t_corr=t_corr, seed=cfg.seed,
    )
    video = generate_video(predictor, projector, spec, sched, rng)
    save_video_frames(video.clip(), out / "frames", provenance=video.provenance)
    manifest = _manifest_base("generate-video", cfg, started)
    manifest.update({"frames": cfg.frames, "t_corr": t_corr,
                     "outputs": str(out / "frames")})
    _write_manifest(out, manifest)
    return 0


def _cmd_extrapolate(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    predictor, projector, sched, t_corr = _load_video_models(args, cfg)
    video = load_video_frames(cfg.input, cfg.resolution_cap)
    rng = np.random.default_rng(cfg.seed)
    new = extrapolate(video, predictor, projector, cfg.direction, cfg.frames,
                      sched, rng, t_corr=t_corr)
    save_video_frames(new.clip(), out / "frames", provenance=new.provenance)
    manifest = _manifest_base("extrapolate", cfg, started)
    manifest.update({"direction": cfg.direction, "new_frames": cfg.frames,
                     "outputs": str(out / "frames")})
    _write_manifest(out, manifest)
    return 0


def _cmd_upsample(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    interpolator, sched, _ = load_checkpoint(args.interpolator, expect_role="interpolator")
    t_corr = 0 if cfg.no_projector else cfg.t_corr
    projector = None
    if args.projector:
        projector, _, _ = load_checkpoint(args.projector, expect_role="projector")
    elif t_corr > 0:
        raise ConfigError("a --projector checkpoint is required unless t_corr is 0")
    video = load_video_frames(cfg.input, cfg.resolution_cap)
    rng = np.random.default_rng(cfg.seed)
    up = upsample_temporal(video, interpolator, projector, sched, rng, t_corr=t_corr)
    save_video_frames(up, out / "frames")
    manifest = _manifest_base("upsample", cfg, started)
    manifest.update({"input_frames": len(video), "output_frames": len(up),
                     "outputs": str(out / "frames")})
    _write_manifest(out, manifest)
    return 0


def _cmd_refine(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    net, sched, _ = load_checkpoint(args.checkpoint)
    image = load_image(cfg.input, cfg.resolution_cap)
    rng = np.random.default_rng(cfg.seed)
    t_start = args.t_start if args.t_start is not None else cfg.refine_t_start
    refined = refine_image(image, net, t_start, sched, rng)
    save_image(refined, out / "refined.png")
    manifest = _manifest_base("refine", cfg, started)
    manifest.update({"t_start": t_start, "outputs": str(out / "refined.png")})
    _write_manifest(out, manifest)
    return 0


def _cmd_evaluate(args) -> int:
    started = time.time()
    cfg = _load_config(args)
    out = Path(args.output)
    reference = load_video_frames(args.reference, cfg.resolution_cap)
    samples = [load_video_frames(p, cfg.resolution_cap) for p in args.generated]
    report = diversity_report(samples, reference)
    metrics = {
        "nnfdiv": report.nnfdiv,
        "nnfdist": report.nnfdist,
        "singan_div": report.singan_div,
        "svfid": report.svfid,
        "samples": [str(p) for p in args.generated],
        "reference": str(args.reference),
    }
    _write_json(out / "metrics.json", metrics)
    if args.colormaps:
        field = compute_nnf(samples[0], reference)
        rgb, panel = nnf_colormap(field)
        cm_dir = out / "nnf_colormap"
        cm_dir.mkdir(parents=True, exist_ok=True)
        for i in range(rgb.shape[0]):
            save_image(rgb[i].transpose(2, 0, 1) * 2.0 - 1.0, cm_dir / f"flow_{i + 1:06d}.png")
            save_image(np.repeat(panel[i][None], 3, axis=0) * 2.0 - 1.0,
                       cm_dir / f"dt_{i + 1:06d}.png")
    manifest = _manifest_base("evaluate", cfg, started)
    manifest.update({"metrics": str(out / "metrics.json")})
    _write_manifest(out, manifest)
    return 0


def _bench_train(window: VideoClip, seed: int, cfg_dict: dict):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    rng = np.random.default_rng(seed)
    sched = build_schedule(cfg.schedule_kind(), cfg.timesteps, cfg.beta_start, cfg.beta_end)
    task = _train_task(cfg)
    result = train_predictor(window, task, sched, _denoiser_config(cfg, "predictor"), rng)
    return result.denoiser, sched


def _bench_predict(model, frame: np.ndarray, k: int):
    from .pipelines import predict_next_frame

    net, sched = model
    rng = np.random.default_rng(abs(hash(frame.tobytes())) % (2**31))
    return predict_next_frame(net, frame, k, sched, rng)


def _cmd_benchmark(args) -> int:
    started = time.time()
    cfg = _load_config(args, role="predictor")
    out = Path(args.output)
    video = load_video_frames(cfg.input, cfg.resolution_cap)
    rng = np.random.default_rng(cfg.seed)
    n_values = [int(v) for v in args.n.split(",")]
    records = []
    for n in n_values:
        records.extend(
            frame_prediction_benchmark(
                video,
                functools.partial(_bench_train, cfg_dict=cfg.to_dict()),
                _bench_predict,
                n=n,
                S=args.speed,
                k=args.k,
                trials=args.trials,
                rng=rng,
                workers=args.workers,
            )
        )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "benchmark.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_train", "speed", "frame_gap", "psnr_model",
                         "psnr_baseline", "run_seed"])
        for r in records:
            writer.writerow([r.n_train, r.speed, r.frame_gap,
                             f"{r.psnr_model:.6f}", f"{r.psnr_baseline:.6f}", r.run_seed])
    manifest = _manifest_base("benchmark", cfg, started)
    manifest.update({"records": len(records), "outputs": str(out / "benchmark.csv")})
    _write_manifest(out, manifest)
    return 0


def _sweep_cell(job) -> dict:
    crop_fraction, depth, cfg_dict, seed, n_samples = job
    cfg = ExperimentConfig.from_dict(
        {**cfg_dict, "crop_fraction": crop_fraction, "depth": depth, "seed": seed}
    )
    rng = np.random.default_rng(seed)
    sched = build_schedule(cfg.schedule_kind(), cfg.timesteps, cfg.beta_start, cfg.beta_end)
    image = load_image(cfg.input, cfg.resolution_cap)
    task = _train_task(cfg)
    result = train_image_ddpm(image, task, sched, _denoiser_config(cfg, "image"), rng)
    net = result.denoiser
    # the NNF metrics are spatio-temporal; a static 3-frame stack scores a
    # single image (dt stays 0, spatial diversity is what varies)
    ref = np.stack([image] * 3)
    divs, dists = [], []
    for _ in range(n_samples):
        sample = generate_image(net, image.shape, sched, rng)
        field = compute_nnf(np.stack([sample] * 3), ref)
        divs.append(nnfdiv(field))
        dists.append(nnfdist(field))
    return {
        "crop_fraction": crop_fraction,
        "depth": depth,
        "seed": seed,
        "nnfdiv": float(np.mean(divs)),
        "nnfdist": float(np.mean(dists)),
        "final_loss": result.trace[-1][1] if result.trace else None,
    }


def _cmd_sweep(args) -> int:
    started = time.time()
    cfg = _load_config(args, role="image")
    out = Path(args.output)
    fractions = [float(v) for v in args.crop_fractions.split(",")]
    depths = [int(v) for v in args.depths.split(",")]
    rng = np.random.default_rng(cfg.seed)
    jobs = [
        (f, d, cfg.to_dict(), int(rng.integers(0, 2**31 - 1)), args.samples)
        for f in fractions
        for d in depths
    ]
    if args.workers > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(args.workers, mp_context=mp.get_context("spawn")) as pool:
            rows = list(pool.map(_sweep_cell, jobs))
    else:
        rows = [_sweep_cell(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["crop_fraction", "depth", "seed", "nnfdiv", "nnfdist", "final_loss"]
        )
        writer.writeheader()
        writer.writerows(rows)
    _write_json(out / "sweep.json", {"cells": rows})
    manifest = _manifest_base("sweep", cfg, started)
    manifest.update({"cells": len(rows), "outputs": str(out / "sweep.csv")})
    _write_manifest(out, manifest)
    return 0


def _cmd_schema(args) -> int:
    print(json.dumps(config_schema(), indent=2))
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="solodiff",
        description="Train and use diffusion models learned from a single image or video.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output_required=True):
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output", required=output_required, help="output directory")

    def ablations(p):
        p.add_argument("--noise-prediction", dest="noise_prediction", action="store_true")
        p.add_argument("--with-attention", dest="with_attention", action="store_true")
        p.add_argument("--with-resampling", dest="with_resampling", action="store_true")
        p.add_argument("--resnet-blocks", dest="resnet_blocks", action="store_true")
        p.add_argument("--no-projector", dest="no_projector", action="store_true")
        p.add_argument("--k-only-pm1", dest="k_only_pm1", action="store_true")

    p = sub.add_parser("train", help="train one model on an image or video")
    common(p)
    p.add_argument("--role", choices=["image", "projector", "predictor", "interpolator"])
    p.add_argument("--input")
    p.add_argument("--iterations", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--crop-fraction", dest="crop_fraction", type=float)
    p.add_argument("--k-range", dest="k_range", type=int)
    p.add_argument("--resolution-cap", dest="resolution_cap", type=int)
    p.add_argument("--timesteps", type=int)
    p.add_argument("--schedule", choices=["auto", "linear", "cosine"])
    ablations(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate-image", help="sample images from a trained model")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(fn=_cmd_generate_image)

    p = sub.add_parser("generate-video", help="diverse autoregressive video generation")
    common(p)
    p.add_argument("--predictor", required=True)
    p.add_argument("--projector")
    p.add_argument("--frames", type=int)
    p.add_argument("--direction", choices=["forward", "backward"])
    p.add_argument("--t-corr", dest="t_corr", type=int)
    p.add_argument("--seed-frame", dest="seed_frame", help="PNG to use as frame 1")
    ablations(p)
    p.set_defaults(fn=_cmd_generate_video)

    p = sub.add_parser("extrapolate", help="continue a real video in time")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--projector")
    p.add_argument("--frames", type=int)
    p.add_argument("--direction", choices=["forward", "backward"])
    p.add_argument("--t-corr", dest="t_corr", type=int)
    ablations(p)
    p.set_defaults(fn=_cmd_extrapolate)

    p = sub.add_parser("upsample", help="double the frame rate of a video")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--interpolator", required=True)
    p.add_argument("--projector")
    p.add_argument("--t-corr", dest="t_corr", type=int)
    ablations(p)
    p.set_defaults(fn=_cmd_upsample)

    p = sub.add_parser("refine", help="project an edited/sketched image onto the model")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-start", dest="t_start", type=int)
    p.set_defaults(fn=_cmd_refine)

    p = sub.add_parser("evaluate", help="NNF diversity/fidelity metrics")
    common(p)
    p.add_argument("--generated", nargs="+", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--colormaps", action="store_true")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("benchmark", help="future-frame prediction benchmark")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--n", default="16", help="comma-separated training-set sizes")
    p.add_argument("--speed", type=int, default=1)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--iterations", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    ablations(p)
    p.set_defaults(fn=_cmd_benchmark)

    p = sub.add_parser("sweep", help="crop-size / depth grid with diversity metrics")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--crop-fractions", default="0.5,0.75,0.95")
    p.add_argument("--depths", default="4,8,16")
    p.add_argument("--samples", type=int, default=2)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--iterations", type=int)
    p.add_argument("--width", type=int)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("schema", help="print the JSON config schema")
    p.set_defaults(fn=_cmd_schema)
    return parser


def cli(argv=None) -> int:
    """Run one CLI invocation; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except Exception as exc:  # structured error record, no silent fallbacks
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": getattr(args, "command", None),
        }
        print(json.dumps(record), file=sys.stderr)
        if isinstance(exc, (KeyboardInterrupt,)):
            raise
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
