"""Evaluation protocols: future-frame prediction benchmark and diversity scores.

The benchmark trains a model on a window of n frames (optionally after speed
subsampling), predicts the k-ahead frame for up to 100 held-out frames, and
reports the mean PSNR next to the copy baseline f(i+k) := f(i). Training and
prediction are injected as callables so the harness can be exercised against
oracles.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .clips import VideoClip
from .diffusion import ParameterError
from .nnf import compute_nnf, nnfdist, nnfdiv

PSNR_CAP_DB = 100.0


class ConfigurationError(ValueError):
    """Benchmark configuration leaves nothing to test."""


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
    """10 log10(peak^2 / MSE), capped at 100 dB for identical inputs.

    peak is 2.0 for [-1, 1] tensors and 255 for 8-bit data.
    """
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def subsample_speed(video: VideoClip, S: int, start: int, n: int) -> VideoClip:
    """Frames [start, start+S, ..., start+(n-1)S]; source indices are kept."""
    if S < 1 or n < 1 or start < 0:
        raise ParameterError(f"invalid subsampling (S={S}, start={start}, n={n})")
    last = start + (n - 1) * S
    if last >= len(video):
        raise ParameterError(
            f"subsampling reaches frame {last} but the video has {len(video)}"
        )
    sel = np.arange(start, last + 1, S)
    return VideoClip(video.frames[sel], video.indices[sel])


@dataclass(frozen=True)
class BenchmarkRecord:
    n_train: int
    speed: int
    frame_gap: int
    psnr_model: float
    psnr_baseline: float
    run_seed: int


def _lattice_positions(n_frames: int, start: int, S: int) -> np.ndarray:
    """All frame positions on the subsampling lattice through ``start``."""
    first = start % S
    return np.arange(first, n_frames, S)


def _eligible_test_positions(
    n_frames: int, start: int, n: int, S: int, k: int
) -> list[int]:
    window = set(range(start, start + n * S, S))
    out = []
    for i in _lattice_positions(n_frames, start, S):
        j = i + k * S
        if 0 <= j < n_frames and i not in window and j not in window:
            out.append(int(i))
    return out


def _run_trial(args):
    video, train_fn, predict_fn, n, S, k, start, seed, max_test = args
    window = subsample_speed(video, S, start, n)
    model = train_fn(window, seed)
    test = _eligible_test_positions(len(video), start, n, S, k)
    rng = np.random.default_rng(seed)
    if len(test) > max_test:
        test = sorted(rng.choice(test, size=max_test, replace=False).tolist())
    scores_model, scores_base = [], []
    for i in test:
        truth = video.frame(i + k * S)
        pred = predict_fn(model, video.frame(i), k)
        scores_model.append(psnr(pred, truth))
        scores_base.append(psnr(video.frame(i), truth))
    return BenchmarkRecord(
        n_train=n,
        speed=S,
        frame_gap=k,
        psnr_model=float(np.mean(scores_model)),
        psnr_baseline=float(np.mean(scores_base)),
        run_seed=seed,
    )


def frame_prediction_benchmark(
    video: VideoClip,
    train_fn,
    predict_fn,
    n: int,
    S: int = 1,
    k: int = 1,
    trials: int = 5,
    rng: np.random.Generator | None = None,
    max_test_frames: int = 100,
    workers: int = 1,
) -> list[BenchmarkRecord]:
    """Future-frame prediction protocol.

    Per trial: a random training window of n frames (speed-S lattice) is
    drawn, ``train_fn(window_clip, seed)`` fits a model, and
    ``predict_fn(model, frame, k)`` predicts the k-ahead frame for up to 100
    held-out lattice frames (condition and target both outside the window).
    With workers > 1 trials run in separate processes; both callables must
    then be picklable. Results are identical either way.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    max_start = len(video) - (n - 1) * S - 1
    starts_with_tests = [
        s
        for s in range(0, max_start + 1)
        if _eligible_test_positions(len(video), s, n, S, k)
    ]
    if not starts_with_tests:
        raise ConfigurationError(
            f"no training window leaves held-out test frames "
            f"(N={len(video)}, n={n}, S={S}, k={k})"
        )
    jobs = []
    for _ in range(trials):
        start = int(starts_with_tests[rng.integers(0, len(starts_with_tests))])
        seed = int(rng.integers(0, 2**31 - 1))
        jobs.append((video, train_fn, predict_fn, n, S, k, start, seed, max_test_frames))
    if workers > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(workers, mp_context=mp.get_context("spawn")) as pool:
            return list(pool.map(_run_trial, jobs))
    return [_run_trial(job) for job in jobs]


def singan_diversity(samples, reference) -> float:
    """Per-voxel std across samples, averaged, over the reference's global std.

    This is the metric our NNF measures replace: it rewards global
    translations of the input, converging to 1 under enough of them.
    """
    frames = [s.frames if isinstance(s, VideoClip) else np.asarray(s) for s in samples]
    if len(frames) < 2:
        raise ParameterError("need at least 2 samples")
    ref = reference.frames if isinstance(reference, VideoClip) else np.asarray(reference)
    for f in frames:
        if f.shape != ref.shape:
            raise ParameterError("all samples must match the reference shape")
    ref_std = float(np.std(ref))
    if ref_std == 0.0:
        raise ParameterError("reference has zero intensity std; diversity undefined")
    stack = np.stack(frames).astype(np.float64)
    return float(np.mean(np.std(stack, axis=0)) / ref_std)


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Squared Frechet distance between Gaussian fits of two feature sets.

    Moments use population statistics, so a two-point set {-1, 1} fits
    N(0, 1) exactly.
    """
    a = np.atleast_2d(np.asarray(feats_a, np.float64))
    b = np.atleast_2d(np.asarray(feats_b, np.float64))
    if a.shape[1] != b.shape[1]:
        raise ParameterError("feature dimensionality mismatch")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False, ddof=0).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False, ddof=0).reshape(b.shape[1], b.shape[1])
    covmean = scipy.linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * covmean))
    return max(0.0, d2)


def svfid(generated, reference, feature_fn) -> float:
    """Frechet distance over injected per-position video features.

    The exact perceptual feature extractor of the published scores is not
    bundled; callers supply feature_fn(video) -> (positions, dim) activations
    (e.g. loaded from files produced by an external network).
    """
    if feature_fn is None:
        raise ParameterError("svfid requires a feature_fn; without one the score is absent")
    return frechet_distance(feature_fn(generated), feature_fn(reference))


@dataclass(frozen=True)
class DiversityReport:
    nnfdiv: float
    nnfdist: float
    singan_div: float | None
    svfid: float | None


def diversity_report(samples, reference, feature_fn=None) -> DiversityReport:
    """NNF metrics (averaged over samples) plus optional legacy scores."""
    fields = [compute_nnf(s, reference) for s in samples]
    div = float(np.mean([nnfdiv(f) for f in fields]))
    dist = float(np.mean([nnfdist(f) for f in fields]))
    try:
        sg = singan_diversity(samples, reference) if len(samples) >= 2 else None
    except ParameterError:
        sg = None
    fid = None
    if feature_fn is not None:
        fid = float(np.mean([svfid(s, reference, feature_fn) for s in samples]))
    return DiversityReport(nnfdiv=div, nnfdist=dist, singan_div=sg, svfid=fid)
