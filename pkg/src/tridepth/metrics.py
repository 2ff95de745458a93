"""Geometry and image fidelity metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PSNR_CAP = 99.0


@dataclass(frozen=True)
class NFSConfig:
    n: int = 256
    bins: int = 64

    def __post_init__(self):
        if self.n < 1 or self.bins < 2:
            raise ValueError(f"invalid NFS config {self}")


def depth_histogram(depth, bins: int = 64) -> np.ndarray:
    """Probability histogram of a min-max normalised depth map.

    Equal-width bins on [0, 1]; a value on an internal edge goes to the upper
    bin and 1.0 falls in the last bin.  A constant map puts all mass in bin 0.
    """
    d = np.asarray(depth, dtype=np.float64).ravel()
    if d.size == 0 or not np.all(np.isfinite(d)):
        raise ValueError("depth map must be non-empty and finite")
    lo, hi = d.min(), d.max()
    norm = (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)
    idx = np.minimum(np.floor(norm * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, minlength=bins) / d.size


def entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nfs(depth_maps: Sequence, cfg: NFSConfig = NFSConfig()) -> float:
    """Non-flatness score: mean over maps of exp(histogram entropy)."""
    if len(depth_maps) == 0:
        raise ValueError("need at least one depth map")
    return float(np.mean([math.exp(entropy(depth_histogram(d, cfg.bins))) for d in depth_maps]))


def depth_accuracy(pred, gt) -> float:
    """MSE between independently z-normalised depth maps."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    sp, sg = pred.std(), gt.std()
    if sp == 0 or sg == 0:
        raise ValueError("depth accuracy is undefined for a zero-variance map")
    zp = (pred - pred.mean()) / sp
    zg = (gt - gt.mean()) / sg
    return float(np.mean((zp - zg) ** 2))


def psnr(pred, gt, peak: float = 1.0) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / mse)
