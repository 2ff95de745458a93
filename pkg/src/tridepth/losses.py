"""Canonical and novel-view training losses.

Losses take torch tensors and return 0-dim tensors so they can sit inside the
autograd graph of the fitting loop.  Perceptual and semantic terms go through
small pluggable interfaces; the toy backends here are deterministic random
convolution stacks standing in for pretrained networks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64

CANON_TERMS = ("recon", "depth", "vgg")
NOVEL_TERMS = ("clip", "tv", "vgg2")


def _t(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def loss_recon(pred, gt) -> torch.Tensor:
    """Mean squared colour error."""
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return ((pred - gt) ** 2).mean()


def loss_depth(pred, gt, mask) -> torch.Tensor:
    """Mean absolute depth error over pixels whose mask is at least 0.5."""
    pred, gt, mask = _t(pred), _t(gt), _t(mask)
    if not pred.shape == gt.shape == mask.shape:
        raise ValueError("pred, gt and mask must share a shape")
    sel = mask >= 0.5
    if not bool(sel.any()):
        return pred.sum() * 0.0
    return (pred - gt).abs()[sel].mean()


def loss_tv(depth) -> torch.Tensor:
    """Anisotropic total variation of an ``(H, W)`` depth map, per pixel."""
    depth = _t(depth)
    if depth.ndim != 2:
        raise ValueError("depth map must be 2-D")
    h, w = depth.shape
    if h * w < 2:
        raise ValueError("depth map needs at least two pixels")
    dv = (depth[1:, :] - depth[:-1, :]).abs().sum()
    dh = (depth[:, 1:] - depth[:, :-1]).abs().sum()
    return (dv + dh) / (h * w)


class FeatureExtractor(Protocol):
    num_levels: int

    def __call__(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Map an ``(H, W, 3)`` image to one feature map per level."""


class Embedder(Protocol):
    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        """Map an ``(H, W, 3)`` image to a global embedding vector."""


class ToyFeatureExtractor:
    """Frozen random 3x3 convolutions over a box-filtered image pyramid.

    Level ``l`` sees the image downsampled ``l - 1`` times and applies
    ``tanh(conv3x3(.))`` with zero padding and no bias.
    """

    def __init__(self, num_levels: int = 5, channels: int = 8, seed: int = 0):
        if num_levels < 2:
            raise ValueError("feature extractor needs at least two levels")
        self.num_levels = num_levels
        self.channels = channels
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(3 * 9)
        self.weights = [torch.tensor(rng.uniform(-bound, bound, size=(channels, 3, 3, 3)), dtype=DTYPE)
                        for _ in range(num_levels)]

    def __call__(self, image) -> list[torch.Tensor]:
        x = _t(image).permute(2, 0, 1)[None]
        if min(x.shape[-2:]) < 2 ** (self.num_levels - 1):
            raise ValueError(f"image {tuple(x.shape[-2:])} too small for {self.num_levels} levels")
        feats = []
        for i, w in enumerate(self.weights):
            if i:
                x = F.avg_pool2d(x, 2)
            feats.append(torch.tanh(F.conv2d(x, w, padding=1))[0])
        return feats


class ToyEmbedder:
    """Global-average-pooled deepest features, projected to ``dim`` values."""

    def __init__(self, extractor: ToyFeatureExtractor, dim: int = 64, seed: int = 1):
        self.extractor = extractor
        rng = np.random.default_rng(seed)
        self.projection = torch.tensor(rng.normal(size=(dim, extractor.channels)) / math.sqrt(extractor.channels),
                                       dtype=DTYPE)

    def __call__(self, image) -> torch.Tensor:
        deep = self.extractor(image)[-1]
        return self.projection @ deep.mean(dim=(1, 2))


def _select_levels(num_levels: int, levels: str) -> Sequence[int]:
    if levels == "all":
        return range(num_levels)
    if levels == "last_two":
        return range(num_levels - 2, num_levels)
    raise ValueError(f"unsupported level selection {levels!r}")


def loss_feature(extractor: FeatureExtractor, pred, gt, levels: str = "all") -> torch.Tensor:
    """Mean squared feature difference, averaged over the selected levels."""
    chosen = _select_levels(extractor.num_levels, levels)
    fp, fg = extractor(pred), extractor(gt)
    return torch.stack([((fp[i] - fg[i]) ** 2).mean() for i in chosen]).mean()


def loss_semantic(embedder: Embedder, pred, gt) -> torch.Tensor:
    """One minus the cosine similarity of global embeddings."""
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise ValueError("images must share a shape")
    ep, eg = embedder(pred), embedder(gt)
    np_, ng = ep.norm(), eg.norm()
    if np_.item() == 0.0 or ng.item() == 0.0:
        raise ValueError("zero-norm embedding; cosine similarity undefined")
    return 1.0 - (ep @ eg) / (np_ * ng)


@dataclass(frozen=True)
class LossWeights:
    recon: float = 1.0
    depth: float = 2.0
    vgg: float = 0.5
    clip_max: float = 0.35
    tv: float = 0.1
    vgg2: float = 0.5
    clip_start: float = 0.02

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def total_loss(view: str, components: dict, weights: LossWeights, clip_weight: float):
    """Weighted sum of the terms belonging to ``view`` ("canon" or "novel")."""
    if view == "canon":
        coeffs = {"recon": weights.recon, "depth": weights.depth, "vgg": weights.vgg}
    elif view == "novel":
        coeffs = {"clip": clip_weight, "tv": weights.tv, "vgg2": weights.vgg2}
    else:
        raise ValueError(f"unknown view {view!r}")
    missing = [k for k in coeffs if k not in components]
    if missing:
        raise KeyError(f"missing loss components for {view} view: {missing}")
    total = 0.0
    for name, coeff in coeffs.items():
        total = total + coeff * components[name]
    return total
