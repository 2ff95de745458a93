"""Per-scene triplane fitting with alternating canonical / novel views."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import io
from .camera import CANONICAL_PITCH, CANONICAL_YAW, generate_rays, sample_depths, sample_novel_pose
from .config import FitConfig
from .decoder import decoder_init
from .engine import Field, render_image, render_rays
from .losses import (CANON_TERMS, NOVEL_TERMS, ToyEmbedder, ToyFeatureExtractor, loss_depth, loss_feature,
                     loss_recon, loss_semantic, loss_tv, total_loss)
from .metrics import NFSConfig, depth_accuracy, nfs, psnr
from .scenes import make_scene
from .schedule import AdamState, adam_step, clip_weight, draw_u, lr_schedule, view_choice
from .triplane import pyramid_build

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 7919

REPORT_COLUMNS = ["iteration", "n_canon", "n_novel", *CANON_TERMS, *NOVEL_TERMS, "lr", "clip_weight",
                  "canon_psnr", "canon_depth_acc", "novel_depth_acc", "nfs"]
METRIC_COLUMNS = ["canon_psnr", "canon_depth_acc", "novel_depth_acc", "nfs"]


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    field: Field
    rows: list[list] = field(default_factory=list)
    checkpoint: Path | None = None
    report: Path | None = None


def init_field(cfg: FitConfig) -> Field:
    pyramid = pyramid_build(cfg.base_resolution, cfg.channels, cfg.seed)
    return Field(pyramid, decoder_init(cfg.channels, cfg.seed + 1))


def eval_poses(cfg: FitConfig) -> list[tuple[float, float]]:
    rng = np.random.default_rng(cfg.seed + EVAL_SEED_OFFSET)
    return [sample_novel_pose(rng) for _ in range(cfg.eval_poses)]


def _masked_depth_accuracy(pred, gt, mask) -> float:
    try:
        return depth_accuracy(pred[mask], gt[mask])
    except ValueError:
        return math.nan


def evaluate(fld: Field, cfg: FitConfig, sigma_scale: float = 1.0) -> dict[str, float]:
    """Canonical PSNR / depth accuracy, and depth accuracy + NFS over novel poses."""
    opts = cfg.render_options(sigma_scale)
    canon = make_scene(cfg.scene, cfg.pose(CANONICAL_YAW, CANONICAL_PITCH), cfg.near, cfg.far)
    out = render_image(fld, canon.pose, opts, cfg.near, cfg.far, cfg.n_samples)
    accs, depths = [], []
    for yaw, pitch in eval_poses(cfg):
        gt = make_scene(cfg.scene, cfg.pose(yaw, pitch), cfg.near, cfg.far)
        img = render_image(fld, gt.pose, opts, cfg.near, cfg.far, cfg.n_samples)
        accs.append(_masked_depth_accuracy(img["depth"], gt.depth, gt.mask))
        depths.append(img["depth"])
    return {
        "canon_psnr": psnr(out["color"], canon.color),
        "canon_depth_acc": _masked_depth_accuracy(out["depth"], canon.depth, canon.mask),
        "novel_depth_acc": float(np.mean(accs)),
        "nfs": nfs(depths, NFSConfig(n=len(depths), bins=cfg.nfs_bins)),
    }


def _box_downsample(image: np.ndarray, size: int) -> np.ndarray:
    t = torch.as_tensor(image).permute(2, 0, 1)[None]
    return F.adaptive_avg_pool2d(t, size)[0].permute(1, 2, 0).numpy()


def fit_scene(cfg: FitConfig, out_dir=None) -> FitResult:
    """Optimise a triplane and decoder to reproduce the canonical view of ``cfg.scene``."""
    torch.use_deterministic_algorithms(True)
    sched = cfg.schedule
    rng = np.random.default_rng(cfg.seed)
    fld = init_field(cfg)
    params = fld.parameters()
    state = AdamState()

    canon = make_scene(cfg.scene, cfg.pose(CANONICAL_YAW, CANONICAL_PITCH), cfg.near, cfg.far)
    c_origins, c_dirs = generate_rays(canon.pose)
    reference = _box_downsample(canon.color, cfg.novel_size)
    extractor = ToyFeatureExtractor(cfg.extractor_levels, cfg.extractor_channels, seed=cfg.seed)
    embedder = ToyEmbedder(extractor, seed=cfg.seed + 1)
    canon_opts = cfg.render_options(kernel_enabled=cfg.kernel_enabled)
    novel_opts = cfg.render_options()
    mode = "stratified" if cfg.stratified else "midpoint"
    s = cfg.canonical_stride

    rows: list[list] = []
    counts = {"canon": 0, "novel": 0}
    interval: dict[str, list[float]] = {k: [] for k in CANON_TERMS + NOVEL_TERMS}
    lr, lam = lr_schedule(0, sched), clip_weight(0, sched, cfg.weights.clip_start, cfg.weights.clip_max)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "renders").mkdir(parents=True, exist_ok=True)

    def report(iteration):
        metrics = evaluate(fld, cfg)
        if out_dir is not None:
            snap = render_image(fld, canon.pose, novel_opts, cfg.near, cfg.far, cfg.n_samples)
            io.write_png(out_dir / "renders" / f"iter_{iteration:07d}.png", snap["color"])
            io.write_pfm(out_dir / "renders" / f"iter_{iteration:07d}.pfm", snap["depth"])
        terms = [float(np.mean(interval[k])) if interval[k] else math.nan for k in CANON_TERMS + NOVEL_TERMS]
        rows.append([iteration, counts["canon"], counts["novel"], *terms, lr, lam,
                     *(metrics[k] for k in METRIC_COLUMNS)])
        log.info("iter %d psnr %.2f depth_acc %.4f", iteration, metrics["canon_psnr"], metrics["canon_depth_acc"])
        for v in interval.values():
            v.clear()

    for it in range(sched.num_iter):
        view = view_choice(it, sched.num_iter, sched.tau, draw_u(rng))
        counts[view] += 1
        lam = clip_weight(it, sched, cfg.weights.clip_start, cfg.weights.clip_max)
        if view == "canon":
            a, b = (int(v) for v in rng.integers(0, s, size=2))
            sub = (slice(a, None, s), slice(b, None, s))
            o, d = c_origins[sub].reshape(-1, 3), c_dirs[sub].reshape(-1, 3)
            t, delta = sample_depths(cfg.near, cfg.far, cfg.n_samples, mode, rng, batch=len(d))
            hit = canon.mask[sub].ravel() if cfg.kernel_hits_only else None
            out = render_rays(fld, o, d, t, delta, canon_opts, canon.depth[sub].ravel(), hit)
            hw = canon.color[sub].shape[:2]
            img = out["color"].reshape(*hw, 3)
            comps = {
                "recon": loss_recon(img, canon.color[sub]),
                "depth": loss_depth(out["depth"], canon.depth[sub].ravel(), canon.mask[sub].ravel()),
                "vgg": loss_feature(extractor, img, canon.color[sub], "all"),
            }
        else:
            yaw, pitch = sample_novel_pose(rng)
            pose = cfg.pose(yaw, pitch, cfg.novel_size)
            o, d = (a.reshape(-1, 3) for a in generate_rays(pose))
            t, delta = sample_depths(cfg.near, cfg.far, cfg.n_samples, mode, rng, batch=len(d))
            out = render_rays(fld, o, d, t, delta, novel_opts)
            img = out["color"].reshape(cfg.novel_size, cfg.novel_size, 3)
            comps = {
                "clip": loss_semantic(embedder, img, reference),
                "tv": loss_tv(out["depth"].reshape(cfg.novel_size, cfg.novel_size)),
                "vgg2": loss_feature(extractor, img, reference, "last_two"),
            }
        loss = total_loss(view, comps, cfg.weights, lam)
        if not torch.isfinite(loss):
            breakdown = {k: v.item() for k, v in comps.items()}
            raise FitError(f"non-finite loss at iteration {it} ({view}): {breakdown}")
        for k, v in comps.items():
            interval[k].append(v.item())
        for p in params.values():
            p.grad = None
        loss.backward()
        lr = lr_schedule(it, sched)
        with torch.no_grad():
            adam_step(params, {k: p.grad for k, p in params.items()}, state, lr,
                      sched.beta1, sched.beta2, sched.adam_eps)
        if (it + 1) % cfg.report_every == 0:
            report(it + 1)
    if not rows or rows[-1][0] != sched.num_iter:
        report(sched.num_iter)

    result = FitResult(fld, rows)
    if out_dir is not None:
        result.checkpoint = out_dir / "checkpoint.bin"
        result.report = out_dir / "report.csv"
        save_fit(result.checkpoint, fld, cfg, sched.num_iter)
        io.write_csv(result.report, REPORT_COLUMNS, rows)
        final = render_image(fld, canon.pose, novel_opts, cfg.near, cfg.far, cfg.n_samples)
        io.write_png(out_dir / "canonical.png", final["color"])
        io.write_pfm(out_dir / "canonical_depth.pfm", final["depth"])
    return result


def save_fit(path, fld: Field, cfg: FitConfig, iteration: int) -> None:
    io.save_checkpoint(path, fld.pyramid(), fld.decoder_params(), iteration, {"config": cfg.to_dict()})


def load_fit(path) -> tuple[Field, FitConfig, dict]:
    pyramid, decoder, header = io.load_checkpoint(path)
    if "config" not in header:
        raise io.CheckpointError(f"{path}: checkpoint carries no fit config")
    return Field(pyramid, decoder), FitConfig.from_dict(header["config"]), header
