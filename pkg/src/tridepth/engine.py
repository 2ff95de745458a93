"""Batched float64 torch implementation of the field, decoder and renderer.

This is the path the fitting loop runs on.  It computes exactly the same
function as the scalar-tape renderer in :mod:`tridepth.render`, and the depth
kernel is installed as tensor hooks on the density and colour samples, which
multiply the adjoints in the same place the tape's ``grad_scale`` does.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .camera import CameraPose, generate_rays, sample_depths
from .decoder import DecoderParams, PARAM_NAMES
from .render import RenderOptions
from .triplane import NUM_LEVELS, PLANE_AXES, TriplanePyramid

DTYPE = torch.float64


class Field:
    """Learnable base triplane plus decoder weights as leaf tensors."""

    def __init__(self, pyramid: TriplanePyramid, decoder: DecoderParams):
        self.base = torch.tensor(pyramid.base, dtype=DTYPE, requires_grad=True)
        self.dec = {name: torch.tensor(arr, dtype=DTYPE, requires_grad=True)
                    for name, arr in decoder.arrays().items()}
        self.density_offset = decoder.density_offset
        self.seed = pyramid.seed

    def parameters(self) -> dict[str, torch.Tensor]:
        return {"G1": self.base, **{"dec." + k: v for k, v in self.dec.items()}}

    def pyramid(self) -> TriplanePyramid:
        return TriplanePyramid.from_base(self.base.detach().numpy().copy(), self.seed)

    def decoder_params(self) -> DecoderParams:
        return DecoderParams(**{k: v.detach().numpy().copy() for k, v in self.dec.items()},
                             density_offset=self.density_offset)

    def levels(self) -> list[torch.Tensor]:
        levels = [self.base]
        for _ in range(NUM_LEVELS - 1):
            levels.append(F.avg_pool2d(levels[-1], 2))
        return levels

    def sample(self, points: torch.Tensor) -> torch.Tensor:
        """Features for ``(P, 3)`` points, shape ``(P, C)``."""
        p = points.clamp(-1.0, 1.0)
        grid = torch.stack([p[:, list(axes)] for axes in PLANE_AXES])[:, None]  # (3, 1, P, 2)
        out = 0.0
        for lvl in self.levels():
            feats = F.grid_sample(lvl, grid, mode="bilinear", padding_mode="border", align_corners=True)
            out = out + feats[:, :, 0, :].mean(dim=0)
        return out.transpose(0, 1)

    def decode(self, g: torch.Tensor, d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        dec = self.dec
        h = F.softplus(torch.cat([g, d], dim=-1) @ dec["w1"].T + dec["b1"])
        out = h @ dec["w2"].T + dec["b2"]
        return F.softplus(out[:, 0] + self.density_offset), torch.sigmoid(out[:, 1:])


def kernel_torch(x: torch.Tensor, t: torch.Tensor, opts: RenderOptions) -> torch.Tensor:
    k = opts.kernel
    return (k.s1 * torch.exp(-((x[:, None] - t) ** 2) / k.s2)).clamp(k.c_min, k.c_max)


def render_rays(field: Field, origins, dirs, t, delta, opts: RenderOptions, depth_gt=None, hit=None) -> dict:
    """Render ``R`` rays with ``N`` samples each.

    ``origins``/``dirs`` are ``(R, 3)``; ``t``/``delta`` are ``(R, N)``.
    With the kernel enabled, ``depth_gt`` gives each ray's surface distance;
    rays whose ``hit`` flag is false have no surface and are left unscaled.
    Returns colour ``(R, 3)``, depth, opacity and weights.
    """
    origins, dirs, t, delta = (torch.as_tensor(a, dtype=DTYPE) for a in (origins, dirs, t, delta))
    n_rays, n = t.shape
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    g = field.sample(pts.reshape(-1, 3))
    sigma, rgb = field.decode(g, dirs[:, None, :].expand(n_rays, n, 3).reshape(-1, 3))
    sigma = sigma.reshape(n_rays, n)
    rgb = rgb.reshape(n_rays, n, 3)
    if opts.sigma_scale != 1.0:
        sigma = sigma * opts.sigma_scale
    if opts.kernel_enabled:
        if depth_gt is None:
            raise ValueError("kernel regularisation needs pseudo ground-truth depth")
        k = kernel_torch(torch.as_tensor(depth_gt, dtype=DTYPE), t, opts)
        if hit is not None:
            k = torch.where(torch.as_tensor(hit, dtype=torch.bool)[:, None], k, torch.ones_like(k))
        if sigma.requires_grad:
            sigma.register_hook(lambda grad: grad * k)
            rgb.register_hook(lambda grad: grad * k[..., None])
    tau = sigma * delta
    shifted = torch.cat([torch.zeros_like(tau[:, :1]), torch.cumsum(tau, dim=1)[:, :-1]], dim=1)
    trans = torch.exp(-shifted)
    weights = trans * -torch.expm1(-tau)
    opacity = weights.sum(dim=1)
    bg = torch.tensor(opts.background, dtype=DTYPE)
    color = (weights[..., None] * rgb).sum(dim=1) + (1.0 - opacity)[:, None] * bg
    depth = (weights * t).sum(dim=1) / (opacity + opts.eps)
    return {"color": color, "depth": depth, "opacity": opacity, "weights": weights,
            "sigma": sigma, "rgb": rgb, "transmittance": trans}


def render_image(field: Field, pose: CameraPose, opts: RenderOptions, near: float, far: float,
                 n_samples: int, chunk: int = 4096) -> dict[str, np.ndarray]:
    """Deterministic (midpoint-sampled) render of a full image without gradients."""
    origins, dirs = generate_rays(pose)
    origins, dirs = origins.reshape(-1, 3), dirs.reshape(-1, 3)
    t, delta = sample_depths(near, far, n_samples, "midpoint", batch=len(dirs))
    parts = {"color": [], "depth": [], "opacity": []}
    rays_per_chunk = max(1, chunk // n_samples)
    with torch.no_grad():
        for s in range(0, len(dirs), rays_per_chunk):
            sl = slice(s, s + rays_per_chunk)
            out = render_rays(field, origins[sl], dirs[sl], t[sl], delta[sl], opts)
            for key in parts:
                parts[key].append(out[key].numpy())
    h, w = pose.height, pose.width
    return {"color": np.concatenate(parts["color"]).reshape(h, w, 3),
            "depth": np.concatenate(parts["depth"]).reshape(h, w),
            "opacity": np.concatenate(parts["opacity"]).reshape(h, w)}


def export_state(field: Field) -> dict[str, np.ndarray]:
    return {"G1": field.base.detach().numpy().copy(),
            **{name: field.dec[name].detach().numpy().copy() for name in PARAM_NAMES}}
