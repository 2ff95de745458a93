"""Volume compositing, accumulated depth and the depth-gradient kernel.

The numeric helpers here work on plain arrays.  ``render_ray`` builds the
same computation on a scalar tape so individual density and colour samples
can be hooked; the batched torch path used for fitting lives in
:mod:`tridepth.engine`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, Tape, set_grad_scale
from .decoder import DecoderParams, TapeDecoder
from .triplane import TapeTriplane, TriplanePyramid


@dataclass(frozen=True)
class KernelParams:
    s1: float = 1.25
    s2: float = 0.03
    c_min: float = 0.05
    c_max: float = 1.0

    def __post_init__(self):
        if not (self.s1 > 0 and self.s2 > 0 and 0 < self.c_min <= self.c_max):
            raise ValueError(f"invalid kernel parameters {self}")

    @classmethod
    def from_spacing(cls, spacing: float, **kwargs) -> "KernelParams":
        """Kernel whose width is half the spacing between ray samples."""
        return cls(s2=0.5 * spacing, **kwargs)


@dataclass(frozen=True)
class RenderOptions:
    sigma_scale: float = 1.0
    kernel_enabled: bool = False
    kernel: KernelParams = field(default_factory=KernelParams)
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    eps: float = 1e-10

    def __post_init__(self):
        if not (self.sigma_scale > 0 and math.isfinite(self.sigma_scale)):
            raise ValueError(f"sigma_scale must be positive, got {self.sigma_scale}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class RenderResult:
    color: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray
    opacity: float
    depth: float


@dataclass
class RaySampleBatch:
    """One ray with its sample distances and optional pseudo ground-truth depth."""

    origin: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    delta: np.ndarray
    depth_gt: float | None = None


def kernel_eval(x, t, params: KernelParams = KernelParams()):
    """Clamped Gaussian of the sample-to-surface distance; vectorised."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    raw = params.s1 * np.exp(-((x - t) ** 2) / params.s2)
    out = np.clip(raw, params.c_min, params.c_max)
    return float(out) if out.ndim == 0 else out


def composite(sigma, color, delta, background=(1.0, 1.0, 1.0)):
    """Alpha-composite samples front to back.

    Returns ``(color, weights, transmittance, opacity)``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    color = np.asarray(color, dtype=np.float64).reshape(-1, 3)
    delta = np.asarray(delta, dtype=np.float64)
    if not (sigma.shape == delta.shape == (len(color),)) or len(sigma) == 0:
        raise ValueError(f"length mismatch: sigma {sigma.shape}, color {color.shape}, delta {delta.shape}")
    tau = sigma * delta
    trans = np.exp(-np.concatenate([[0.0], np.cumsum(tau)[:-1]]))
    weights = trans * -np.expm1(-tau)
    opacity = float(weights.sum())
    rgb = weights @ color + (1.0 - opacity) * np.asarray(background, dtype=np.float64)
    return rgb, weights, trans, opacity


def accumulated_depth(weights, t, eps: float = 1e-10) -> float:
    weights = np.asarray(weights, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if weights.shape != t.shape:
        raise ValueError("weights and t must have equal length")
    return float((weights * t).sum() / (weights.sum() + eps))


@dataclass
class TapeRender:
    """Nodes produced by rendering one ray on a tape."""

    sigma: list[Node]
    rgb: list[list[Node]]
    weights: list[Node]
    transmittance: list[Node]
    opacity: Node
    color: list[Node]
    depth: Node
    kernel: np.ndarray | None = None

    def result(self) -> RenderResult:
        return RenderResult(
            color=np.array([n.value for n in self.color]),
            weights=np.array([n.value for n in self.weights]),
            transmittance=np.array([n.value for n in self.transmittance]),
            opacity=self.opacity.value,
            depth=self.depth.value,
        )


class TapeModel:
    """Triplane and decoder parameters registered on one tape.

    Rays rendered through the same model share leaves, so the gradient of a
    multi-ray loss comes out of a single backward sweep.
    """

    def __init__(self, tape: Tape, pyramid: TriplanePyramid, decoder_params: DecoderParams):
        self.tape = tape
        self.field = TapeTriplane(tape, tape.parameters("G1", pyramid.base))
        self.decoder = TapeDecoder(tape, decoder_params)


def render_ray_tape(model: TapeModel, ray: RaySampleBatch, opts: RenderOptions) -> TapeRender:
    """Render one ray on the model's tape, hooking samples when the kernel is on."""
    tape, planes, decoder = model.tape, model.field, model.decoder
    if opts.kernel_enabled and ray.depth_gt is None:
        raise ValueError("kernel regularisation needs the ray's pseudo ground-truth depth")
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    sigmas, rgbs = [], []
    for ti in ray.t:
        g = planes.sample_point(o + ti * d)
        sigma, rgb = decoder.decode(g, d)
        if opts.sigma_scale != 1.0:
            sigma = sigma * opts.sigma_scale
        sigmas.append(sigma)
        rgbs.append(rgb)
    k = None
    if opts.kernel_enabled:
        k = kernel_eval(ray.depth_gt, ray.t, opts.kernel)
        for ki, sigma, rgb in zip(k, sigmas, rgbs):
            set_grad_scale(sigma, ki)
            for c in rgb:
                set_grad_scale(c, ki)
    # transmittance and weights, same algebra as ``composite``
    taus = [s * float(dt) for s, dt in zip(sigmas, ray.delta)]
    trans, weights = [], []
    running = None
    for tau in taus:
        tr = tape.constant(1.0) if running is None else tape.apply("exp", -running)
        trans.append(tr)
        weights.append(tr * (1.0 - tape.apply("exp", -tau)))
        running = tau if running is None else running + tau
    opacity = tape.sum(weights)
    color = []
    for ch in range(3):
        acc = tape.sum(w * rgb[ch] for w, rgb in zip(weights, rgbs))
        color.append(acc + (1.0 - opacity) * opts.background[ch])
    num = tape.sum(w * float(ti) for w, ti in zip(weights, ray.t))
    depth = num / (opacity + opts.eps)
    return TapeRender(sigmas, rgbs, weights, trans, opacity, color, depth, k)


def render_ray(pyramid: TriplanePyramid, decoder_params: DecoderParams, ray: RaySampleBatch,
               opts: RenderOptions) -> tuple[Tape, TapeRender]:
    """Render a single ray on a fresh tape.

    The base triplane level is registered as parameter buffer ``"G1"`` and the
    decoder weights as ``"dec.w1"`` etc.
    """
    model = TapeModel(Tape(), pyramid, decoder_params)
    return model.tape, render_ray_tape(model, ray, opts)
