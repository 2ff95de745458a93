"""View alternation, weight/learning-rate schedules and the Adam update."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScheduleConfig:
    num_iter: int = 400_000
    tau: float = 0.4
    clip_warmup_frac: float = 0.25
    lr_warmup_frac: float = 0.05
    lr_init: float = 2e-6
    lr_max: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.num_iter < 0:
            raise ValueError("num_iter must be non-negative")
        if not (0 <= self.clip_warmup_frac <= 1 and 0 <= self.lr_warmup_frac <= 1):
            raise ValueError("warmup fractions must lie in [0, 1]")

    @property
    def clip_warmup(self) -> int:
        return round(self.clip_warmup_frac * self.num_iter)

    @property
    def lr_warmup(self) -> int:
        return round(self.lr_warmup_frac * self.num_iter)


def clip_weight(iteration: int, cfg: ScheduleConfig, start: float = 0.02, end: float = 0.35) -> float:
    """Linear ramp of the semantic-loss weight over the clip warmup."""
    if cfg.clip_warmup <= 0 or iteration >= cfg.clip_warmup:
        return end
    return start + (end - start) * iteration / cfg.clip_warmup


def novel_probability(iteration: int, num_iter: int, tau: float) -> float:
    if num_iter <= 0:
        return tau
    return min(tau, 2.0 * iteration / num_iter)


def view_choice(iteration: int, num_iter: int, tau: float, u: float) -> str:
    """``"novel"`` iff ``u <= min(tau, 2 * iter / num_iter)``, else ``"canon"``."""
    return "novel" if u <= novel_probability(iteration, num_iter, tau) else "canon"


def draw_u(rng: np.random.Generator) -> float:
    """Uniform draw on (0, 1]; zero is excluded so iteration 0 is always canonical."""
    return 1.0 - rng.random()


def lr_schedule(iteration: int, cfg: ScheduleConfig) -> float:
    """Linear warmup from ``lr_init`` to ``lr_max``, then cosine decay back."""
    warm = cfg.lr_warmup
    if iteration < warm:
        return cfg.lr_init + (cfg.lr_max - cfg.lr_init) * iteration / warm
    span = cfg.num_iter - warm
    if span <= 0:
        return cfg.lr_max
    progress = min(1.0, (iteration - warm) / span)
    return cfg.lr_init + 0.5 * (cfg.lr_max - cfg.lr_init) * (1.0 + math.cos(math.pi * progress))


class AdamState:
    def __init__(self):
        self.step = 0
        self.m: dict = {}
        self.v: dict = {}


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8) -> dict:
    """Bias-corrected Adam update, applied in place.

    Works on numpy arrays and on torch tensors (call under ``torch.no_grad``).
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match parameter {name}")
        if not np.all(np.isfinite(np.asarray(g))):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = g * 0.0
            state.v[name] = g * 0.0
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        params[name] -= lr * (m / bc1) / ((v / bc2) ** 0.5 + eps)
    return params
