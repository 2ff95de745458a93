"""Gradient self-check of the tape renderer.

Three independent routes are compared on a tiny random scene:

* tape backward (the code under test),
* central finite differences of the batched torch forward (kernel off),
* the batched torch engine's own backward with kernel hooks (kernel on).

The kernel-on gradient is not the gradient of any loss, so it is verified by
the factorisation identity at every hooked node instead of finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .autodiff import Tape
from .camera import canonical_pose, generate_rays, sample_depths
from .decoder import decoder_init
from .engine import Field, render_rays
from .render import RaySampleBatch, RenderOptions, TapeModel, render_ray_tape
from .triplane import TriplanePyramid

FAIL_THRESHOLD = 1e-4
DECODER_GAIN = 3.0


@dataclass(frozen=True)
class GradcheckConfig:
    base_resolution: int = 4
    channels: int = 2
    n_rays: int = 4
    n_samples: int = 8
    near: float = 1.0
    far: float = 3.0
    step: float = 1e-6
    # denominators below this fraction of the largest gradient in a buffer are floored,
    # and never below abs_floor (central-difference round-off is ~1e-10 at step 1e-6)
    rel_floor: float = 1e-3
    abs_floor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.n_samples > 8 or self.n_rays > 4:
            raise ValueError("gradcheck is meant for tiny problems (<= 4 rays, <= 8 samples)")


@dataclass
class GradcheckReport:
    max_rel_err: float
    worst_param: str
    factor_err_sigma: float
    factor_err_color: float
    forward_identical: bool
    hooked_vs_engine: float
    per_buffer: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.max_rel_err <= FAIL_THRESHOLD and self.forward_identical
                and self.factor_err_sigma <= 1e-12 and self.factor_err_color <= 1e-12
                and self.hooked_vs_engine <= FAIL_THRESHOLD)

    def lines(self) -> list[str]:
        out = [f"{name:10s} max rel err {err:.3e}" for name, err in self.per_buffer.items()]
        out += [
            f"kernel off: max relative error vs finite differences {self.max_rel_err:.3e} ({self.worst_param})",
            f"kernel on: sigma adjoint factorisation error {self.factor_err_sigma:.3e}",
            f"kernel on: colour adjoint factorisation error {self.factor_err_color:.3e}",
            f"kernel on: forward values identical to kernel off: {self.forward_identical}",
            f"kernel on: tape vs batched-engine hooked gradients {self.hooked_vs_engine:.3e}",
            "PASS" if self.passed else "FAIL",
        ]
        return out


@dataclass
class TinyProblem:
    pyramid: TriplanePyramid
    decoder: object
    rays: list[RaySampleBatch]
    target_rgb: np.ndarray
    target_depth: np.ndarray


def tiny_problem(cfg: GradcheckConfig = GradcheckConfig()) -> TinyProblem:
    rng = np.random.default_rng(cfg.seed)
    res, ch = cfg.base_resolution, cfg.channels
    pyramid = TriplanePyramid.from_base(rng.uniform(-1.0, 1.0, size=(3, ch, res, res)))
    # scaled-up weights keep gradients O(1e-2) so 1e-6 central differences resolve them
    init = decoder_init(ch, cfg.seed + 1, zero_output=False)
    decoder = replace(init, w1=init.w1 * DECODER_GAIN, w2=init.w2 * DECODER_GAIN)
    pose = canonical_pose(height=9, width=9)
    origins, dirs = generate_rays(pose)
    pick = rng.choice(81, size=cfg.n_rays, replace=False)
    t, delta = sample_depths(cfg.near, cfg.far, cfg.n_samples, "stratified", rng, batch=cfg.n_rays)
    target_depth = rng.uniform(1.4, 2.4, size=cfg.n_rays)
    rays = [RaySampleBatch(origins.reshape(-1, 3)[i], dirs.reshape(-1, 3)[i], t[k], delta[k], target_depth[k])
            for k, i in enumerate(pick)]
    return TinyProblem(pyramid, decoder, rays, rng.uniform(0, 1, size=(cfg.n_rays, 3)), target_depth)


def tape_loss(problem: TinyProblem, opts: RenderOptions):
    """Colour MSE plus mean absolute depth error, built on one tape."""
    tape = Tape()
    model = TapeModel(tape, problem.pyramid, problem.decoder)
    renders = [render_ray_tape(model, ray, opts) for ray in problem.rays]
    sq = [(c - float(g)) * (c - float(g)) for r, tgt in zip(renders, problem.target_rgb)
          for c, g in zip(r.color, tgt)]
    recon = tape.sum(sq) * (1.0 / len(sq))
    absdiff = []
    for r, x in zip(renders, problem.target_depth):
        diff = r.depth - float(x)
        absdiff.append(tape.apply("max", diff, -diff))
    loss = recon + tape.sum(absdiff) * (1.0 / len(absdiff))
    return tape, loss, renders


def _stack(problem: TinyProblem):
    rays = problem.rays
    return (np.stack([r.origin for r in rays]), np.stack([r.direction for r in rays]),
            np.stack([r.t for r in rays]), np.stack([r.delta for r in rays]))


def torch_loss(fld: Field, problem: TinyProblem, opts: RenderOptions) -> torch.Tensor:
    o, d, t, delta = _stack(problem)
    out = render_rays(fld, o, d, t, delta, opts, problem.target_depth)
    recon = ((out["color"] - torch.as_tensor(problem.target_rgb)) ** 2).mean()
    return recon + (out["depth"] - torch.as_tensor(problem.target_depth)).abs().mean()


def finite_differences(problem: TinyProblem, opts: RenderOptions, step: float) -> dict[str, np.ndarray]:
    fld = Field(problem.pyramid, problem.decoder)
    grads = {}
    with torch.no_grad():
        for name, tensor in fld.parameters().items():
            flat = tensor.view(-1)
            g = np.zeros(flat.numel())
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + step
                up = float(torch_loss(fld, problem, opts))
                flat[j] = orig - step
                down = float(torch_loss(fld, problem, opts))
                flat[j] = orig
                g[j] = (up - down) / (2 * step)
            grads[name] = g.reshape(tensor.shape)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, rel_floor: float, abs_floor: float = 1e-8) -> np.ndarray:
    scale = max(np.abs(a).max(), np.abs(b).max())
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), max(rel_floor * scale, abs_floor))
    with np.errstate(invalid="ignore"):
        return np.where(denom > 0, np.abs(a - b) / np.where(denom > 0, denom, 1.0), 0.0)


def run_gradcheck(cfg: GradcheckConfig = GradcheckConfig()) -> GradcheckReport:
    problem = tiny_problem(cfg)
    off = RenderOptions(kernel_enabled=False)
    on = RenderOptions(kernel_enabled=True)

    tape_off, loss_off, renders_off = tape_loss(problem, off)
    g_off = tape_off.backward(loss_off)
    fd = finite_differences(problem, off, cfg.step)
    per_buffer, worst, worst_name = {}, 0.0, ""
    for name, g in g_off.items():
        err = float(relative_error(g, fd[name], cfg.rel_floor, cfg.abs_floor).max())
        per_buffer[name] = err
        if err >= worst:
            worst, worst_name = err, name

    tape_on, loss_on, renders_on = tape_loss(problem, on)
    g_on = tape_on.backward(loss_on)
    forward_identical = loss_on.value == loss_off.value and all(
        a.value == b.value for ro, rn in zip(renders_off, renders_on)
        for a, b in zip(ro.color + [ro.depth], rn.color + [rn.depth]))
    err_sigma = err_color = 0.0
    for ro, rn in zip(renders_off, renders_on):
        for i, k in enumerate(rn.kernel):
            err_sigma = max(err_sigma, _ratio_err(rn.sigma[i].grad, k * ro.sigma[i].grad))
            for a, b in zip(rn.rgb[i], ro.rgb[i]):
                err_color = max(err_color, _ratio_err(a.grad, k * b.grad))

    fld = Field(problem.pyramid, problem.decoder)
    torch_loss(fld, problem, on).backward()
    hooked = max(float(relative_error(g_on[name], p.grad.numpy(), cfg.rel_floor, cfg.abs_floor).max())
                 for name, p in fld.parameters().items())
    return GradcheckReport(worst, worst_name, err_sigma, err_color, forward_identical, hooked, per_buffer)


def _ratio_err(actual: float, expected: float) -> float:
    if expected == 0.0:
        return abs(actual)
    return abs(actual - expected) / abs(expected)
