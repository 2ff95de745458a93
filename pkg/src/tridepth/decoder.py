"""Two-layer MLP mapping a triplane feature and view direction to (sigma, rgb)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, ParameterBuffer, Tape

HIDDEN = 64
DENSITY_OFFSET = -1.0
PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class DecoderParams:
    w1: np.ndarray  # (HIDDEN, C + 3)
    b1: np.ndarray  # (HIDDEN,)
    w2: np.ndarray  # (4, HIDDEN); row 0 feeds density
    b2: np.ndarray  # (4,)
    density_offset: float = DENSITY_OFFSET

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hidden, fan_in = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (4, hidden) or self.b2.shape != (4,):
            raise ValueError("inconsistent decoder parameter shapes")
        if fan_in < 4:
            raise ValueError("decoder input must hold at least one feature channel plus direction")

    @property
    def channels(self) -> int:
        return self.w1.shape[1] - 3

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "DecoderParams":
        return DecoderParams(**{k: v.copy() for k, v in self.arrays().items()}, density_offset=self.density_offset)


def decoder_init(channels: int, seed: int = 0, zero_output: bool = True) -> DecoderParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases.

    With ``zero_output`` the output layer starts at zero, so every sample
    initially decodes to ``sigma = softplus(-1)`` and grey colour.
    """
    if channels < 1:
        raise ValueError("need at least one channel")
    rng = np.random.default_rng(seed)
    fan1 = channels + 3
    w1 = rng.uniform(-1, 1, size=(HIDDEN, fan1)) / math.sqrt(fan1)
    w2 = rng.uniform(-1, 1, size=(4, HIDDEN)) / math.sqrt(HIDDEN)
    if zero_output:
        w2[:] = 0.0
    return DecoderParams(w1, np.zeros(HIDDEN), w2, np.zeros(4))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def decode(params: DecoderParams, g, d) -> tuple[float, np.ndarray]:
    g = np.asarray(g, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(d))):
        raise ValueError("decoder input is not finite")
    h = softplus(params.w1 @ np.concatenate([g, d]) + params.b1)
    out = params.w2 @ h + params.b2
    return float(softplus(out[0] + params.density_offset)), sigmoid(out[1:])


class TapeDecoder:
    """The decoder evaluated on a scalar tape with its weights as leaves."""

    def __init__(self, tape: Tape, params: DecoderParams, prefix: str = "dec."):
        self.tape = tape
        self.params = params
        self.buffers: dict[str, ParameterBuffer] = {
            name: tape.parameters(prefix + name, arr) for name, arr in params.arrays().items()}

    def decode(self, g: list[Node], d) -> tuple[Node, list[Node]]:
        tape = self.tape
        w1, b1, w2, b2 = (self.buffers[n] for n in PARAM_NAMES)
        inputs = list(g) + [tape.constant(float(v)) for v in d]
        hidden = []
        for j in range(self.params.w1.shape[0]):
            pre = tape.dot([w1[(j, i)] for i in range(len(inputs))], inputs) + b1[j]
            hidden.append(tape.apply("softplus", pre))
        outs = [tape.dot([w2[(k, j)] for j in range(len(hidden))], hidden) + b2[k] for k in range(4)]
        sigma = tape.apply("softplus", outs[0] + self.params.density_offset)
        rgb = [tape.apply("sigmoid", o) for o in outs[1:]]
        return sigma, rgb
