"""Multi-resolution triplane feature field.

Planes are stored channel-first as ``(3, C, R, R)`` arrays, plane order
``XY, XZ, YZ``.  Within a plane, rows index the second projected coordinate
and columns the first, both spanning ``[-1, 1]`` with grid nodes on the
boundary (``align_corners`` convention).

Only the finest level ``G1`` holds parameters; coarser levels are box-filtered
copies of it, rebuilt whenever ``G1`` changes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, ParameterBuffer, Tape

PLANES = ("XY", "XZ", "YZ")
# coordinate indices (column axis, row axis) projected onto each plane
PLANE_AXES = ((0, 1), (0, 2), (1, 2))
NUM_LEVELS = 3
INIT_RANGE = 1e-2


def downsample_plane(plane: np.ndarray) -> np.ndarray:
    """Halve the resolution of the trailing two axes with a 2x2 box filter."""
    plane = np.asarray(plane, dtype=np.float64)
    r = plane.shape[-1]
    if plane.shape[-2] != r:
        raise ValueError(f"plane must be square, got {plane.shape[-2:]}")
    if r % 2:
        raise ValueError(f"cannot halve odd resolution {r}")
    blocks = plane.reshape(*plane.shape[:-2], r // 2, 2, r // 2, 2)
    return blocks.mean(axis=(-3, -1))


@dataclass
class TriplanePyramid:
    """Three resolution levels of three orthogonal feature planes."""

    levels: list[np.ndarray]
    seed: int | None = None
    resolutions: list[int] = field(init=False)

    def __post_init__(self):
        if len(self.levels) != NUM_LEVELS:
            raise ValueError(f"expected {NUM_LEVELS} levels, got {len(self.levels)}")
        for lvl in self.levels:
            if lvl.ndim != 4 or lvl.shape[0] != 3 or lvl.shape[2] != lvl.shape[3]:
                raise ValueError(f"level must have shape (3, C, R, R), got {lvl.shape}")
            if lvl.shape[1] != self.levels[0].shape[1]:
                raise ValueError("all levels must share the channel count")
            if not np.all(np.isfinite(lvl)):
                raise ValueError("triplane entries must be finite")
        self.resolutions = [lvl.shape[-1] for lvl in self.levels]

    @classmethod
    def from_base(cls, base: np.ndarray, seed: int | None = None) -> "TriplanePyramid":
        base = np.asarray(base, dtype=np.float64)
        if base.shape[-1] % 4:
            raise ValueError(f"base resolution {base.shape[-1]} is not divisible by 4")
        levels = [base]
        for _ in range(NUM_LEVELS - 1):
            levels.append(downsample_plane(levels[-1]))
        return cls(levels, seed)

    @property
    def base(self) -> np.ndarray:
        return self.levels[0]

    @property
    def channels(self) -> int:
        return self.levels[0].shape[1]

    def rederive(self) -> None:
        """Recompute the coarse levels from the (possibly updated) base level."""
        for i in range(1, NUM_LEVELS):
            self.levels[i] = downsample_plane(self.levels[i - 1])

    def scaled(self, alpha: float) -> "TriplanePyramid":
        return TriplanePyramid([alpha * lvl for lvl in self.levels], self.seed)


def pyramid_build(base_resolution: int, channels: int, seed: int = 0, init: str = "uniform") -> TriplanePyramid:
    """Create a pyramid with a freshly initialised base level.

    ``init`` is ``"uniform"`` (entries in +-1e-2) or ``"zeros"``.
    """
    if base_resolution % 4 or base_resolution < 4:
        raise ValueError(f"base resolution must be a positive multiple of 4, got {base_resolution}")
    if channels < 1:
        raise ValueError("need at least one channel")
    shape = (3, channels, base_resolution, base_resolution)
    if init == "uniform":
        base = np.random.default_rng(seed).uniform(-INIT_RANGE, INIT_RANGE, size=shape)
    elif init == "zeros":
        base = np.zeros(shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return TriplanePyramid.from_base(base, seed)


def _bilinear_setup(u: float, res: int):
    """Lower node index and weight of the upper node; a 1x1 plane is constant."""
    if res == 1:
        return 0, 0.0
    f = (u + 1.0) * 0.5 * (res - 1)
    i0 = min(int(np.floor(f)), res - 2)
    return i0, f - i0


def _check_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"point must be a 3-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point {p} is not finite")
    return np.clip(p, -1.0, 1.0)


def sample_plane(plane: np.ndarray, u: float, v: float) -> np.ndarray:
    """Bilinearly sample a ``(C, R, R)`` plane at normalised ``(u, v)``."""
    res = plane.shape[-1]
    c0, wu = _bilinear_setup(u, res)
    r0, wv = _bilinear_setup(v, res)
    c1, r1 = min(c0 + 1, res - 1), min(r0 + 1, res - 1)
    return ((1 - wu) * (1 - wv) * plane[:, r0, c0] + wu * (1 - wv) * plane[:, r0, c1]
            + (1 - wu) * wv * plane[:, r1, c0] + wu * wv * plane[:, r1, c1])


def sample_point(pyramid: TriplanePyramid, p) -> np.ndarray:
    """Feature vector at ``p``: mean over planes, summed over levels."""
    p = _check_point(p)
    out = np.zeros(pyramid.channels)
    for lvl in pyramid.levels:
        acc = np.zeros(pyramid.channels)
        for k, (a, b) in enumerate(PLANE_AXES):
            acc += sample_plane(lvl[k], p[a], p[b])
        out += acc / 3.0
    return out


class TapeTriplane:
    """Differentiable view of a pyramid on a scalar tape.

    Leaves live only in the base buffer; coarse-level entries are recorded as
    box averages of base entries, so their gradients land on ``G1``.
    """

    def __init__(self, tape: Tape, base: ParameterBuffer):
        self.tape = tape
        self.base = base
        _, self.channels, self.resolution, _ = base.values.shape
        self._cache: dict[tuple, Node] = {}

    def entry(self, level: int, plane: int, channel: int, row: int, col: int) -> Node:
        if level == 0:
            return self.base[(plane, channel, row, col)]
        key = (level, plane, channel, row, col)
        node = self._cache.get(key)
        if node is None:
            kids = [self.entry(level - 1, plane, channel, 2 * row + dr, 2 * col + dc)
                    for dr in (0, 1) for dc in (0, 1)]
            node = self.tape.sum(kids) * 0.25
            self._cache[key] = node
        return node

    def sample_point(self, p) -> list[Node]:
        p = _check_point(p)
        tape = self.tape
        out = []
        per_level = []
        for level in range(NUM_LEVELS):
            res = self.resolution >> level
            taps = []
            for k, (a, b) in enumerate(PLANE_AXES):
                c0, wu = _bilinear_setup(p[a], res)
                r0, wv = _bilinear_setup(p[b], res)
                taps.append((k, r0, c0, wu, wv))
            per_level.append((level, taps))
        for ch in range(self.channels):
            total = None
            for level, taps in per_level:
                terms = []
                for k, r0, c0, wu, wv in taps:
                    for dr, dc, w in ((0, 0, (1 - wu) * (1 - wv)), (0, 1, wu * (1 - wv)),
                                      (1, 0, (1 - wu) * wv), (1, 1, wu * wv)):
                        if w != 0.0:
                            terms.append(self.entry(level, k, ch, r0 + dr, c0 + dc) * w)
                level_val = tape.sum(terms) * (1.0 / 3.0)
                total = level_val if total is None else total + level_val
            out.append(total)
        return out
