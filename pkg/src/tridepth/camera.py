"""Orbit cameras, pinhole ray generation and depth sampling along rays."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CANONICAL_YAW = math.pi / 2
CANONICAL_PITCH = 0.0
NOVEL_YAW_STD = 0.3
NOVEL_PITCH_STD = 0.15


@dataclass(frozen=True)
class CameraPose:
    yaw: float
    pitch: float
    radius: float
    fov: float
    height: int
    width: int

    @property
    def position(self) -> np.ndarray:
        cp = math.cos(self.pitch)
        return self.radius * np.array([math.cos(self.yaw) * cp, math.sin(self.yaw) * cp, math.sin(self.pitch)])

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) unit vectors; forward points at the origin."""
        forward = -self.position / self.radius
        up = np.array([0.0, 0.0, 1.0])
        up = up - forward * (forward @ up)
        up /= np.linalg.norm(up)
        right = np.cross(forward, up)
        return forward, right, up


def pose_from_angles(yaw: float, pitch: float, radius: float = 2.0, fov: float = math.radians(50.0),
                     height: int = 32, width: int = 32) -> CameraPose:
    if not 0 < fov < math.pi:
        raise ValueError(f"fov must lie in (0, pi), got {fov}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not abs(pitch) < math.pi / 2:
        raise ValueError(f"pitch {pitch} is at or beyond a pole")
    if height < 1 or width < 1:
        raise ValueError("image must have at least one pixel")
    return CameraPose(float(yaw), float(pitch), float(radius), float(fov), int(height), int(width))


def angles_from_position(position) -> tuple[float, float, float]:
    """Inverse of the orbit convention: returns (yaw, pitch, radius)."""
    x, y, z = (float(v) for v in position)
    radius = math.sqrt(x * x + y * y + z * z)
    return math.atan2(y, x), math.asin(z / radius), radius


def canonical_pose(**kwargs) -> CameraPose:
    return pose_from_angles(CANONICAL_YAW, CANONICAL_PITCH, **kwargs)


def sample_novel_pose(rng: np.random.Generator) -> tuple[float, float]:
    """Draw (yaw, pitch) around the canonical view."""
    yaw = rng.normal(CANONICAL_YAW, NOVEL_YAW_STD)
    pitch = rng.normal(CANONICAL_PITCH, NOVEL_PITCH_STD)
    return float(yaw), float(pitch)


def generate_rays(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel origins and unit directions, each of shape ``(H, W, 3)``.

    Row 0 is the top of the image; pixel centres sit at half-integer offsets.
    """
    forward, right, up = pose.basis()
    h, w = pose.height, pose.width
    half = math.tan(pose.fov / 2)
    cols = ((np.arange(w) + 0.5) / w * 2 - 1) * half * (w / h)
    rows = (1 - (np.arange(h) + 0.5) / h * 2) * half
    dirs = forward + cols[None, :, None] * right + rows[:, None, None] * up
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def sample_depths(near: float, far: float, n: int, mode: str = "midpoint",
                  rng: np.random.Generator | None = None, batch: int | None = None):
    """Sample distances along a ray and their spacings.

    Returns ``(t, delta)`` with shape ``(n,)``, or ``(batch, n)`` when a batch
    size is given (stratified mode draws independent jitter per ray).  The
    last spacing runs to the far plane.
    """
    if not 0 <= near < far:
        raise ValueError(f"need 0 <= near < far, got {near}, {far}")
    if n < 2:
        raise ValueError("need at least two samples")
    step = (far - near) / n
    lower = near + step * np.arange(n)
    shape = (n,) if batch is None else (batch, n)
    if mode == "midpoint":
        t = np.broadcast_to(lower + 0.5 * step, shape).copy()
    elif mode == "stratified":
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        t = lower + step * rng.random(shape)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    delta = np.empty_like(t)
    delta[..., :-1] = np.diff(t, axis=-1)
    delta[..., -1] = far - t[..., -1]
    return t, delta
