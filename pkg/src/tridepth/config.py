"""Fit configuration: one JSON document, every field optional."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .camera import pose_from_angles
from .losses import LossWeights
from .render import KernelParams, RenderOptions
from .scenes import SceneDescriptor, preset
from .schedule import ScheduleConfig


@dataclass(frozen=True)
class FitConfig:
    scene: SceneDescriptor = field(default_factory=lambda: preset("sphere"))
    image_size: int = 32
    fov_deg: float = 50.0
    orbit_radius: float = 2.0
    base_resolution: int = 64
    channels: int = 16
    near: float = 0.5
    far: float = 3.5
    n_samples: int = 32
    stratified: bool = True
    kernel_enabled: bool = True
    kernel_hits_only: bool = True  # background rays carry no surface, so no kernel
    kernel: KernelParams = field(default_factory=KernelParams)
    weights: LossWeights = field(default_factory=LossWeights)
    # desk-scale run: fewer iterations need a larger step than the 400k-step defaults
    schedule: ScheduleConfig = field(
        default_factory=lambda: ScheduleConfig(num_iter=4000, lr_init=1e-4, lr_max=1e-2))
    canonical_stride: int = 2  # canonical step renders an (H/s, W/s) strided subimage
    novel_size: int = 16
    extractor_levels: int = 5
    extractor_channels: int = 8
    seed: int = 0
    report_every: int = 500
    eval_poses: int = 16
    nfs_bins: int = 64

    def __post_init__(self):
        if self.image_size % self.canonical_stride:
            raise ValueError("image_size must be divisible by canonical_stride")
        if self.report_every < 1 or self.eval_poses < 1:
            raise ValueError("report_every and eval_poses must be positive")

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)

    def pose(self, yaw: float, pitch: float, size: int | None = None):
        size = size or self.image_size
        return pose_from_angles(yaw, pitch, self.orbit_radius, self.fov, size, size)

    def render_options(self, sigma_scale: float = 1.0, kernel_enabled: bool = False) -> RenderOptions:
        return RenderOptions(sigma_scale=sigma_scale, kernel_enabled=kernel_enabled, kernel=self.kernel,
                             background=tuple(self.scene.background))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["scene"] = self.scene.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        scene = data.pop("scene", None)
        if isinstance(scene, str):
            data["scene"] = preset(scene)
        elif isinstance(scene, dict):
            if set(scene) <= {"kind"}:
                data["scene"] = preset(scene.get("kind", "sphere"))
            else:
                data["scene"] = SceneDescriptor.from_dict(scene)
        for key in ("kernel", "weights", "schedule"):
            if key in data:
                base = cls.__dataclass_fields__[key].default_factory()
                data[key] = replace(base, **data[key])
        return cls(**data)


def load_config(path) -> FitConfig:
    text = Path(path).read_text(encoding="utf-8")
    return FitConfig.from_dict(json.loads(text) if text.strip() else {})
