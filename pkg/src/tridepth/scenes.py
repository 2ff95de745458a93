"""Analytic RGB-D scenes: closed-form ray casting of spheres and a plane."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import CameraPose, generate_rays


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float] = (0.9, 0.45, 0.2)


@dataclass(frozen=True)
class Plane:
    """Infinite plane ``normal . p = offset``, clipped to the unit cube."""

    normal: tuple[float, float, float]
    offset: float
    albedo: tuple[float, float, float] = (0.6, 0.6, 0.6)


@dataclass(frozen=True)
class SceneDescriptor:
    kind: str = "sphere"
    spheres: tuple[Sphere, ...] = ()
    planes: tuple[Plane, ...] = ()
    light: tuple[float, float, float] = (0.4, 1.0, 0.6)
    checker: float = 0.0  # checker cells per unit length; 0 disables
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for s in self.spheres:
            if np.any(np.abs(np.asarray(s.center)) + s.radius > 1.0) or s.radius <= 0:
                raise ValueError(f"sphere {s} does not fit inside the [-1, 1] cube")
        for p in self.planes:
            if np.linalg.norm(p.normal) == 0:
                raise ValueError("plane normal must be non-zero")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneDescriptor":
        data = dict(data)
        spheres = tuple(Sphere(tuple(s["center"]), float(s["radius"]), tuple(s.get("albedo", Sphere.albedo)))
                        for s in data.pop("spheres", ()))
        planes = tuple(Plane(tuple(p["normal"]), float(p["offset"]), tuple(p.get("albedo", Plane.albedo)))
                       for p in data.pop("planes", ()))
        for key in ("light", "background"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(spheres=spheres, planes=planes, **data)


def preset(kind: str) -> SceneDescriptor:
    if kind == "sphere":
        return SceneDescriptor("sphere", spheres=(Sphere((0.0, 0.0, 0.0), 0.6),))
    if kind == "two_spheres":
        return SceneDescriptor("two_spheres", spheres=(
            Sphere((-0.25, 0.3, 0.1), 0.35, (0.2, 0.55, 0.9)),
            Sphere((0.25, -0.3, -0.1), 0.45, (0.9, 0.45, 0.2)),
        ))
    if kind == "plane":
        return SceneDescriptor("plane", planes=(Plane((0.0, 0.0, 1.0), -0.5),), checker=4.0)
    if kind == "empty":
        return SceneDescriptor("empty")
    raise ValueError(f"unknown scene kind {kind!r}")


def _intersect_sphere(s: Sphere, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    oc = o - np.asarray(s.center)
    b = np.einsum("...i,...i", oc, d)
    c = np.einsum("...i,...i", oc, oc) - s.radius ** 2
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    t0, t1 = -b - root, -b + root
    t = np.where(t0 > 0, t0, t1)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _intersect_plane(p: Plane, o: np.ndarray, d: np.ndarray) -> np.ndarray:
    n = np.asarray(p.normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    off = p.offset / np.linalg.norm(p.normal)
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (off - o @ n) / denom
    hit_pt = o + np.where(np.isfinite(t), t, 0.0)[..., None] * d
    inside = np.all(np.abs(hit_pt) <= 1.0 + 1e-12, axis=-1)
    return np.where(np.isfinite(t) & (t > 0) & inside, t, np.inf)


def cast(desc: SceneDescriptor, o, d):
    """Nearest positive hit distance per ray, the primitive index and the normal.

    Misses get distance ``inf`` and index -1.
    """
    o = np.asarray(o, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    prims = list(desc.spheres) + list(desc.planes)
    shape = np.broadcast_shapes(o.shape, d.shape)[:-1]
    best = np.full(shape, np.inf)
    which = np.full(shape, -1)
    for i, prim in enumerate(prims):
        t = _intersect_sphere(prim, o, d) if isinstance(prim, Sphere) else _intersect_plane(prim, o, d)
        closer = t < best
        best = np.where(closer, t, best)
        which = np.where(closer, i, which)
    normals = np.zeros(shape + (3,))
    pts = o + np.where(np.isfinite(best), best, 0.0)[..., None] * d
    for i, prim in enumerate(prims):
        sel = which == i
        if isinstance(prim, Sphere):
            normals[sel] = (pts[sel] - np.asarray(prim.center)) / prim.radius
        else:
            n = np.asarray(prim.normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            flip = np.where((np.broadcast_to(d, shape + (3,))[sel] @ n) > 0, -1.0, 1.0)
            normals[sel] = flip[:, None] * n
    return best, which, normals


def gt_depth_along_ray(desc: SceneDescriptor, o, d, far: float = 3.5) -> tuple[float, bool]:
    """Distance to the nearest surface along a unit ray, or ``(far, False)``."""
    t, _, _ = cast(desc, np.asarray(o, dtype=np.float64)[None], np.asarray(d, dtype=np.float64)[None])
    hit = bool(np.isfinite(t[0]) and t[0] <= far)
    return (float(t[0]) if hit else float(far)), hit


@dataclass
class SceneSample:
    color: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    pose: CameraPose
    descriptor: SceneDescriptor = field(repr=False)


def make_scene(desc: SceneDescriptor, pose: CameraPose, near: float = 0.5, far: float = 3.5) -> SceneSample:
    """Ray-cast the descriptor from ``pose`` into colour, depth and hit mask."""
    o, d = generate_rays(pose)
    t, which, normals = cast(desc, o, d)
    mask = np.isfinite(t) & (t >= near) & (t <= far)
    depth = np.where(mask, t, far)
    light = np.asarray(desc.light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    shade = np.maximum(0.0, normals @ light)
    prims = list(desc.spheres) + list(desc.planes)
    albedo = np.zeros(t.shape + (3,))
    for i, prim in enumerate(prims):
        albedo[which == i] = prim.albedo
    if desc.checker > 0:
        pts = o + np.where(mask, t, 0.0)[..., None] * d
        parity = np.floor(pts * desc.checker).astype(np.int64).sum(axis=-1) % 2
        albedo = albedo * np.where(parity == 0, 1.0, 0.55)[..., None]
    color = np.where(mask[..., None], albedo * shade[..., None], np.asarray(desc.background))
    return SceneSample(color, depth, mask, pose, desc)
