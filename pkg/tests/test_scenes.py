import math

import numpy as np
import pytest

from tridepth.camera import canonical_pose, generate_rays, pose_from_angles
from tridepth.scenes import Plane, SceneDescriptor, Sphere, cast, gt_depth_along_ray, make_scene, preset


def march_plane(o, d, z_plane, step=1e-4, far=4.0):
    """Fixed-step ray march until the ray crosses ``z = z_plane``; midpoint of the crossing step."""
    t = 0.0
    above = o[2] > z_plane
    while t < far:
        nxt = t + step
        if (o[2] + nxt * d[2] > z_plane) != above:
            return t + 0.5 * step
        t = nxt
    return math.inf


class TestGroundTruthDepth:
    def test_unit_sphere(self):
        desc = SceneDescriptor("custom", spheres=(Sphere((0, 0, 0), 1.0),))
        assert gt_depth_along_ray(desc, [0, 2, 0], [0, -1, 0]) == (1.0, True)

    def test_half_sphere(self):
        desc = SceneDescriptor("custom", spheres=(Sphere((0, 0, 0), 0.5),))
        assert gt_depth_along_ray(desc, [0, 2, 0], [0, -1, 0]) == (1.5, True)

    def test_miss_returns_far(self):
        desc = preset("sphere")
        assert gt_depth_along_ray(desc, [0, 2, 0], [0, 1, 0], far=3.5) == (3.5, False)

    def test_oblique_plane_vs_march(self):
        desc = preset("plane")
        o = np.array([0.1, 1.6, 0.4])
        d = np.array([-0.1, -0.8, -0.55])
        d /= np.linalg.norm(d)
        x, hit = gt_depth_along_ray(desc, o, d)
        assert hit
        assert x == pytest.approx((o[2] + 0.5) / -d[2], abs=1e-12)
        assert abs(x - march_plane(o, d, -0.5)) <= 1e-4

    def test_plane_clipped_to_cube(self):
        desc = preset("plane")
        down = np.array([0.0, -1.0, -1.0]) / math.sqrt(2)
        # meets z = -0.5 at y = 0.5, inside the cube
        assert gt_depth_along_ray(desc, [0, 1.5, 0.5], down) == (pytest.approx(math.sqrt(2)), True)
        # meets z = -0.5 at y = 2, outside it
        _, hit = gt_depth_along_ray(desc, [0, 3, 0], np.array([0, -2.0, -1.0]) / math.sqrt(5))
        assert not hit
        far_ray = np.array([0.0, 1.0, -0.01])
        _, hit = gt_depth_along_ray(desc, [0, 3, 0], far_ray / np.linalg.norm(far_ray))
        assert not hit

    def test_nearest_of_two(self):
        desc = preset("two_spheres")
        t, which, _ = cast(desc, np.array([[0.25, 2.0, -0.1]]), np.array([[0.0, -1.0, 0.0]]))
        assert which[0] == 1
        assert t[0] == pytest.approx(2.0 - (-0.3) - 0.45, abs=1e-12)


class TestMakeScene:
    def test_symmetric_sphere(self):
        sample = make_scene(preset("sphere"), canonical_pose(height=9, width=9))
        depth = sample.depth
        assert np.abs(depth - depth[::-1, :]).max() <= 1e-9
        assert np.abs(depth - depth[:, ::-1]).max() <= 1e-9
        assert np.abs(depth - depth.T).max() <= 1e-9
        assert sample.mask[4, 4] and not sample.mask[0, 0]

    def test_empty(self):
        sample = make_scene(preset("empty"), canonical_pose(height=6, width=6), far=3.5)
        assert not sample.mask.any()
        assert np.all(sample.depth == 3.5)
        np.testing.assert_array_equal(sample.color, np.ones((6, 6, 3)))

    def test_depth_range(self):
        sample = make_scene(preset("two_spheres"), pose_from_angles(1.3, 0.2), near=0.5, far=3.5)
        hits = sample.depth[sample.mask]
        assert hits.size and hits.min() >= 0.5 and hits.max() <= 3.5
        assert sample.depth[sample.mask].std() > 0

    def test_plane_closed_form(self):
        pose = pose_from_angles(math.pi / 2, 0.5, 2.0, height=16, width=16)
        sample = make_scene(preset("plane"), pose)
        o, d = generate_rays(pose)
        with np.errstate(divide="ignore"):
            closed = (o[..., 2] + 0.5) / -d[..., 2]
        np.testing.assert_allclose(sample.depth[sample.mask], closed[sample.mask], rtol=1e-12)
        # depth grows towards the top of the image on every column that hits the plane
        col = sample.depth[:, 8][sample.mask[:, 8]]
        assert np.all(np.diff(col) < 0)

    def test_reprojection_on_surface(self):
        desc = preset("two_spheres")
        pose = pose_from_angles(1.9, -0.2)
        sample = make_scene(desc, pose)
        o, d = generate_rays(pose)
        pts = (o + sample.depth[..., None] * d)[sample.mask]
        dist = np.min([np.abs(np.linalg.norm(pts - np.asarray(s.center), axis=-1) - s.radius)
                       for s in desc.spheres], axis=0)
        assert dist.max() <= 1e-9

    def test_deterministic(self):
        a = make_scene(preset("plane"), pose_from_angles(1.0, 0.3))
        b = make_scene(preset("plane"), pose_from_angles(1.0, 0.3))
        assert a.color.tobytes() == b.color.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_colours_in_range(self):
        sample = make_scene(preset("plane"), pose_from_angles(1.4, 0.4))
        assert sample.color.min() >= 0 and sample.color.max() <= 1


class TestDescriptor:
    def test_round_trip(self):
        desc = preset("two_spheres")
        assert SceneDescriptor.from_dict(desc.to_dict()) == desc

    def test_sphere_outside_cube(self):
        with pytest.raises(ValueError):
            SceneDescriptor("bad", spheres=(Sphere((0.8, 0, 0), 0.5),))

    def test_zero_normal(self):
        with pytest.raises(ValueError):
            SceneDescriptor("bad", planes=(Plane((0, 0, 0), 0.0),))

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            preset("teapot")
