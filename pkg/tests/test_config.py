import json

import pytest

from tridepth.config import FitConfig, load_config
from tridepth.scenes import preset


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.image_size == 32 and cfg.n_samples == 32
        assert cfg.schedule.num_iter == 4000 and cfg.schedule.tau == 0.4
        assert cfg.kernel.s1 == 1.25 and cfg.kernel.c_min == 0.05
        assert cfg.weights.depth == 2.0
        assert cfg.scene == preset("sphere")

    def test_round_trip(self):
        cfg = FitConfig.from_dict({"scene": "two_spheres", "seed": 3, "schedule": {"num_iter": 10}})
        again = FitConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg

    def test_nested_merge(self):
        cfg = FitConfig.from_dict({"kernel": {"s2": 0.05}, "weights": {"tv": 0.0}})
        assert cfg.kernel.s2 == 0.05 and cfg.kernel.s1 == 1.25
        assert cfg.weights.tv == 0.0 and cfg.weights.depth == 2.0

    def test_scene_forms(self):
        assert FitConfig.from_dict({"scene": {"kind": "plane"}}).scene == preset("plane")
        custom = {"kind": "mine", "spheres": [{"center": [0, 0, 0], "radius": 0.3}]}
        assert FitConfig.from_dict({"scene": custom}).scene.spheres[0].radius == 0.3

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="colour"):
            FitConfig.from_dict({"colour": 1})

    def test_stride_must_divide(self):
        with pytest.raises(ValueError):
            FitConfig(image_size=30, canonical_stride=4)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("")
        assert load_config(path) == FitConfig()

    def test_render_options(self):
        opts = FitConfig().render_options(sigma_scale=1.5, kernel_enabled=True)
        assert opts.sigma_scale == 1.5 and opts.kernel_enabled
        assert opts.background == (1.0, 1.0, 1.0)
