import math

import numpy as np
import pytest
import torch

from tridepth import fit as fit_module
from tridepth import io
from tridepth.config import FitConfig
from tridepth.fit import REPORT_COLUMNS, FitError, evaluate, fit_scene, init_field, load_fit
from tridepth.schedule import draw_u, novel_probability


class TestFitScene:
    def test_zero_iterations_keep_initialisation(self, tiny_config, tmp_path):
        tiny_config["schedule"]["num_iter"] = 0
        cfg = FitConfig.from_dict(tiny_config)
        result = fit_scene(cfg, tmp_path)
        pyr, dec, header = io.load_checkpoint(result.checkpoint)
        fresh = init_field(cfg)
        assert pyr.base.tobytes() == fresh.base.detach().numpy().tobytes()
        for name, arr in dec.arrays().items():
            assert arr.tobytes() == fresh.dec[name].detach().numpy().tobytes()
        assert header["iteration"] == 0
        assert len(result.rows) == 1 and result.rows[0][0] == 0

    def test_outputs(self, tiny_config, tmp_path):
        result = fit_scene(FitConfig.from_dict(tiny_config), tmp_path)
        for name in ("checkpoint.bin", "report.csv", "canonical.png", "canonical_depth.pfm"):
            assert (tmp_path / name).exists()
        assert sorted(p.name for p in (tmp_path / "renders").iterdir())[:2] == ["iter_0000005.pfm",
                                                                                "iter_0000005.png"]
        rows = io.read_csv(result.report)
        assert list(rows[0]) == REPORT_COLUMNS
        assert [int(r["iteration"]) for r in rows] == [5, 10, 12]

    def test_deterministic(self, tiny_config, tmp_path):
        cfg = FitConfig.from_dict(tiny_config)
        a, b = fit_scene(cfg, tmp_path / "a"), fit_scene(cfg, tmp_path / "b")
        assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
        assert a.report.read_bytes() == b.report.read_bytes()
        assert (tmp_path / "a" / "canonical.png").read_bytes() == (tmp_path / "b" / "canonical.png").read_bytes()

    def test_seed_changes_result(self, tiny_config, tmp_path):
        a = fit_scene(FitConfig.from_dict(tiny_config), tmp_path / "a")
        b = fit_scene(FitConfig.from_dict({**tiny_config, "seed": 1}), tmp_path / "b")
        assert a.checkpoint.read_bytes() != b.checkpoint.read_bytes()

    def test_parameters_move(self, tiny_config):
        cfg = FitConfig.from_dict(tiny_config)
        result = fit_scene(cfg)
        fresh = init_field(cfg)
        assert not torch.equal(result.field.base, fresh.base)

    def test_report_shapes(self, tiny_config):
        tiny_config["schedule"] = {"num_iter": 40, "lr_warmup_frac": 0.25, "clip_warmup_frac": 0.5}
        tiny_config["report_every"] = 4
        result = fit_scene(FitConfig.from_dict(tiny_config))
        cols = {name: [row[i] for row in result.rows] for i, name in enumerate(REPORT_COLUMNS)}
        assert all(b > a for a, b in zip(cols["iteration"], cols["iteration"][1:]))
        assert all(b >= a for a, b in zip(cols["clip_weight"], cols["clip_weight"][1:]))
        lr = np.array(cols["lr"])
        peak = int(lr.argmax())
        assert 0 < peak < len(lr) - 1
        assert np.all(np.diff(lr[: peak + 1]) > 0) and np.all(np.diff(lr[peak:]) < 0)
        assert cols["n_canon"][-1] + cols["n_novel"][-1] == 40

    def test_view_counts_follow_rule(self, tiny_config):
        # replay the sequence of u draws the loop consumes; only the view kinds matter
        n = 2000
        rng = np.random.default_rng(0)
        p = np.array([novel_probability(it, n, 0.4) for it in range(n)])
        novel = sum(draw_u(rng) <= q for q in p)
        sd = math.sqrt((p * (1 - p)).sum())
        assert abs(novel - p.sum()) <= 3 * sd

    def test_non_finite_loss_aborts(self, tiny_config, monkeypatch):
        monkeypatch.setattr(fit_module, "loss_recon", lambda pred, gt: torch.tensor(math.nan, dtype=torch.float64))
        with pytest.raises(FitError, match="iteration 0.*recon"):
            fit_scene(FitConfig.from_dict(tiny_config))

    def test_load_fit_round_trip(self, tiny_config, tmp_path):
        cfg = FitConfig.from_dict(tiny_config)
        result = fit_scene(cfg, tmp_path)
        fld, cfg2, header = load_fit(result.checkpoint)
        assert cfg2 == cfg
        metrics = evaluate(fld, cfg2)
        final = dict(zip(REPORT_COLUMNS, result.rows[-1]))
        for key, value in metrics.items():
            assert value == pytest.approx(final[key], abs=1e-9)

    def test_load_fit_needs_config(self, tmp_path):
        fld = init_field(FitConfig.from_dict({"base_resolution": 8, "channels": 2}))
        io.save_checkpoint(tmp_path / "c.bin", fld.pyramid(), fld.decoder_params(), 0)
        with pytest.raises(io.CheckpointError):
            load_fit(tmp_path / "c.bin")


def test_sigma_scaling_raises_opacity(tiny_config):
    from tridepth.engine import render_image

    cfg = FitConfig.from_dict(tiny_config)
    fld = fit_scene(cfg).field
    pose = cfg.pose(math.pi / 2, 0.0)
    ones = render_image(fld, pose, cfg.render_options(1.0), cfg.near, cfg.far, cfg.n_samples)
    twos = render_image(fld, pose, cfg.render_options(2.0), cfg.near, cfg.far, cfg.n_samples)
    assert twos["opacity"].mean() > ones["opacity"].mean()
