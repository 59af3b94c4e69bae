import json
import math

import numpy as np
import pytest

from internerf.cli import main
from internerf.config import SEED_ENV, build_config, dump_config, load_config, parse_lines
from internerf.dataset import Dataset, camera_to_dict, load_dataset, save_dataset, split_indices
from internerf.errors import ConfigurationError, ContractError, ParseError, StoreError
from internerf.interp import build_param_grid
from internerf.metrics import psnr, ssim
from internerf.render import Camera
from internerf.scenes import Primitive, SyntheticScene, make_synthetic_scene, oracle_render


def small_cam(origin=(0.0, 0.0, 0.0), size=9):
    f = 0.5 * size / math.tan(math.radians(30))
    return Camera(np.array(origin), np.eye(3), f, f, size / 2, size / 2, size, size)


class TestScenes:
    def test_single_room_footprint(self):
        scene, cams = make_synthetic_scene("single-room", 0)
        (lo, hi), = scene.rooms
        xy = np.array([c.origin[:2] for c in cams])
        assert np.all((xy > lo) & (xy < hi))

    def test_two_rooms_activate_two_cells(self):
        _, cams = make_synthetic_scene("two-rooms", 3)
        grid = build_param_grid(np.array([c.origin for c in cams]), 2, 1, min_cameras=5)
        assert grid.active_cells == (0, 1)

    def test_deterministic(self):
        s1, c1 = make_synthetic_scene("four-rooms", 5, views=8)
        s2, c2 = make_synthetic_scene("four-rooms", 5, views=8)
        assert all(np.array_equal(a.origin, b.origin) and np.array_equal(a.rotation, b.rotation) for a, b in zip(c1, c2))
        x = np.random.default_rng(0).uniform(-1, 1, size=(500, 3))
        assert np.array_equal(s1.density(x), s2.density(x))

    def test_unknown_preset(self):
        with pytest.raises(ContractError):
            make_synthetic_scene("castle", 0)


class TestOracle:
    def test_empty_scene_black(self):
        img = oracle_render(SyntheticScene([]), small_cam())
        np.testing.assert_array_equal(img, 0)

    def test_constant_box(self):
        c = np.array([0.3, 0.6, 0.9])
        tau = 0.7
        box = Primitive("box", np.full(3, -1.0), np.full(3, 1.0), tau, c, c)
        img = oracle_render(SyntheticScene([box]), small_cam((0.1, -0.2, 0.0)))
        # center pixel looks straight along +z from z=0 to the box face at z=1
        np.testing.assert_allclose(img[4, 4], (1 - math.exp(-tau * 1.0)) * c, atol=1e-3)

    def test_quadrature_convergence(self):
        scene, cams = make_synthetic_scene("single-room", 0, views=2, width=12, height=12)
        h = 2.0 / 256
        a = oracle_render(scene, cams[0], h)
        b = oracle_render(scene, cams[0], h / 2)
        base = np.broadcast_to(b.reshape(-1, 3).mean(0), b.shape)
        assert abs(psnr(a, base) - psnr(b, base)) < 0.5


class TestMetrics:
    def test_identical(self, rng):
        x = rng.uniform(size=(4, 4, 3))
        assert psnr(x, x) == 99.0
        assert ssim(x, x) == pytest.approx(1.0)

    def test_values(self):
        a = np.zeros((4, 4, 3))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
        assert psnr(a, a + 1.0) == pytest.approx(0.0)

    def test_symmetry_and_shift(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        assert psnr(a, b) == psnr(b, a)
        assert psnr(a, a * 0.95 + 0.1) < psnr(a, a * 0.95)

    def test_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestDataset:
    def test_split(self):
        train, test = split_indices(16)
        assert list(test) == [0, 8] and len(train) == 14
        assert sorted(np.concatenate([train, test])) == list(range(16))

    def test_round_trip(self, tmp_path, rng):
        _, cams = make_synthetic_scene("single-room", 1, views=3, width=5, height=4)
        imgs = rng.uniform(size=(3, 4, 5, 3))
        save_dataset(tmp_path, cams, imgs)
        ds = load_dataset(tmp_path / "manifest.json")
        for a, b in zip(cams, ds.cameras):
            assert camera_to_dict(a) == camera_to_dict(b)
        assert np.abs(ds.images - imgs).max() <= 0.5 / 255 + 1e-6

    def test_missing_image(self, tmp_path, rng):
        _, cams = make_synthetic_scene("single-room", 1, views=2, width=4, height=4)
        save_dataset(tmp_path, cams, rng.uniform(size=(2, 4, 4, 3)))
        victim = json.loads((tmp_path / "manifest.json").read_text())["images"][1]["path"]
        (tmp_path / victim).unlink()
        with pytest.raises(StoreError, match=victim):
            load_dataset(tmp_path)

    def test_bad_camera_field(self, tmp_path, rng):
        _, cams = make_synthetic_scene("single-room", 1, views=1, width=4, height=4)
        save_dataset(tmp_path, cams, rng.uniform(size=(1, 4, 4, 3)))
        m = json.loads((tmp_path / "manifest.json").read_text())
        m["images"][0]["fx"] = "wide"
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        with pytest.raises(ParseError, match="fx"):
            load_dataset(tmp_path)

    def test_empty_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"images": []}))
        with pytest.raises(ConfigurationError):
            load_dataset(tmp_path)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg, model = build_config(parse_lines(["total_steps = 500", "final.levels = 4", "p_r = 0.2"]), env={})
        assert cfg.total_steps == 500 and cfg.p_r == 0.2 and model.final.grid.levels == 4
        path = tmp_path / "c.txt"
        path.write_text(dump_config(cfg, model))
        cfg2, model2 = load_config(path, env={})
        assert cfg2 == cfg and model2 == model

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="banana"):
            build_config(parse_lines(["banana = 3"]), env={})
        with pytest.raises(ConfigurationError):
            build_config(parse_lines(["final.colour = 3"]), env={})

    def test_syntax(self):
        with pytest.raises(ParseError):
            parse_lines(["total_steps 10"])
        with pytest.raises(ParseError):
            build_config(parse_lines(["total_steps = ten"]), env={})

    def test_seed_env(self):
        cfg, _ = build_config(parse_lines(["seed = 3"]), env={SEED_ENV: "11"})
        assert cfg.seed == 11

    def test_shared_table_size(self):
        _, model = build_config(parse_lines(["table_size = 1024"]), env={})
        assert {n.grid.table_size for n in model.networks} == {1024}


def test_cli_end_to_end(tmp_path, capsys):
    scene = tmp_path / "scene"
    assert main(["make-scene", "--preset", "two-rooms", "--seed", "0", "--out", str(scene),
                 "--views", "16", "--width", "6", "--height", "6"]) == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text("total_steps = 6\nwarmup_steps = 2\nbatch_size = 32\nsamples = 4, 4, 4\n"
                   "table_size = 256\nfinal.levels = 2\nfinal.base_resolution = 4\nfinal.finest_resolution = 16\n")
    out = tmp_path / "ckpt"
    assert main(["train", "--scene", str(scene), "--config", str(cfg), "--out", str(out), "--grid", "2x1"]) == 0
    assert (out / "vertex_0_0.bin").exists() and (out / "vertex_2_1.opt").exists()
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,cell,loss,photometric,reg,unity,proposal,lr"
    png = tmp_path / "view.png"
    assert main(["render", "--ckpt", str(out), "--camera", "3", "--out", str(png)]) == 0
    assert png.exists()
    report = tmp_path / "report.csv"
    assert main(["eval", "--ckpt", str(out), "--scene", str(scene), "--split", "test", "--report", str(report)]) == 0
    rows = report.read_text().splitlines()
    assert rows[0] == "image,psnr,ssim" and len(rows) == 3
    assert main(["train", "--scene", str(scene), "--config", str(tmp_path / "nope.cfg"), "--out", str(out)]) == 2
