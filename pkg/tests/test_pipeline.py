import filecmp
import json
import os

import numpy as np
import pytest

from edgesynth import cli
from edgesynth.exceptions import (
    ConfigError,
    EmptyDatasetError,
    NonDivisibleError,
    NumericalError,
    ShapeError,
    SplitError,
)
from edgesynth.imaging import ImageBuffer, read_pnm, write_pnm
from edgesynth.pipeline import commands
from edgesynth.pipeline.config import DEFAULTS, PipelineConfig
from edgesynth.pipeline.manifest import DatasetManifest, SampleRecord
from edgesynth.pipeline.toydata import ToySpec, generate, render_sample

FAST = {
    "toy.count": 4,
    "toy.holdout": 2,
    "gan.iterations": 2,
    "gan.base_width": 2,
    "seg.epochs": 1,
    "seg.base_width": 2,
}


def fast_cfg(**extra):
    values = dict(FAST)
    values.update(extra)
    return PipelineConfig(values)


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(tree_equal(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


@pytest.fixture
def prepared(tmp_path):
    cfg = fast_cfg()
    commands.cmd_toygen(cfg, tmp_path / "raw")
    manifest, _, _ = commands.cmd_prepare(cfg, tmp_path / "raw", tmp_path / "work")
    return cfg, manifest


class TestConfig:
    def test_defaults_and_parse(self):
        cfg = PipelineConfig.parse("# comment\nseed = 9\ngan.lr = 0.001  # inline\naugment.edge_to_roi = yes\n")
        assert cfg["seed"] == 9 and cfg["gan.lr"] == 0.001 and cfg["augment.edge_to_roi"] is True
        assert cfg["seg.epochs"] == DEFAULTS["seg.epochs"]

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            PipelineConfig.parse("gan.lamda_l1 = 10\n")
        with pytest.raises(ConfigError):
            PipelineConfig()["nope"]

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            PipelineConfig({"seed": "seven"})
        with pytest.raises(ConfigError):
            PipelineConfig.parse("seed 7\n")

    def test_dump_round_trip(self):
        cfg = PipelineConfig({"seed": 3, "augment.edge_to_roi": True})
        assert PipelineConfig.parse(cfg.dump()).as_dict() == cfg.as_dict()


class TestToyData:
    def test_mask_matches_rendering(self):
        spec = ToySpec(count=3, seed=2)
        for image, mask in generate(spec):
            px = image.pixels.astype(int)
            fg = mask == 255
            # nuclei are dark and blue-leaning; background is bright and red-leaning
            assert (px[fg][:, 0] < px[fg][:, 2]).all()
            assert (px[~fg][:, 0] > px[~fg][:, 2]).all()
            assert 0.1 <= fg.mean() <= 0.5

    def test_per_index_streams(self):
        a = generate(ToySpec(count=3, seed=5))
        b = render_sample(np.random.default_rng([5, 1]), ToySpec(count=3, seed=5))
        assert a[1][0] == b[0]

    def test_toygen_is_byte_identical(self, tmp_path):
        cfg = PipelineConfig({"toy.count": 12, "seed": 7})
        commands.cmd_toygen(cfg, tmp_path / "a")
        commands.cmd_toygen(cfg, tmp_path / "b")
        assert tree_equal(tmp_path / "a", tmp_path / "b")
        m = DatasetManifest.load(tmp_path / "a" / "manifest.jsonl")
        assert len(m.select("train")) == 12 and len(m.select("test")) == 4
        assert m.audit()


class TestManifest:
    def test_round_trip_and_meta(self, prepared):
        _, manifest = prepared
        again = DatasetManifest.load(manifest.path)
        assert again.records == manifest.records
        assert again.meta["block_size"] == 64 and "created_by_version" in again.meta
        first = open(manifest.path).readline()
        assert "_meta" in json.loads(first)

    def test_rejects_duplicates_and_synthetic_tests(self, tmp_path):
        m = DatasetManifest.new(tmp_path / "m.jsonl", 4, 0)
        m.records = [SampleRecord("a", "x", "y"), SampleRecord("a", "x", "y")]
        with pytest.raises(ConfigError):
            m.save()
        m.records = [SampleRecord("a", "x", "y", split="test", origin="g0")]
        with pytest.raises(ConfigError):
            m.check()
        with pytest.raises(ConfigError):
            SampleRecord("a", "x", "y", origin="g7")

    def test_audit_catches_missing_file(self, prepared):
        _, manifest = prepared
        os.remove(manifest.resolve(manifest.records[0].label))
        with pytest.raises(OSError):
            manifest.audit()


class TestPrepare:
    def test_splits_inherited_from_raw_manifest(self, prepared):
        _, manifest = prepared
        assert len(manifest.select("train")) == 4 and len(manifest.select("test")) == 2
        assert os.path.exists(os.path.join(manifest.root, "class_weights.csv"))

    def test_empty_raw_dir(self, tmp_path):
        (tmp_path / "raw" / "images").mkdir(parents=True)
        with pytest.raises(EmptyDatasetError):
            commands.cmd_prepare(PipelineConfig(), tmp_path / "raw", tmp_path / "out")

    def test_non_divisible_names_file(self, tmp_path):
        raw = tmp_path / "raw"
        (raw / "images").mkdir(parents=True)
        (raw / "masks").mkdir()
        write_pnm(ImageBuffer(np.zeros((10, 10, 3), np.uint8)), raw / "images" / "slideA.ppm")
        write_pnm(ImageBuffer(np.zeros((10, 10), np.uint8)), raw / "masks" / "slideA.pgm")
        with pytest.raises(NonDivisibleError, match="slideA"):
            commands.cmd_prepare(PipelineConfig({"prepare.block": 4}), raw, tmp_path / "out")

    def test_extent_mismatch(self, tmp_path):
        raw = tmp_path / "raw"
        (raw / "images").mkdir(parents=True)
        (raw / "masks").mkdir()
        write_pnm(ImageBuffer(np.zeros((8, 8, 3), np.uint8)), raw / "images" / "s.ppm")
        write_pnm(ImageBuffer(np.zeros((8, 4), np.uint8)), raw / "masks" / "s.pgm")
        with pytest.raises(ShapeError):
            commands.cmd_prepare(PipelineConfig({"prepare.block": 4}), raw, tmp_path / "out")


class TestFuse:
    def test_values_and_idempotence(self, prepared):
        cfg, manifest = prepared
        commands.cmd_fuse(cfg, manifest)
        first = {r.id: open(manifest.resolve(r.fused), "rb").read() for r in manifest.records}
        for blob in first.values():
            assert set(np.unique(read_pnm_bytes(blob))) <= {0, 128, 255}
        commands.cmd_fuse(cfg, DatasetManifest.load(manifest.path))
        again = {r.id: open(manifest.resolve(r.fused), "rb").read() for r in manifest.records}
        assert first == again

    def test_constant_image_has_no_edges(self, tmp_path):
        raw = tmp_path / "raw"
        (raw / "images").mkdir(parents=True)
        (raw / "masks").mkdir()
        mask = np.zeros((8, 8), np.uint8)
        mask[2:5, 3:7] = 255
        write_pnm(ImageBuffer(np.full((8, 8, 3), 90, np.uint8)), raw / "images" / "flat.ppm")
        write_pnm(ImageBuffer(mask), raw / "masks" / "flat.pgm")
        cfg = PipelineConfig({"prepare.block": 8, "split.test_fraction": 0.5})
        m, _, _ = commands.cmd_prepare(cfg, raw, tmp_path / "out")
        commands.cmd_fuse(cfg, m)
        fused = read_pnm(m.resolve(m.records[0].fused)).plane()
        np.testing.assert_array_equal(fused, np.where(mask == 255, 128, 0))


def read_pnm_bytes(blob):
    from edgesynth.imaging import decode_pnm

    return decode_pnm(blob).pixels


class TestSynthesisAndTraining:
    def test_cardinalities_and_outputs(self, prepared):
        cfg, manifest = prepared
        commands.cmd_fuse(cfg, manifest)
        log = commands.cmd_train_gan(cfg, manifest)
        assert len(log) == 2
        gan_dir = os.path.join(manifest.root, "gan")
        assert {"loss.csv", "loss_smoothed.csv", "generator.ckpt"} <= set(os.listdir(gan_dir))
        commands.cmd_synth(cfg, manifest, "g0")
        assert len(manifest.select("train")) == 8 and len(manifest.select("test")) == 2
        commands.cmd_synth(cfg, manifest, "g0")  # rerun replaces instead of growing
        assert len(manifest.select("train")) == 8
        commands.cmd_synth(cfg, manifest, "g1")
        assert len(manifest.select("train")) == 12 and len(manifest.select("test")) == 2
        assert DatasetManifest.load(manifest.path).audit()

        commands.cmd_train_seg(cfg, manifest, "initial")
        commands.cmd_eval(cfg, manifest, "initial")
        run = os.path.join(manifest.root, "runs", "initial")
        assert len([f for f in os.listdir(run) if f.startswith("overlay_")]) == 2
        assert len([f for f in os.listdir(run) if f.startswith("pred_")]) == 2
        assert not os.path.exists(os.path.join(manifest.root, "comparison.csv"))
        commands.cmd_train_seg(cfg, manifest, "+shape(G1)")
        commands.cmd_eval(cfg, manifest, "+shape(G1)")
        assert open(os.path.join(run, "train_set.txt")).read().count("\n") == 4
        rows = open(os.path.join(manifest.root, "comparison.csv")).read().splitlines()
        assert len(rows) == 3

    def test_synth_needs_generator(self, prepared):
        cfg, manifest = prepared
        commands.cmd_fuse(cfg, manifest)
        with pytest.raises(ConfigError):
            commands.cmd_synth(cfg, manifest, "g0")

    def test_missing_test_split(self, prepared):
        cfg, manifest = prepared
        for r in manifest.records:
            r.split = "train"
        with pytest.raises(SplitError):
            commands.cmd_train_seg(cfg, manifest, "initial")

    def test_report_without_baseline(self, prepared):
        cfg, manifest = prepared
        with pytest.raises(ConfigError):
            commands.cmd_report(cfg, manifest)


class TestCli:
    def test_exit_codes(self, tmp_path, capsys, monkeypatch):
        out = str(tmp_path / "raw")
        assert cli.main(["toygen", "--out", out, "--set", "toy.count=2", "--set", "toy.holdout=1"]) == 0
        assert "wrote 3 toy samples" in capsys.readouterr().out
        assert cli.main(["toygen", "--out", out, "--set", "toy.cuont=2"]) == 1
        assert cli.main(["fuse", "--manifest", str(tmp_path / "missing.jsonl")]) == 1
        assert cli.main(["synth", "--out", out]) == 1

        def diverge(cfg, manifest):
            raise NumericalError("loss is NaN", iteration=17)

        monkeypatch.setattr(commands, "cmd_train_gan", diverge)
        assert cli.main(["train-gan", "--out", out]) == 2
        assert "iteration 17" in capsys.readouterr().err

    def test_config_file_and_seed_override(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("seed = 1\ntoy.count = 2\ntoy.holdout = 0\n")
        args = cli.build_parser().parse_args(["toygen", "--config", str(conf), "--seed", "5", "--out", "x"])
        cfg = cli.load_config(args)
        assert cfg["seed"] == 5 and cfg["toy.count"] == 2
