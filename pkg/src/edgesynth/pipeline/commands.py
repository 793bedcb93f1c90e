"""Pipeline stages. Each command reads and writes files beside the manifest."""

import csv
import os
from contextlib import contextmanager

import numpy as np

from ..augment import ShapeAugmenter, derive_mask, replica_g0
from ..autograd.checkpoint import load_checkpoint
from ..edges import CannyParams, detect_edges
from ..exceptions import (
    ConfigError,
    EdgeSynthError,
    EmptyDatasetError,
    IoError,
    NumericalError,
    ShapeError,
    SplitError,
    ZeroClassError,
)
from ..gan import GanConfig, generator_from_state, synthesize
from ..gan import train as train_gan
from ..imaging import ImageBuffer, read_pnm, resize, tile, to_grayscale, write_pnm
from ..labels import class_weights, fuse
from ..metrics import BASELINE, Evaluator, MetricReport, compare_runs, overlay
from ..segmentation import SegConfig, net_from_state, predict, split_train_test
from ..segmentation import train as train_seg
from ..validation import check_fused, check_mask
from .manifest import DatasetManifest, SampleRecord, class_counts
from .toydata import ToySpec, generate

MANIFEST_NAME = "manifest.jsonl"
GAN_DIR = "gan"
GENERATOR_CKPT = "generator.ckpt"
RUNS_DIR = "runs"

# default training origins for the conventional run names
RUN_ORIGINS = {
    "initial": ("real",),
    "+replica(G0)": ("real", "g0"),
    "+shape(G1)": ("real", "g0", "g1"),
}
RUN_ORDER = tuple(RUN_ORIGINS)


# file helpers --------------------------------------------------------------

def _read(path):
    try:
        return read_pnm(path)
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err


def _write(image, path):
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_pnm(image, path)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def _write_rows(path, header, rows):
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def _write_text(path, text):
    try:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


@contextmanager
def sample_context(sample_id):
    """Prefix module errors with the sample they came from."""
    try:
        yield
    except NumericalError:
        raise
    except EdgeSynthError as err:
        raise type(err)(f"sample {sample_id}: {err}") from err


def _fit_label(label, size):
    arr = np.asarray(label)
    return arr if arr.shape == (size, size) else resize(arr, size, size, "nearest").plane()


def _fit_image(image, size):
    return image if (image.height, image.width) == (size, size) else resize(image, size, size, "bilinear")


# toygen / prepare / fuse ---------------------------------------------------

def toy_spec(cfg):
    return ToySpec(count=cfg["toy.count"], holdout=cfg["toy.holdout"], size=cfg["toy.size"],
                   min_fg=cfg["toy.min_fg"], max_fg=cfg["toy.max_fg"], radius_min=cfg["toy.radius_min"],
                   radius_max=cfg["toy.radius_max"], texture=cfg["toy.texture"], seed=cfg["seed"])


def cmd_toygen(cfg, out_dir):
    """Render toy image/mask pairs; the last ``toy.holdout`` are marked as test."""
    spec = toy_spec(cfg)
    manifest = DatasetManifest.new(os.path.join(out_dir, MANIFEST_NAME), spec.size, cfg["seed"])
    for i, (image, mask) in enumerate(generate(spec)):
        sid = f"toy{i:03d}"
        image_path = os.path.join(out_dir, "images", f"{sid}.ppm")
        mask_path = os.path.join(out_dir, "masks", f"{sid}.pgm")
        _write(image, image_path)
        _write(ImageBuffer(mask), mask_path)
        split = "test" if i >= spec.count else "train"
        manifest.records.append(SampleRecord(sid, manifest.relative(image_path), manifest.relative(mask_path),
                                             split=split))
    manifest.save()
    return manifest


def _raw_sources(raw_dir):
    """(id, image path, mask path, split or None) for every raw pair."""
    listed = os.path.join(raw_dir, MANIFEST_NAME)
    if os.path.exists(listed):
        raw = DatasetManifest.load(listed)
        return [(r.id, raw.resolve(r.image), raw.resolve(r.label), r.split) for r in raw.select(origins=("real",))]
    image_dir = os.path.join(raw_dir, "images")
    if not os.path.isdir(image_dir):
        raise EmptyDatasetError(f"{raw_dir} has neither {MANIFEST_NAME} nor an images/ directory")
    out = []
    for name in sorted(os.listdir(image_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".ppm", ".pgm"):
            continue
        mask = os.path.join(raw_dir, "masks", f"{stem}.pgm")
        if not os.path.exists(mask):
            raise IoError(f"no mask {mask} for raw image {name}")
        out.append((stem, os.path.join(image_dir, name), mask, None))
    return out


def cmd_prepare(cfg, raw_dir, out_dir):
    """Tile raw pairs into blocks, split, and report class pixel counts and weights.

    Splits come from the raw manifest when there is one; otherwise a shuffled
    split over the tiles is drawn.
    """
    block = cfg["prepare.block"]
    sources = _raw_sources(raw_dir)
    if not sources:
        raise EmptyDatasetError(f"no raw image/mask pairs in {raw_dir}")
    manifest = DatasetManifest.new(os.path.join(out_dir, MANIFEST_NAME), block, cfg["seed"])
    tile_dir = os.path.join(out_dir, "tiles")
    for sid, image_path, mask_path, split in sources:
        with sample_context(sid):
            image, mask = _read(image_path), _read(mask_path)
            check_mask(mask, f"mask {os.path.basename(mask_path)}")
            if (image.height, image.width) != (mask.height, mask.width):
                raise ShapeError(f"{os.path.basename(image_path)} and its mask differ in extent")
            image_grid = tile(image, block, os.path.basename(image_path))
            mask_grid = tile(mask, block, os.path.basename(mask_path))
        image_grid.source_id = mask_grid.source_id = sid
        for name, img_tile, mask_tile in zip(image_grid.names(), image_grid.tiles, mask_grid.tiles):
            suffix = ".pgm" if img_tile.channels == 1 else ".ppm"
            ip = os.path.join(tile_dir, name + suffix)
            mp = os.path.join(tile_dir, name + "_mask.pgm")
            _write(img_tile, ip)
            _write(mask_tile, mp)
            manifest.records.append(SampleRecord(name, manifest.relative(ip), manifest.relative(mp),
                                                 split=split or "train"))
    if all(s[3] is None for s in sources):
        _, test = split_train_test(manifest.records, cfg["split.test_fraction"], cfg["seed"])
        for r in test:
            r.split = "test"
    counts = class_counts(manifest, manifest.select("train"))
    try:
        weights = class_weights(counts)
    except ZeroClassError:
        # reported as undefined; segmentation training raises if it needs them
        weights = None
    shown = ["", ""] if weights is None else [f"{w:.6f}" for w in weights]
    _write_rows(os.path.join(out_dir, "class_weights.csv"), ["class", "pixels", "weight"],
                [["backgrd", int(counts[0]), shown[0]], ["ROI", int(counts[1]), shown[1]]])
    manifest.save()
    return manifest, counts, weights


def canny_params(cfg):
    return CannyParams(cfg["canny.sigma"], cfg["canny.high_quantile"], cfg["canny.low_ratio"])


def cmd_fuse(cfg, manifest):
    """Canny edges of every real sample fused with its mask into a 0/128/255 label."""
    params = canny_params(cfg)
    for r in manifest.select(origins=("real",)):
        with sample_context(r.id):
            gray = to_grayscale(_read(manifest.resolve(r.image)))
            mask = check_mask(_read(manifest.resolve(r.label)))
            fused = fuse(mask, detect_edges(gray, cfg["canny.method"], params))
        path = os.path.join(manifest.root, "fused", f"{r.id}.pgm")
        _write(ImageBuffer(fused), path)
        r.fused = manifest.relative(path)
    manifest.save()
    return manifest


# GAN -----------------------------------------------------------------------

def gan_config(cfg):
    iterations = cfg["gan.iterations"]
    return GanConfig(lambda_l1=cfg["gan.lambda_l1"], epochs=cfg["gan.epochs"], iterations=iterations or None,
                     batch_size=cfg["gan.batch_size"], lr=cfg["gan.lr"], beta1=cfg["gan.beta1"],
                     base_width=cfg["gan.base_width"], image_size=cfg["gan.image_size"], seed=cfg["seed"])


def _fused_train(manifest):
    records = manifest.select("train", ("real",))
    if not records:
        raise EmptyDatasetError("no real training samples in the manifest")
    missing = [r.id for r in records if r.fused is None]
    if missing:
        raise ConfigError(f"samples {missing[:3]} have no fused label; run fuse first")
    return records


def cmd_train_gan(cfg, manifest):
    """Train the label-to-image GAN on real training pairs and log its losses."""
    gcfg = gan_config(cfg)
    size = gcfg.image_size
    pairs = []
    for r in _fused_train(manifest):
        with sample_context(r.id):
            fused = check_fused(_read(manifest.resolve(r.fused)))
            pairs.append((_fit_label(fused, size), _fit_image(_read(manifest.resolve(r.image)), size)))
    out = os.path.join(manifest.root, GAN_DIR)
    os.makedirs(out, exist_ok=True)
    _, _, log = train_gan(pairs, gcfg, checkpoint_path=os.path.join(out, GENERATOR_CKPT))
    log.to_csv(os.path.join(out, "loss.csv"))
    log.smoothed_to_csv(os.path.join(out, "loss_smoothed.csv"), cfg["gan.smoothing_window"])
    return log


def cmd_synth(cfg, manifest, mode):
    """Add one synthetic training pair per real training sample.

    ``g0`` reuses the real fused labels; ``g1`` reshapes them first. Rerunning
    a mode replaces its earlier output.
    """
    if mode not in ("g0", "g1"):
        raise ConfigError(f"synth mode must be g0 or g1, got {mode!r}")
    ckpt = os.path.join(manifest.root, GAN_DIR, GENERATOR_CKPT)
    if not os.path.exists(ckpt):
        raise ConfigError(f"no generator checkpoint at {ckpt}; run train-gan first")
    generator = generator_from_state(load_checkpoint(ckpt))
    size = generator.image_size
    real = _fused_train(manifest)
    labels = [check_fused(_read(manifest.resolve(r.fused))) for r in real]
    if mode == "g0":
        labels = replica_g0(labels)
    else:
        block = labels[0].shape[0]
        labels = ShapeAugmenter(block, cfg["augment.upscale_max"], cfg["seed"]).fit().transform(labels)
    out_dir = os.path.join(manifest.root, "synth")
    records = []
    for r, label in zip(real, labels):
        image = synthesize(generator, [_fit_label(label, size)])[0]
        h, w = label.shape
        if (image.height, image.width) != (h, w):
            image = resize(image, w, h, "bilinear")
        sid = f"{mode}_{r.id}"
        paths = [os.path.join(out_dir, f"{sid}{suffix}") for suffix in (".ppm", "_mask.pgm", "_fused.pgm")]
        _write(image, paths[0])
        _write(ImageBuffer(derive_mask(label, cfg["augment.edge_to_roi"])), paths[1])
        _write(ImageBuffer(label), paths[2])
        records.append(SampleRecord(sid, *(manifest.relative(p) for p in paths), split="train", origin=mode))
    manifest.replace_origin(mode, records)
    manifest.save()
    return records


# segmentation and evaluation -----------------------------------------------

def seg_config(cfg):
    raw = cfg["seg.class_weights"]
    weights = None if raw.strip().lower() == "auto" else tuple(float(w) for w in raw.split(","))
    return SegConfig(input_size=cfg["seg.input_size"], depth=cfg["seg.depth"], base_width=cfg["seg.base_width"],
                     epochs=cfg["seg.epochs"], batch_size=cfg["seg.batch_size"], lr=cfg["seg.lr"],
                     beta1=cfg["seg.beta1"], class_weights=weights, seed=cfg["seed"])


def run_dir(manifest, run):
    if not run or os.sep in run or run in (".", ".."):
        raise ConfigError(f"invalid run name {run!r}")
    return os.path.join(manifest.root, RUNS_DIR, run)


def _require_test(manifest):
    test = manifest.select("test")
    if not test:
        raise SplitError("the manifest has no test split; run prepare with a test fraction")
    return test


def cmd_train_seg(cfg, manifest, run, origins=None):
    """Train the segmenter on the run's training origins (real plus synthetic)."""
    _require_test(manifest)
    origins = tuple(origins) if origins else RUN_ORIGINS.get(run, ("real", "g0", "g1"))
    records = manifest.select("train", origins)
    if not records:
        raise EmptyDatasetError(f"no training samples with origins {list(origins)}")
    scfg = seg_config(cfg)
    size = scfg.input_size
    data = []
    for r in records:
        with sample_context(r.id):
            mask = check_mask(_read(manifest.resolve(r.label)))
            data.append((_fit_image(_read(manifest.resolve(r.image)), size), _fit_label(mask, size)))
    out = run_dir(manifest, run)
    os.makedirs(out, exist_ok=True)
    _, losses = train_seg(data, scfg, checkpoint_path=os.path.join(out, "model.ckpt"))
    _write_rows(os.path.join(out, "loss.csv"), ["epoch", "loss"], [[i, repr(v)] for i, v in enumerate(losses)])
    _write_text(os.path.join(out, "train_set.txt"), "".join(f"{r.id}\n" for r in records))
    return losses


def cmd_eval(cfg, manifest, run):
    """Predict every real test sample, write masks and overlays, and score the run."""
    test = _require_test(manifest)
    out = run_dir(manifest, run)
    ckpt = os.path.join(out, "model.ckpt")
    if not os.path.exists(ckpt):
        raise ConfigError(f"no model for run {run!r}; run train-seg first")
    net = net_from_state(load_checkpoint(ckpt))
    evaluator = Evaluator(2, cfg["eval.bf_tolerance"] or None)
    for r in test:
        with sample_context(r.id):
            image = _read(manifest.resolve(r.image))
            gt = check_mask(_read(manifest.resolve(r.label)))
            pred = predict(net, _fit_image(image, net.input_size))
            if pred.shape != gt.shape:
                pred = resize(pred, gt.shape[1], gt.shape[0], "nearest").plane()
        _write(ImageBuffer(pred), os.path.join(out, f"pred_{r.id}.pgm"))
        _write(overlay(gt, pred), os.path.join(out, f"overlay_{r.id}.ppm"))
        evaluator.add((gt == 255).astype(np.int64), (pred == 255).astype(np.int64))
    report = evaluator.report()
    report.to_csv(os.path.join(out, "report.csv"))
    _write_text(os.path.join(out, "report.txt"), report.to_text())
    _write_rows(os.path.join(out, "confusion.csv"), ["gt\\pred", "backgrd", "ROI"],
                [[name] + [int(v) for v in row] for name, row in zip(("backgrd", "ROI"), report.confusion)])
    reports = stored_reports(manifest)
    if len(reports) >= 2 and BASELINE in reports:
        cmd_report(cfg, manifest)
    return report


def stored_reports(manifest):
    """Saved run reports, conventional run names first, then alphabetical."""
    root = os.path.join(manifest.root, RUNS_DIR)
    if not os.path.isdir(root):
        return {}
    names = [n for n in os.listdir(root) if os.path.exists(os.path.join(root, n, "report.csv"))]
    names.sort(key=lambda n: (RUN_ORDER.index(n) if n in RUN_ORDER else len(RUN_ORDER), n))
    return {n: MetricReport.from_csv(os.path.join(root, n, "report.csv")) for n in names}


def cmd_report(cfg, manifest):
    """Rebuild the run comparison table from the stored reports."""
    reports = stored_reports(manifest)
    table = compare_runs(reports, cfg["eval.architecture"])
    table.to_csv(os.path.join(manifest.root, "comparison.csv"))
    table.deltas_to_csv(os.path.join(manifest.root, "comparison_deltas.csv"))
    _write_text(os.path.join(manifest.root, "comparison.txt"), table.to_text())
    return table
