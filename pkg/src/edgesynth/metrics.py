"""Confusion-matrix metrics, boundary F1, error overlays and run comparison tables."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, LabelRangeError, ShapeError
from .imaging import ImageBuffer
from .validation import check_mask

CLASS_NAMES = ("backgrd", "ROI")
METRIC_COLUMNS = (("precision", "precision"), ("recall", "recall"), ("f1", "F1-score"), ("iou", "IoU"))
BASELINE = "initial"

WHITE = (255, 255, 255)
GREEN = (0, 255, 0)
MAGENTA = (255, 0, 255)
BLACK = (0, 0, 0)
PALETTE = {"tp": WHITE, "fp": GREEN, "fn": MAGENTA, "tn": BLACK}


def confusion(gt, pred, k=2):
    """K x K counts; entry (g, p) counts pixels of true class g predicted as p."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} and prediction {pred.shape} differ in extent")
    for name, arr in (("ground truth", gt), ("prediction", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise LabelRangeError(f"{name} class ids must lie in [0, {k})")
    flat = gt.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
    return np.bincount(flat, minlength=k * k).reshape(k, k)


def _ratio(num, den):
    # 0/0 -> 0
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


@dataclass
class MetricReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    iou: np.ndarray
    mean_iou: float
    bf_score: np.ndarray = None
    class_names: tuple = CLASS_NAMES
    confusion: np.ndarray = field(default=None, repr=False)

    def value(self, metric, k):
        return float(getattr(self, metric)[k])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "precision", "recall", "f1", "iou", "bf_score"])
            for k, name in enumerate(self.class_names):
                bf = "" if self.bf_score is None else repr(float(self.bf_score[k]))
                w.writerow([name] + [repr(self.value(m, k)) for m in ("precision", "recall", "f1", "iou")] + [bf])
            w.writerow(["mean", "", "", "", repr(float(self.mean_iou)), ""])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        per_class = [r for r in rows if r["class"] != "mean"]
        mean = next(r for r in rows if r["class"] == "mean")
        col = lambda key: np.array([float(r[key]) for r in per_class])
        bf = None if any(r["bf_score"] == "" for r in per_class) else col("bf_score")
        return cls(col("precision"), col("recall"), col("f1"), col("iou"), float(mean["iou"]), bf,
                   tuple(r["class"] for r in per_class))

    def to_text(self):
        lines = [f"{'class':<10}{'precision':>11}{'recall':>9}{'F1-score':>10}{'IoU':>8}{'BF':>8}"]
        for k, name in enumerate(self.class_names):
            bf = "" if self.bf_score is None else f"{self.bf_score[k]:.4f}"
            lines.append(f"{name:<10}{self.precision[k]:>11.4f}{self.recall[k]:>9.4f}{self.f1[k]:>10.4f}"
                         f"{self.iou[k]:>8.4f}{bf:>8}")
        lines.append(f"mean IoU {self.mean_iou:.4f}")
        return "\n".join(lines) + "\n"


def metrics(cm, bf=None, class_names=None):
    """Per-class precision, recall, F1 and IoU from a confusion matrix.

    Ratios with a zero denominator are reported as 0.
    """
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    iou = _ratio(tp, tp + fp + fn)
    names = tuple(class_names) if class_names else (CLASS_NAMES if k == 2 else tuple(str(i) for i in range(k)))
    return MetricReport(precision, recall, f1, iou, float(iou.sum() / k),
                        None if bf is None else np.asarray(bf, dtype=np.float64), names, cm)


def boundary(mask):
    """Pixels of ``mask`` that touch a non-mask pixel or the border (4-adjacency)."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return mask & ~interior


def default_tolerance(shape):
    """0.75% of the image diagonal, rounded up, at least one pixel."""
    return max(1, math.ceil(0.0075 * math.hypot(*shape)))


def _fraction_within(src, dst, theta):
    """Share of ``src`` pixels whose nearest ``dst`` pixel lies within ``theta``."""
    _, idx = ndimage.distance_transform_edt(~dst, return_indices=True)
    rows, cols = np.nonzero(src)
    dr = rows - idx[0][rows, cols]
    dc = cols - idx[1][rows, cols]
    return np.count_nonzero(dr * dr + dc * dc <= theta * theta) / rows.size


def bf_score(gt, pred, k=1, theta=None):
    """Boundary F1 for class ``k`` at distance tolerance ``theta`` pixels."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} and prediction {pred.shape} differ in extent")
    theta = default_tolerance(gt.shape) if theta is None else theta
    gb, pb = boundary(gt == k), boundary(pred == k)
    if not gb.any() and not pb.any():
        return 1.0
    if not gb.any() or not pb.any():
        return 0.0
    p = _fraction_within(pb, gb, theta)
    r = _fraction_within(gb, pb, theta)
    return 2 * p * r / (p + r) if p + r else 0.0


def overlay(gt, pred):
    """Color each pixel by outcome: TP white, FP green, FN magenta, TN black."""
    gt, pred = check_mask(gt, "ground truth") == 255, check_mask(pred, "prediction") == 255
    if gt.shape != pred.shape:
        raise ShapeError(f"ground truth {gt.shape} and prediction {pred.shape} differ in extent")
    out = np.zeros(gt.shape + (3,), dtype=np.uint8)
    out[gt & pred] = WHITE
    out[~gt & pred] = GREEN
    out[gt & ~pred] = MAGENTA
    return ImageBuffer(out)


class Evaluator:
    """Accumulate confusion counts and boundary scores over many mask pairs."""

    def __init__(self, k=2, theta=None):
        self.k, self.theta = k, theta
        self.cm = np.zeros((k, k), dtype=np.int64)
        self._bf = []

    def add(self, gt_classes, pred_classes):
        self.cm += confusion(gt_classes, pred_classes, self.k)
        self._bf.append([bf_score(gt_classes, pred_classes, c, self.theta) for c in range(self.k)])
        return self

    def report(self):
        bf = np.mean(self._bf, axis=0) if self._bf else None
        return metrics(self.cm, bf)


# run comparison ------------------------------------------------------------

def comparison_columns(class_names=CLASS_NAMES):
    """Comparison header: metric groups with ROI before background."""
    order = list(reversed(class_names))
    cols = ["architecture", "augmented dataset"]
    for _, label in METRIC_COLUMNS:
        cols += [f"{label} {name}" for name in order]
    return cols + ["mean IoU"]


def _row_values(report):
    order = list(reversed(range(len(report.class_names))))
    vals = []
    for attr, _ in METRIC_COLUMNS:
        vals += [report.value(attr, k) for k in order]
    return vals + [float(report.mean_iou)]


@dataclass
class ComparisonTable:
    columns: list
    rows: list
    deltas: list

    def _write(self, path, rows, value_format):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for arch, run, vals in rows:
                w.writerow([arch, run] + [value_format(v) for v in vals])

    def to_csv(self, path):
        self._write(path, self.rows, lambda v: f"{v:.6f}")

    def deltas_to_csv(self, path):
        self._write(path, self.deltas, lambda v: f"{v:+.6f}")

    def to_text(self):
        widths = [max(len(c), 12) for c in self.columns]
        lines = ["  ".join(c.rjust(w) for c, w in zip(self.columns, widths))]
        for arch, run, vals in self.rows:
            cells = [arch, run] + [f"{v:.4f}" for v in vals]
            lines.append("  ".join(c.rjust(w) for c, w in zip(cells, widths)))
        return "\n".join(lines) + "\n"


def compare_runs(reports, architecture="toy-unet"):
    """Table of named runs plus per-column differences from the ``initial`` run.

    ``reports`` maps run names to :class:`MetricReport`, or is a list of
    ``(architecture, run_name, report)`` triples.
    """
    if isinstance(reports, dict):
        entries = [(architecture, name, rep) for name, rep in reports.items()]
    else:
        entries = list(reports)
    if len(entries) < 2:
        raise ConfigError("compare_runs needs at least two reports")
    names = entries[0][2].class_names
    rows = [(arch, run, _row_values(rep)) for arch, run, rep in entries]
    baselines = {arch: vals for arch, run, vals in rows if run == BASELINE}
    deltas = []
    for arch, run, vals in rows:
        if arch not in baselines:
            raise ConfigError(f"no '{BASELINE}' run for architecture {arch!r}")
        deltas.append((arch, run, [v - b for v, b in zip(vals, baselines[arch])]))
    return ComparisonTable(comparison_columns(names), rows, deltas)
