"""Edge-fused 3-class labels, median-frequency class weights, class encodings."""

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import LabelRangeError, ShapeError, ZeroClassError
from .validation import FUSED_VALUES, MASK_VALUES, as_plane, check_fused, check_label, check_mask

BACKGROUND, ROI, EDGE = 0, 128, 255

_ENCODINGS = {"mask": MASK_VALUES, "fused": FUSED_VALUES}


def fuse(mask, edges):
    """Combine a 0/255 ROI mask and a 0/255 edge map into a 0/128/255 label.

    Edges win over ROI: edge -> 255, else ROI -> 128, else 0.
    """
    mask = check_mask(mask)
    edges = check_label(edges, MASK_VALUES, "edge map")
    if mask.shape != edges.shape:
        raise ShapeError(f"mask {mask.shape} and edge map {edges.shape} differ in extent")
    out = np.where(mask == 255, ROI, BACKGROUND).astype(np.uint8)
    out[edges == 255] = EDGE
    return out


def class_weights(pixel_counts):
    """Median-frequency weights: ``median(counts) / count_k`` per class."""
    counts = np.asarray(pixel_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("pixel_counts must be a non-empty 1-d sequence")
    if (counts <= 0).any():
        zero = np.flatnonzero(counts <= 0).tolist()
        raise ZeroClassError(f"classes {zero} have no pixels; their weight is undefined")
    return np.median(counts) / counts


def encode_classes(label, kind="mask"):
    """Map label pixel values to class ids (mask: 0/255 -> 0/1; fused: 0/128/255 -> 0/1/2)."""
    values = _ENCODINGS[kind]
    arr = as_plane(label, f"{kind} label")
    lut = np.full(256, -1, dtype=np.int16)
    lut[list(values)] = np.arange(len(values))
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise LabelRangeError(f"{kind} label has values outside 0..255")
        arr = arr.astype(np.uint8)
    out = lut[arr]
    if (out < 0).any():
        bad = sorted(np.unique(arr[out < 0]).tolist())[:5]
        raise LabelRangeError(f"{kind} label contains unexpected values {bad}")
    return out.astype(np.int64)


def decode_classes(classes, kind="mask"):
    values = np.asarray(_ENCODINGS[kind], dtype=np.uint8)
    classes = np.asarray(classes)
    if classes.size and (classes.min() < 0 or classes.max() >= len(values)):
        raise LabelRangeError(f"class ids must lie in [0, {len(values)})")
    return values[classes]


def count_pixels(class_maps, n_classes=2):
    counts = np.zeros(n_classes, dtype=np.int64)
    for cm in class_maps:
        cm = np.asarray(cm)
        if cm.size and (cm.min() < 0 or cm.max() >= n_classes):
            raise LabelRangeError(f"class ids must lie in [0, {n_classes})")
        counts += np.bincount(cm.ravel(), minlength=n_classes)
    return counts


class MedianFrequencyWeights(BaseEstimator):
    """Learn median-frequency class weights from 0/255 masks."""

    def __init__(self, n_classes=2):
        self.n_classes = n_classes

    def fit(self, masks, y=None):
        self.pixel_counts_ = count_pixels((encode_classes(m, "mask") for m in masks), self.n_classes)
        self.weights_ = class_weights(self.pixel_counts_)
        return self


def validate_fused(label):
    return check_fused(label)
