"""Replica (g0) and shape (g1) augmentation over fused labels.

Images are never warped here. g1 transforms the labels and the generator
paints new images for them afterwards.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, ShapeError
from .imaging import resize
from .labels import EDGE, ROI
from .validation import check_fused, check_nonempty

ROTATIONS = (0, 90, 180, 270)
ORIGINS = ("g0", "g1")


@dataclass(frozen=True)
class ShapeTransform:
    rotation: int = 0
    reflect_x: bool = False
    upscale: float = 1.0
    crop_origin: tuple = (0, 0)

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ConfigError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")
        if not 1.0 <= self.upscale <= 1.5:
            raise ConfigError(f"upscale must lie in [1.0, 1.5], got {self.upscale}")


@dataclass
class AugmentedSet:
    """Synthetic pairs of one origin: (fused label, generated image, derived mask)."""

    origin: str
    pairs: list = field(default_factory=list)

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ConfigError(f"origin must be one of {ORIGINS}, got {self.origin!r}")

    def __len__(self):
        return len(self.pairs)

    def add(self, fused, image, mask):
        shapes = {np.asarray(fused).shape[:2], image.pixels.shape[:2], np.asarray(mask).shape[:2]}
        if len(shapes) != 1:
            raise ShapeError(f"pair members must share extents, got {sorted(shapes)}")
        self.pairs.append((fused, image, mask))


def replica_g0(fused_labels):
    """The g0 label set is the real label set itself; synthesis doubles the data."""
    return check_nonempty(fused_labels, "fused label set")


def upscaled_size(block, upscale):
    return int(math.floor(block * upscale + 0.5))


def sample_transform(rng, block, upscale_max=1.25):
    """Draw a random rotation, x-reflection, upscale and crop for a block x block label."""
    if not 1.0 <= upscale_max <= 1.5:
        raise ConfigError(f"upscale_max must lie in [1.0, 1.5], got {upscale_max}")
    rotation = ROTATIONS[int(rng.integers(0, 4))]
    reflect_x = bool(rng.integers(0, 2))
    upscale = float(rng.uniform(1.0, upscale_max))
    slack = upscaled_size(block, upscale) - block
    origin = (int(rng.integers(0, slack + 1)), int(rng.integers(0, slack + 1)))
    return ShapeTransform(rotation, reflect_x, upscale, origin)


def apply_transform(label, t, block):
    """Rotate clockwise, reflect about the x axis, nearest-upscale, then crop."""
    arr = check_fused(label)
    arr = np.rot90(arr, k=-(t.rotation // 90))
    if t.reflect_x:
        arr = arr[::-1, :]
    h, w = arr.shape
    if t.upscale != 1.0:
        arr = resize(arr, upscaled_size(w, t.upscale), upscaled_size(h, t.upscale)).plane()
    r, c = t.crop_origin
    assert 0 <= r and 0 <= c and r + block <= arr.shape[0] and c + block <= arr.shape[1], "crop out of bounds"
    return np.ascontiguousarray(arr[r:r + block, c:c + block])


def derive_mask(fused, edge_to_roi=False):
    """Two-class mask from a fused label: ROI -> 255, background -> 0, edges -> 0 (or 255)."""
    arr = check_fused(fused)
    roi = arr == ROI
    if edge_to_roi:
        roi |= arr == EDGE
    return np.where(roi, 255, 0).astype(np.uint8)


AUGMENT_STREAM = 2


def index_rng(seed, index):
    """Independent generator per item so results do not depend on iteration order."""
    return np.random.default_rng([int(seed), AUGMENT_STREAM, int(index)])


class ShapeAugmenter(BaseEstimator, TransformerMixin):
    """Randomly reshape fused labels (the label half of g1 augmentation)."""

    def __init__(self, block=64, upscale_max=1.25, seed=0):
        self.block = block
        self.upscale_max = upscale_max
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.block < 1:
            raise ConfigError(f"block must be >= 1, got {self.block}")
        return self

    def transform(self, X):
        labels = check_nonempty(X, "fused label set")
        self.transforms_ = []
        out = []
        for i, label in enumerate(labels):
            if np.asarray(label).shape[:2] != (self.block, self.block):
                raise ShapeError(f"label {i} is not {self.block}x{self.block}")
            t = sample_transform(index_rng(self.seed, i), self.block, self.upscale_max)
            self.transforms_.append(t)
            out.append(apply_transform(label, t, self.block))
        return out
