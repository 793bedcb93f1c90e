"""Input validation helpers shared by the estimators and free functions."""

import numpy as np

from .exceptions import EmptyDatasetError, LabelRangeError, ShapeError
from .imaging import ImageBuffer

MASK_VALUES = (0, 255)
FUSED_VALUES = (0, 128, 255)


def as_plane(x, name="image"):
    """Return a single-channel image as a 2-d array (no copy when possible)."""
    if isinstance(x, ImageBuffer):
        if x.channels != 1:
            raise ShapeError(f"{name} must have one channel, got {x.channels}")
        return x.plane()
    arr = np.asarray(x)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-d map, got shape {arr.shape}")
    return arr


def check_label(x, allowed=MASK_VALUES, name="label"):
    """Validate an 8-bit label map against its allowed value set."""
    arr = as_plane(x, name)
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise LabelRangeError(f"{name} has values outside 0..255")
        arr = arr.astype(np.uint8)
    bad = ~np.isin(arr, allowed)
    if bad.any():
        found = sorted(set(np.unique(arr[bad]).tolist()))[:5]
        raise LabelRangeError(f"{name} contains values {found}; allowed {list(allowed)}")
    return arr


def check_mask(x, name="mask"):
    return check_label(x, MASK_VALUES, name)


def check_fused(x, name="fused label"):
    return check_label(x, FUSED_VALUES, name)


def check_same_extent(*maps, names=None):
    shapes = [np.asarray(m).shape[:2] if not isinstance(m, ImageBuffer) else m.pixels.shape[:2] for m in maps]
    if len(set(shapes)) > 1:
        label = ", ".join(names) if names else "inputs"
        raise ShapeError(f"{label} must share extents, got {shapes}")
    return shapes[0]


def check_nonempty(items, what="dataset"):
    items = list(items)
    if not items:
        raise EmptyDatasetError(f"{what} is empty")
    return items
