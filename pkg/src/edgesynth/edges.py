"""Canny edge detection and the simpler gradient / LoG operators.

Everything works on float64 maps with reflect-101 borders (``np.pad`` mode
``reflect``), so a frame around the image never shows up as an edge.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError
from .imaging import ImageBuffer, to_grayscale
from .validation import as_plane

_KERNELS = {
    "sobel": np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64),
    "prewitt": np.array([[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]], dtype=np.float64),
}
_TAN_22_5 = math.tan(math.pi / 8)


@dataclass(frozen=True)
class CannyParams:
    sigma: float = 1.0
    high_quantile: float = 0.90
    low_ratio: float = 0.4

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"canny sigma must be > 0, got {self.sigma}")
        if not 0 < self.high_quantile < 1:
            raise ConfigError(f"canny high_quantile must lie in (0, 1), got {self.high_quantile}")
        if not 0 < self.low_ratio < 1:
            raise ConfigError(f"canny low_ratio must lie in (0, 1), got {self.low_ratio}")


@dataclass
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    @property
    def magnitude(self):
        return np.sqrt(self.gx * self.gx + self.gy * self.gy)

    @property
    def direction(self):
        theta = np.arctan2(self.gy, self.gx)
        return np.where(theta <= -math.pi, math.pi, theta)


def gaussian_kernel(sigma):
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def _correlate_rows(img, kernel):
    r = len(kernel) // 2
    padded = np.pad(img, ((0, 0), (r, r)), mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for i, w in enumerate(kernel):
        out += w * padded[:, i:i + img.shape[1]]
    return out


def gaussian_blur(gray, sigma=1.0):
    """Separable Gaussian smoothing; radius ceil(3 sigma), normalized kernel."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    img = np.asarray(as_plane(gray), dtype=np.float64)
    k = gaussian_kernel(sigma)
    return _correlate_rows(_correlate_rows(img, k).T, k).T


def _correlate3(img, kernel):
    padded = np.pad(img, 1, mode="reflect")
    h, w = img.shape
    out = np.zeros((h, w))
    for i in range(3):
        for j in range(3):
            if kernel[i, j]:
                out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out


def gradient(smoothed, operator="sobel"):
    """Image gradient with x along columns and y along rows (downwards)."""
    img = np.asarray(smoothed, dtype=np.float64)
    if operator in _KERNELS:
        if min(img.shape) < 3:
            raise ConfigError("3x3 gradient operators need an image of at least 3x3")
        k = _KERNELS[operator]
        return GradientField(_correlate3(img, k), _correlate3(img, k.T))
    if operator == "roberts":
        if min(img.shape) < 2:
            raise ConfigError("roberts needs an image of at least 2x2")
        p = np.pad(img, ((0, 1), (0, 1)), mode="reflect")
        h, w = img.shape
        gx = p[:h, :w] - p[1:, 1:]
        gy = p[:h, 1:] - p[1:, :w]
        return GradientField(gx, gy)
    raise ConfigError(f"unknown gradient operator {operator!r}")


def _direction_bins(gx, gy):
    """Quantize gradient orientation to 0/45/90/135 degree bins (0..3).

    Uses only |gx|, |gy| and sign(gx*gy), so negating the image gives the
    same bins bit for bit.
    """
    ax, ay = np.abs(gx), np.abs(gy)
    bins = np.where(gx * gy > 0, 1, 3)
    bins = np.where(ay <= _TAN_22_5 * ax, 0, bins)
    bins = np.where(ax < _TAN_22_5 * ay, 2, bins)
    return bins


# (forward, backward) neighbor offsets per bin; y grows downwards
_NEIGHBORS = {
    0: ((0, 1), (0, -1)),
    1: ((1, 1), (-1, -1)),
    2: ((1, 0), (-1, 0)),
    3: ((1, -1), (-1, 1)),
}


def non_max_suppression(field):
    """Thin gradient ridges to one pixel.

    A pixel survives when its magnitude is >= the backward neighbor and
    strictly > the forward neighbor along its quantized direction; the strict
    side breaks plateaus such as the two equal responses flanking an ideal
    step.
    """
    mag = field.magnitude
    bins = _direction_bins(field.gx, field.gy)
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="reflect")
    keep = np.zeros(mag.shape, dtype=bool)
    for b, ((fr, fc), (br, bc)) in _NEIGHBORS.items():
        fwd = padded[1 + fr:1 + fr + h, 1 + fc:1 + fc + w]
        bwd = padded[1 + br:1 + br + h, 1 + bc:1 + bc + w]
        keep |= (bins == b) & (mag > fwd) & (mag >= bwd)
    keep &= mag > 0
    return np.where(keep, mag, 0.0)


def hysteresis(nms, high, low):
    """Keep strong pixels plus weak pixels 8-connected to a strong one."""
    if not 0 <= low < high:
        raise ConfigError(f"hysteresis needs 0 <= low < high, got low={low}, high={high}")
    nms = np.asarray(nms, dtype=np.float64)
    candidate = (nms >= low) & (nms > 0)
    strong = (nms >= high) & candidate
    labels, count = ndimage.label(candidate, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros(nms.shape, dtype=np.uint8)
    seeded = np.zeros(count + 1, dtype=bool)
    seeded[np.unique(labels[strong])] = True
    seeded[0] = False
    return np.where(seeded[labels], 255, 0).astype(np.uint8)


def canny_thresholds(nms, params):
    values = nms[nms > 0]
    if values.size == 0:
        return None
    high = float(np.quantile(values, params.high_quantile))
    return high, params.low_ratio * high


def canny(gray, params=None, operator="sobel"):
    """Canny edge map (values 0/255) of a single-channel 8-bit image.

    The image is centered as ``2*I - 255`` before smoothing, an affine change
    that leaves edge positions alone and keeps results exactly invariant to
    contrast inversion. Thresholds are quantiles of the nonzero suppressed
    magnitudes, so the overall intensity scale does not matter.
    """
    params = params or CannyParams()
    img = np.asarray(as_plane(gray), dtype=np.int64)
    centered = (2 * img - 255).astype(np.float64)
    nms = non_max_suppression(gradient(gaussian_blur(centered, params.sigma), operator))
    thresholds = canny_thresholds(nms, params)
    if thresholds is None:
        return np.zeros(img.shape, dtype=np.uint8)
    return hysteresis(nms, *thresholds)


def log_zero_crossing(gray, sigma=1.0, threshold_ratio=0.1):
    """Laplacian-of-Gaussian zero crossings with a slope threshold."""
    img = np.asarray(as_plane(gray), dtype=np.int64)
    smoothed = gaussian_blur((2 * img - 255).astype(np.float64), sigma)
    lap = _correlate3(smoothed, np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64))
    out = np.zeros(img.shape, dtype=bool)
    if not np.any(lap):
        return out.astype(np.uint8)
    t = threshold_ratio * np.abs(lap).max()
    # horizontal then vertical neighbor pairs; mark whichever side sits closer to zero
    for a, b, first, second in (
        (lap[:, :-1], lap[:, 1:], (slice(None), slice(None, -1)), (slice(None), slice(1, None))),
        (lap[:-1, :], lap[1:, :], (slice(None, -1), slice(None)), (slice(1, None), slice(None))),
    ):
        cross = (a * b < 0) & (np.abs(a - b) >= t)
        near_a = np.abs(a) <= np.abs(b)
        out[first] |= cross & near_a
        out[second] |= cross & ~near_a
    return np.where(out, 255, 0).astype(np.uint8)


def detect_edges(gray, method="canny", params=None):
    """Edge map by ``canny`` or by the Canny pipeline with another gradient operator, or ``log``."""
    params = params or CannyParams()
    if method == "canny":
        return canny(gray, params)
    if method in ("sobel", "prewitt", "roberts"):
        return canny(gray, params, operator=method)
    if method == "log":
        return log_zero_crossing(gray, params.sigma)
    raise ConfigError(f"unknown edge method {method!r}")


class CannyEdgeDetector(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping images to 0/255 structure-edge maps.

    RGB inputs are converted to BT.601 grayscale first.
    """

    def __init__(self, sigma=1.0, high_quantile=0.9, low_ratio=0.4, method="canny"):
        self.sigma = sigma
        self.high_quantile = high_quantile
        self.low_ratio = low_ratio
        self.method = method

    def fit(self, X, y=None):
        self.params_ = CannyParams(self.sigma, self.high_quantile, self.low_ratio)
        return self

    def transform(self, X):
        params = CannyParams(self.sigma, self.high_quantile, self.low_ratio)
        out = []
        for img in X:
            if not isinstance(img, ImageBuffer):
                img = ImageBuffer(np.asarray(img))
            out.append(detect_edges(to_grayscale(img), self.method, params))
        return out
