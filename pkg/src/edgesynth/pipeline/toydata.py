"""Procedural stand-in for stained tissue: textured background plus elliptical nuclei."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError
from ..imaging import ImageBuffer

BACKGROUND_RGB = np.array([226.0, 170.0, 196.0])
NUCLEUS_RGB = np.array([92.0, 52.0, 138.0])


@dataclass(frozen=True)
class ToySpec:
    count: int = 12
    holdout: int = 4
    size: int = 64
    min_fg: float = 0.15
    max_fg: float = 0.35
    radius_min: float = 3.0
    radius_max: float = 8.0
    texture: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1 or self.holdout < 0:
            raise ConfigError("toy count must be >= 1 and holdout >= 0")
        if self.size < 8:
            raise ConfigError(f"toy size must be >= 8, got {self.size}")
        if not 0 < self.min_fg <= self.max_fg < 1:
            raise ConfigError("toy foreground fractions need 0 < min_fg <= max_fg < 1")
        if not 0 < self.radius_min <= self.radius_max:
            raise ConfigError("toy radii need 0 < radius_min <= radius_max")


def _smooth_noise(rng, size, cell):
    """Bilinearly interpolated lattice noise, roughly unit variance."""
    n = size // cell + 2
    lattice = rng.normal(size=(n, n))
    pos = np.arange(size) / cell
    i0 = np.floor(pos).astype(int)
    f = pos - i0
    a = lattice[i0][:, i0] * (1 - f)[None, :] + lattice[i0][:, i0 + 1] * f[None, :]
    b = lattice[i0 + 1][:, i0] * (1 - f)[None, :] + lattice[i0 + 1][:, i0 + 1] * f[None, :]
    return a * (1 - f)[:, None] + b * f[:, None]


def render_sample(rng, spec):
    """One (RGB image, 0/255 mask) pair; nuclei are painted exactly where the mask is set."""
    s = spec.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    mask = np.zeros((s, s), dtype=bool)
    shade = np.zeros((s, s))
    target = rng.uniform(spec.min_fg, spec.max_fg)
    for _ in range(500):
        if mask.mean() >= target:
            break
        cy, cx = rng.uniform(0, s, size=2)
        ry, rx = rng.uniform(spec.radius_min, spec.radius_max, size=2)
        theta = rng.uniform(0, np.pi)
        c, sn = np.cos(theta), np.sin(theta)
        u = ((xx - cx) * c + (yy - cy) * sn) / rx
        v = (-(xx - cx) * sn + (yy - cy) * c) / ry
        r2 = u * u + v * v
        blob = r2 <= 1.0
        if (mask | blob).mean() > spec.max_fg:
            continue
        mask |= blob
        # darker toward the center of each nucleus
        shade = np.where(blob, np.maximum(shade, 1.0 - r2), shade)

    texture = spec.texture * (_smooth_noise(rng, s, 8) + 0.5 * rng.normal(size=(s, s)))
    bg = BACKGROUND_RGB[None, None, :] + texture[:, :, None] * np.array([1.0, 1.2, 0.8])
    fg = NUCLEUS_RGB[None, None, :] - 30.0 * shade[:, :, None] + 0.6 * texture[:, :, None]
    img = np.where(mask[:, :, None], fg, bg)
    img = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return ImageBuffer(img), np.where(mask, 255, 0).astype(np.uint8)


def generate(spec):
    """All ``count + holdout`` samples, each from its own seeded stream."""
    return [render_sample(np.random.default_rng([spec.seed, i]), spec) for i in range(spec.count + spec.holdout)]
