"""8-bit image buffers, binary PGM/PPM codec, tiling and resizing."""

import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CodecError, NonDivisibleError, ShapeError, UnsupportedFormat


@dataclass(eq=False)
class ImageBuffer:
    """H x W x C uint8 pixels, C in {1, 3}, row-major and channel-interleaved."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ShapeError(f"image must be HxW, HxWx1 or HxWx3, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError("image extents must be positive")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255 or not np.array_equal(px, np.round(px))):
                raise ValueError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = np.ascontiguousarray(px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]

    def plane(self):
        """The pixels as a 2-d array (single-channel images only)."""
        if self.channels != 1:
            raise ShapeError("plane() needs a single-channel image")
        return self.pixels[:, :, 0]

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}x{self.channels})"


def as_image(x):
    return x if isinstance(x, ImageBuffer) else ImageBuffer(x)


# codec ---------------------------------------------------------------------


def encode_pnm(image):
    image = as_image(image)
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    return header + image.pixels.tobytes()


def _header_tokens(blob):
    """Yield (token, end offset) for the four PNM header fields, skipping comments."""
    pos, n = 0, len(blob)
    for _ in range(4):
        while pos < n:
            ch = blob[pos:pos + 1]
            if ch == b"#":
                nl = blob.find(b"\n", pos)
                pos = n if nl < 0 else nl + 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CodecError("truncated PNM header")
        yield blob[start:pos], pos


def decode_pnm(blob):
    tokens = list(_header_tokens(blob))
    magic = tokens[0][0]
    if magic not in (b"P5", b"P6"):
        if magic in (b"P1", b"P2", b"P3", b"P4"):
            raise UnsupportedFormat(f"only binary P5/P6 are supported, got {magic.decode()}")
        raise CodecError(f"bad PNM magic {magic!r}")
    try:
        width, height, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError as err:
        raise CodecError(f"malformed PNM header: {err}") from None
    if width < 1 or height < 1:
        raise CodecError("PNM extents must be positive")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval must be 255, got {maxval}")
    end = tokens[-1][1]
    if end >= len(blob) or not blob[end:end + 1].isspace():
        raise CodecError("missing whitespace after PNM header")
    channels = 1 if magic == b"P5" else 3
    payload = blob[end + 1:]
    expected = width * height * channels
    if len(payload) < expected:
        raise CodecError(f"truncated pixel payload: {len(payload)} of {expected} bytes")
    px = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(px.copy())


def read_pnm(path):
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_pnm(image, path):
    with open(path, "wb") as fh:
        fh.write(encode_pnm(image))


def pnm_suffix(image):
    return ".pgm" if as_image(image).channels == 1 else ".ppm"


# spatial -------------------------------------------------------------------


@dataclass
class TileGrid:
    source_id: str
    block: int
    rows: int
    cols: int
    tiles: list = field(default_factory=list)

    def names(self):
        return [f"{self.source_id}_r{r}c{c}" for r in range(self.rows) for c in range(self.cols)]

    def reassemble(self):
        rows = [np.concatenate([t.pixels for t in self.tiles[r * self.cols:(r + 1) * self.cols]], axis=1)
                for r in range(self.rows)]
        return ImageBuffer(np.concatenate(rows, axis=0))


def tile(image, block, source_id="image"):
    """Cut ``image`` into row-major ``block`` x ``block`` tiles; extents must divide."""
    image = as_image(image)
    if block < 1 or image.height % block or image.width % block:
        raise NonDivisibleError(
            f"{source_id}: {image.width}x{image.height} is not divisible into {block}-pixel blocks"
        )
    rows, cols = image.height // block, image.width // block
    tiles = [
        ImageBuffer(image.pixels[r * block:(r + 1) * block, c * block:(c + 1) * block].copy())
        for r in range(rows)
        for c in range(cols)
    ]
    return TileGrid(source_id, block, rows, cols, tiles)


def _nearest_index(dst, src):
    # floor(i * src / dst) in exact integer arithmetic
    return np.arange(dst, dtype=np.int64) * src // dst


def resize(image, new_w, new_h, method="nearest"):
    """Resize to ``new_w`` x ``new_h``.

    ``nearest`` samples ``floor(dst * src/dst)``. ``bilinear`` aligns the corner
    pixels and rounds half up when quantizing back to 8 bits.
    """
    image = as_image(image)
    if new_w < 1 or new_h < 1:
        raise ValueError("resize extents must be >= 1")
    px = image.pixels
    if method == "nearest":
        rows = _nearest_index(new_h, image.height)
        cols = _nearest_index(new_w, image.width)
        return ImageBuffer(px[rows][:, cols])
    if method != "bilinear":
        raise ValueError(f"unknown resize method {method!r}")

    def coords(dst, src):
        if dst == 1 or src == 1:
            pos = np.zeros(dst)
        else:
            pos = np.arange(dst) * ((src - 1) / (dst - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), src - 1)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(new_h, image.height)
    c0, c1, fc = coords(new_w, image.width)
    f = px.astype(np.float64)
    top = f[r0][:, c0] * (1 - fc)[None, :, None] + f[r0][:, c1] * fc[None, :, None]
    bottom = f[r1][:, c0] * (1 - fc)[None, :, None] + f[r1][:, c1] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bottom * fr[:, None, None]
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def to_grayscale(image):
    """BT.601 luma, rounded half up. Single-channel input is returned unchanged."""
    image = as_image(image)
    if image.channels == 1:
        return image
    px = image.pixels.astype(np.int64)
    # weights scaled by 1000 so the half-up rounding is exact
    luma = 299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2]
    return ImageBuffer(((luma + 500) // 1000).astype(np.uint8))


def tile_path(directory, source_id, r, c, channels):
    return os.path.join(directory, f"{source_id}_r{r}c{c}{'.pgm' if channels == 1 else '.ppm'}")
