"""Label-to-image translation with an L1-conditioned GAN.

The generator is a U-Net over fused 3-class labels; the discriminator scores
overlapping patches of (label, image) pairs.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .autograd import functional as F
from .autograd.checkpoint import save_checkpoint
from .autograd.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module
from .autograd.optim import Adam
from .autograd.tensor import Tensor, backward
from .exceptions import ConfigError, NumericalError, ShapeError
from .imaging import ImageBuffer, as_image
from .labels import encode_classes
from .validation import check_nonempty

IMAGE_SIZES = (64, 128, 256)
LOSS_FIELDS = ("gen_total", "gen_adv", "gen_l1", "disc")


@dataclass(frozen=True)
class GanConfig:
    lambda_l1: float = 100.0
    epochs: int = 1
    iterations: int = None
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    base_width: int = 16
    image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.image_size not in IMAGE_SIZES:
            raise ConfigError(f"image_size must be one of {IMAGE_SIZES}, got {self.image_size}")
        if self.batch_size < 1 or self.base_width < 1 or self.epochs < 1:
            raise ConfigError("batch_size, base_width and epochs must be >= 1")
        if self.iterations is not None and self.iterations < 1:
            raise ConfigError("iterations must be >= 1 when given")


# tensors <-> labels and images ----------------------------------------------

def label_to_input(fused):
    """One-hot (background, ROI, edge) channels scaled to -1/+1, shape [1,3,H,W]."""
    classes = encode_classes(fused, "fused")
    onehot = (np.arange(3)[:, None, None] == classes[None]).astype(np.float64)
    return (2.0 * onehot - 1.0)[None]


def input_to_label(x):
    """Inverse of :func:`label_to_input` by channel argmax."""
    values = np.array([0, 128, 255], dtype=np.uint8)
    return values[np.asarray(x)[0].argmax(axis=0)]


def image_to_input(image):
    """8-bit image to [1,3,H,W] floats in [-1, 1]; gray images are repeated to 3 channels."""
    px = as_image(image).pixels.astype(np.float64)
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return (px / 127.5 - 1.0).transpose(2, 0, 1)[None]


def output_to_image(y):
    """Decode one [3,H,W] generator output to an RGB ImageBuffer."""
    v = np.floor(127.5 * (np.asarray(y) + 1.0) + 0.5)
    return ImageBuffer(np.clip(v, 0, 255).astype(np.uint8).transpose(1, 2, 0))


# networks ------------------------------------------------------------------

class GeneratorNet(Module):
    """U-Net with log2(size) stride-2 levels and skip connections.

    Level i has ``base * min(2**i, 8)`` channels. The outermost and innermost
    encoder layers carry no batch norm; the innermost one is 1x1.
    """

    def __init__(self, image_size=64, base_width=16, rng=None, in_channels=3, out_channels=3):
        rng = rng if rng is not None else np.random.default_rng(0)
        if image_size < 2 or image_size & (image_size - 1):
            raise ConfigError(f"image_size must be a power of two, got {image_size}")
        self.image_size = image_size
        self.depth = depth = int(math.log2(image_size))
        widths = [base_width * min(2 ** i, 8) for i in range(depth)]
        self.widths = widths
        self.down = [Conv2d(in_channels if i == 0 else widths[i - 1], widths[i], 4, 2, 1, rng) for i in range(depth)]
        self.down_norm = [BatchNorm2d(widths[i]) for i in range(1, depth - 1)]
        self.up = []
        for j in range(depth):
            cin = widths[j] if j == depth - 1 else 2 * widths[j]
            cout = out_channels if j == 0 else widths[j - 1]
            self.up.append(ConvTranspose2d(cin, cout, 4, 2, 1, rng))
        self.up_norm = [BatchNorm2d(widths[j - 1]) for j in range(1, depth)]

    def forward(self, x):
        if x.ndim != 4 or x.shape[2:] != (self.image_size, self.image_size):
            raise ShapeError(f"generator expects [N,C,{self.image_size},{self.image_size}], got {x.shape}")
        skips = []
        h = x
        for i, conv in enumerate(self.down):
            if i > 0:
                h = F.leaky_relu(h, 0.2)
            h = conv(h)
            if 0 < i < self.depth - 1:
                h = self.down_norm[i - 1](h)
            skips.append(h)
        for j in range(self.depth - 1, -1, -1):
            h = self.up[j](F.relu(h))
            if j == 0:
                return F.tanh(h)
            h = F.concat_channels([self.up_norm[j - 1](h), skips[j - 1]])


class DiscriminatorNet(Module):
    """Patch discriminator: three stride-2 conv blocks and a stride-1 logit layer."""

    def __init__(self, base_width=16, rng=None, in_channels=6):
        rng = rng if rng is not None else np.random.default_rng(0)
        w = [base_width, 2 * base_width, 4 * base_width]
        self.convs = [Conv2d(in_channels, w[0], 4, 2, 1, rng), Conv2d(w[0], w[1], 4, 2, 1, rng),
                      Conv2d(w[1], w[2], 4, 2, 1, rng)]
        self.norms = [BatchNorm2d(w[1]), BatchNorm2d(w[2])]
        self.head = Conv2d(w[2], 1, 4, 1, 1, rng)

    def forward(self, label, image):
        h = F.concat_channels([label, image])
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i > 0:
                h = self.norms[i - 1](h)
            h = F.leaky_relu(h, 0.2)
        return self.head(h)

    @staticmethod
    def receptive_field():
        rf, jump = 1, 1
        for k, s in ((4, 2), (4, 2), (4, 2), (4, 1)):
            rf += (k - 1) * jump
            jump *= s
        return rf


# losses --------------------------------------------------------------------

def discriminator_loss(d_real, d_fake):
    return (F.bce_with_logits(d_real, 1.0) + F.bce_with_logits(d_fake, 0.0)) * 0.5


def generator_loss(d_fake, fake, target, lambda_l1):
    adv = F.bce_with_logits(d_fake, 1.0)
    rec = F.l1(fake, target)
    return adv + rec * lambda_l1, adv, rec


def gan_losses(d_real, d_fake, fake, target, lambda_l1=100.0):
    """Return ``(gen_total, gen_adv, gen_l1, disc)`` as scalar tensors."""
    total, adv, rec = generator_loss(d_fake, fake, target, lambda_l1)
    return total, adv, rec, discriminator_loss(d_real, d_fake)


def moving_average(values, window=50):
    """Trailing mean over the last ``min(i + 1, window)`` values."""
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    v = np.asarray(values, dtype=np.float64)
    out = []
    for i in range(v.size):
        w = v[max(0, i + 1 - window):i + 1]
        # a float sum of n equal values divided by n can miss the value by an ulp
        out.append(float(w[0]) if (w == w[0]).all() else float(w.mean()))
    return out


class LossLog:
    """Per-iteration loss values with CSV export."""

    def __init__(self):
        self.rows = []

    def __len__(self):
        return len(self.rows)

    def append(self, gen_total, gen_adv, gen_l1, disc):
        self.rows.append((float(gen_total), float(gen_adv), float(gen_l1), float(disc)))

    def series(self, name):
        return [r[LOSS_FIELDS.index(name)] for r in self.rows]

    def smoothed(self, window=50):
        cols = [moving_average(self.series(f), window) for f in LOSS_FIELDS]
        return list(zip(*cols))

    def _write(self, path, rows):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("iter",) + LOSS_FIELDS)
            for i, r in enumerate(rows):
                writer.writerow([i] + [repr(float(v)) for v in r])

    def to_csv(self, path):
        self._write(path, self.rows)

    def smoothed_to_csv(self, path, window=50):
        self._write(path, self.smoothed(window))

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(*(float(row[f]) for f in LOSS_FIELDS))
        return log


# training ------------------------------------------------------------------

def _pack(pairs, size):
    labels, images = [], []
    for fused, image in pairs:
        x = label_to_input(fused)
        y = image_to_input(image)
        if x.shape[2:] != (size, size) or y.shape[2:] != (size, size):
            raise ShapeError(f"training pairs must be {size}x{size}, got {x.shape[2:]} and {y.shape[2:]}")
        labels.append(x)
        images.append(y)
    return np.concatenate(labels), np.concatenate(images)


def _batches(n, cfg):
    """Deterministic shuffled batch index lists covering every iteration."""
    rng = np.random.default_rng([cfg.seed, 1])
    total = cfg.iterations if cfg.iterations is not None else cfg.epochs * math.ceil(n / cfg.batch_size)
    done = 0
    while done < total:
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            if done == total:
                return
            yield order[start:start + cfg.batch_size]
            done += 1


def build_networks(cfg):
    rng = np.random.default_rng(cfg.seed)
    return GeneratorNet(cfg.image_size, cfg.base_width, rng), DiscriminatorNet(cfg.base_width, rng)


def networks_state(generator, discriminator=None, iteration=None):
    state = {f"generator.{k}": v for k, v in generator.state_dict().items()}
    if discriminator is not None:
        state.update({f"discriminator.{k}": v for k, v in discriminator.state_dict().items()})
    state["meta.image_size"] = np.array(float(generator.image_size))
    state["meta.base_width"] = np.array(float(generator.widths[0]))
    if iteration is not None:
        state["meta.iteration"] = np.array(float(iteration))
    return state


def generator_from_state(state):
    size, base = int(state["meta.image_size"]), int(state["meta.base_width"])
    g = GeneratorNet(size, base)
    g.load_state_dict({k[len("generator."):]: v for k, v in state.items() if k.startswith("generator.")})
    return g.eval()


def train(dataset, cfg, checkpoint_path=None, callback=None):
    """Alternate a discriminator step and a generator step per batch.

    Returns ``(generator, discriminator, log)``. A non-finite value aborts with
    :class:`NumericalError`; the networks are then rolled back to the last
    completed iteration and, if ``checkpoint_path`` is given, saved there.
    """
    pairs = check_nonempty(dataset, "GAN training set")
    labels, images = _pack(pairs, cfg.image_size)
    g, d = build_networks(cfg)
    g_opt = Adam(g.parameters(), lr=cfg.lr, beta1=cfg.beta1)
    d_opt = Adam(d.parameters(), lr=cfg.lr, beta1=cfg.beta1)
    log = LossLog()
    g.train()
    d.train()
    last_good = (g.state_dict(), d.state_dict())
    it = 0
    for it, idx in enumerate(_batches(len(pairs), cfg)):
        try:
            x, y = Tensor(labels[idx]), Tensor(images[idx])
            fake = g(x)

            d_opt.zero_grad()
            disc = discriminator_loss(d(x, y), d(x, fake.detach()))
            backward(disc)
            d_opt.step()

            g_opt.zero_grad()
            total, adv, rec = generator_loss(d(x, fake), fake, y, cfg.lambda_l1)
            backward(total)
            g_opt.step()
            d_opt.zero_grad()
        except NumericalError as err:
            g.load_state_dict(last_good[0])
            d.load_state_dict(last_good[1])
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, networks_state(g, d, it))
            raise NumericalError(f"GAN training diverged: {err}", iteration=it) from err
        log.append(total.item(), adv.item(), rec.item(), disc.item())
        last_good = (g.state_dict(), d.state_dict())
        if callback is not None:
            callback(it, log)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, networks_state(g, d, len(log)))
    return g, d, log


def synthesize(generator, labels):
    """Generate one RGB image per fused label (eval mode, no noise)."""
    generator.eval()
    out = []
    for fused in labels:
        x = label_to_input(fused)
        out.append(output_to_image(generator(Tensor(x)).data[0]))
    return out


class Pix2Pix(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit(labels, images)`` then ``transform(labels)`` -> images."""

    def __init__(self, lambda_l1=100.0, epochs=1, iterations=None, batch_size=1, lr=2e-4, beta1=0.5,
                 base_width=16, image_size=64, seed=0):
        self.lambda_l1 = lambda_l1
        self.epochs = epochs
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.base_width = base_width
        self.image_size = image_size
        self.seed = seed

    def config(self):
        return GanConfig(**self.get_params())

    def fit(self, X, y):
        if len(X) != len(y):
            raise ShapeError(f"{len(X)} labels but {len(y)} images")
        self.generator_, self.discriminator_, self.loss_log_ = train(list(zip(X, y)), self.config())
        return self

    def transform(self, X):
        if not hasattr(self, "generator_"):
            raise ConfigError("Pix2Pix must be fitted before transform")
        return synthesize(self.generator_, X)
