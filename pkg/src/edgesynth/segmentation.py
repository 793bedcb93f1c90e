"""Small U-Net for two-class (background / ROI) segmentation."""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .autograd import functional as F
from .autograd.checkpoint import save_checkpoint
from .autograd.nn import BatchNorm2d, Conv2d, Module
from .autograd.optim import Adam
from .autograd.tensor import Tensor, backward
from .exceptions import ConfigError, NumericalError, ShapeError, SplitError
from .gan import image_to_input
from .imaging import as_image
from .labels import class_weights as median_frequency_weights
from .labels import count_pixels, decode_classes, encode_classes
from .validation import check_nonempty


@dataclass(frozen=True)
class SegConfig:
    input_size: int = 64
    depth: int = 2
    base_width: int = 8
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    beta1: float = 0.9
    class_weights: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1 or self.base_width < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("depth, base_width, epochs and batch_size must be >= 1")
        if self.input_size % (2 ** self.depth):
            raise ConfigError(f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}")
        if self.class_weights is not None and any(w <= 0 for w in self.class_weights):
            raise ConfigError("class weights must be positive")


class ConvBlock(Module):
    """conv3x3 -> batch norm -> ReLU, twice."""

    def __init__(self, cin, cout, rng):
        self.conv1 = Conv2d(cin, cout, 3, 1, 1, rng, init_std="he", bias=False)
        self.norm1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng, init_std="he", bias=False)
        self.norm2 = BatchNorm2d(cout)

    def forward(self, x):
        h = F.relu(self.norm1(self.conv1(x)))
        return F.relu(self.norm2(self.conv2(h)))


class SegNetToy(Module):
    """Encoder-decoder with skip connections; logits have the input's extents."""

    def __init__(self, input_size=64, depth=2, base_width=8, n_classes=2, in_channels=3, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if input_size % (2 ** depth):
            raise ConfigError(f"input_size {input_size} is not divisible by 2**{depth}")
        self.input_size, self.depth, self.n_classes = input_size, depth, n_classes
        widths = [base_width * 2 ** i for i in range(depth + 1)]
        self.widths = widths
        self.encoders = [ConvBlock(in_channels if i == 0 else widths[i - 1], widths[i], rng) for i in range(depth)]
        self.bottleneck = ConvBlock(widths[depth - 1], widths[depth], rng)
        self.decoders = [ConvBlock(widths[i + 1] + widths[i], widths[i], rng) for i in range(depth)]
        # small head init keeps the first predictions near uniform
        self.head = Conv2d(widths[0], n_classes, 1, 1, 0, rng, init_std=0.02)

    def forward(self, x):
        if x.ndim != 4 or x.shape[2:] != (self.input_size, self.input_size):
            raise ShapeError(f"segmenter expects [N,C,{self.input_size},{self.input_size}], got {x.shape}")
        skips = []
        h = x
        for enc in self.encoders:
            h = enc(h)
            skips.append(h)
            h = F.max_pool2d(h, 2, 2)
        h = self.bottleneck(h)
        for i in range(self.depth - 1, -1, -1):
            h = self.decoders[i](F.concat_channels([F.upsample_nearest(h, 2), skips[i]]))
        return self.head(h)


def _pack(dataset, size):
    images, labels = [], []
    for i, (image, mask) in enumerate(dataset):
        x = image_to_input(image)
        y = encode_classes(mask, "mask")
        if x.shape[2:] != (size, size) or y.shape != (size, size):
            raise ShapeError(f"sample {i}: image {x.shape[2:]} and mask {y.shape} must both be {size}x{size}")
        images.append(x)
        labels.append(y)
    return np.concatenate(images), np.stack(labels)


def resolve_weights(cfg, labels):
    if cfg.class_weights is not None:
        return np.asarray(cfg.class_weights, dtype=np.float64)
    return median_frequency_weights(count_pixels(labels, 2))


def train(dataset, cfg, checkpoint_path=None, callback=None):
    """Minimize class-weighted cross-entropy with Adam.

    ``callback(epoch, net, mean_loss)`` runs after every epoch and may return
    True to stop early. Returns ``(net, epoch_losses)``.
    """
    pairs = check_nonempty(dataset, "segmentation training set")
    images, labels = _pack(pairs, cfg.input_size)
    weights = resolve_weights(cfg, labels)
    net = SegNetToy(cfg.input_size, cfg.depth, cfg.base_width, rng=np.random.default_rng(cfg.seed))
    opt = Adam(net.parameters(), lr=cfg.lr, beta1=cfg.beta1)
    order_rng = np.random.default_rng([cfg.seed, 1])
    n = len(pairs)
    losses = []
    for epoch in range(cfg.epochs):
        net.train()
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                opt.zero_grad()
                loss = F.weighted_softmax_ce(net(Tensor(images[idx])), labels[idx], weights)
                backward(loss)
                opt.step()
            except NumericalError as err:
                raise NumericalError(f"segmentation training diverged: {err}", iteration=epoch) from err
            total += loss.item() * len(idx)
        losses.append(total / n)
        if callback is not None and callback(epoch, net, losses[-1]):
            break
    net.eval()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, net_state(net))
    return net, losses


def net_state(net):
    state = dict(net.state_dict())
    state["meta.input_size"] = np.array(float(net.input_size))
    state["meta.depth"] = np.array(float(net.depth))
    state["meta.base_width"] = np.array(float(net.widths[0]))
    return state


def net_from_state(state):
    net = SegNetToy(int(state["meta.input_size"]), int(state["meta.depth"]), int(state["meta.base_width"]))
    net.load_state_dict({k: v for k, v in state.items() if not k.startswith("meta.")})
    return net.eval()


def predict_logits(net, image):
    net.eval()
    x = image_to_input(image)
    if x.shape[2:] != (net.input_size, net.input_size):
        raise ShapeError(f"image is {x.shape[3]}x{x.shape[2]}, segmenter expects {net.input_size}x{net.input_size}")
    return net(Tensor(x)).data[0]


def logits_to_mask(logits):
    """Per-pixel argmax over [K,H,W] logits; ties go to the lower class id."""
    return decode_classes(np.argmax(logits, axis=0), "mask")


def predict(net, image):
    return logits_to_mask(predict_logits(net, as_image(image)))


def _origin(record):
    return record["origin"] if isinstance(record, dict) else record.origin


def split_train_test(records, test_fraction=0.05, seed=0):
    """Shuffled split where only real samples may land in the test set.

    The test size is ``floor(n_real * test_fraction + 0.5)``. Both halves keep
    the input order.
    """
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    records = list(records)
    real = [i for i, r in enumerate(records) if _origin(r) == "real"]
    n_test = int(math.floor(len(real) * test_fraction + 0.5))
    if n_test == 0:
        raise SplitError(f"{len(real)} real samples at fraction {test_fraction} leave an empty test set")
    perm = np.random.default_rng(seed).permutation(len(real))
    test_idx = {real[j] for j in perm[:n_test]}
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


class ToyUNetSegmenter(BaseEstimator):
    """``fit(images, masks)`` / ``predict(images)`` wrapper around :class:`SegNetToy`."""

    def __init__(self, input_size=64, depth=2, base_width=8, epochs=30, batch_size=4, lr=1e-3, beta1=0.9,
                 class_weights=None, seed=0):
        self.input_size = input_size
        self.depth = depth
        self.base_width = base_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.class_weights = class_weights
        self.seed = seed

    def config(self):
        params = self.get_params()
        if params["class_weights"] is not None:
            params["class_weights"] = tuple(float(w) for w in params["class_weights"])
        return SegConfig(**params)

    def fit(self, X, y, callback=None):
        if len(X) != len(y):
            raise ShapeError(f"{len(X)} images but {len(y)} masks")
        self.net_, self.loss_curve_ = train(list(zip(X, y)), self.config(), callback=callback)
        return self

    def predict(self, X):
        if not hasattr(self, "net_"):
            raise ConfigError("ToyUNetSegmenter must be fitted before predict")
        return [predict(self.net_, image) for image in X]
