"""Parameters, a small module system, and the layers the networks need."""

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module, F.RunningStats)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, F.RunningStats):
                yield f"{prefix}{name}.mean", value, "mean"
                yield f"{prefix}{name}.var", value, "var"
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, stats, attr in self.named_buffers():
            state[name] = getattr(stats, attr).copy()
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = {name: (stats, attr) for name, stats, attr in self.named_buffers()}
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, (stats, attr) in buffers.items():
            setattr(stats, attr, np.array(state[name], dtype=np.float64))
            stats.populated = True
        return self


def _init(rng, shape, std):
    if std == "he":
        fan_in = int(np.prod(shape[1:]))
        std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, init_std=0.02, bias=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.pad = stride, pad
        self.weight = Parameter(_init(rng, (cout, cin, k, k), init_std))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, init_std=0.02, bias=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.pad = stride, pad
        self.weight = Parameter(_init(rng, (cin, cout, k, k), init_std))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, epsilon=1e-5, rng=None, init_std=None):
        gamma = np.ones(channels) if init_std is None else rng.normal(1.0, init_std, channels)
        self.gamma = Parameter(gamma)
        self.beta = Parameter(np.zeros(channels))
        self.stats = F.RunningStats(channels, momentum)
        self.epsilon = epsilon

    def forward(self, x):
        mode = "train" if self.training else "eval"
        return F.batch_norm2d(x, self.gamma, self.beta, self.stats, mode, self.epsilon)
