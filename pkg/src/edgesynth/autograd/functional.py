"""Differentiable neural-network operations on :class:`Tensor`.

Convolutions are im2col over ``sliding_window_view`` plus ``tensordot``; the
scatter back (col2im) loops only over the k*k kernel offsets.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError, DegenerateBatchError, LabelRangeError, ShapeError
from .tensor import Tensor, as_tensor


def _windows(xp, k, stride):
    # (N, C, Ho, Wo, k, k) view over a padded NCHW array
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _col2im(cols, shape, k, stride):
    """Scatter-add (N, C, Ho, Wo, k, k) columns into an array of ``shape``."""
    out = np.zeros(shape)
    ho, wo = cols.shape[2], cols.shape[3]
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[..., i, j]
    return out


def _check_conv_args(x, w, b, stride, pad, transposed):
    if int(stride) < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ConfigError(f"pad must be >= 0, got {pad}")
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"expected 4-d input and weight, got {x.shape} and {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be square, got {w.shape[2:]}")
    if x.shape[1] != w.shape[0 if transposed else 1]:
        raise ShapeError(f"channel mismatch: input {x.shape}, weight {w.shape}")
    out_channels = w.shape[1 if transposed else 0]
    if b is not None and b.shape != (out_channels,):
        raise ShapeError(f"bias shape {b.shape} does not match {out_channels} output channels")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlate ``x`` [N,Cin,H,W] with ``weight`` [Cout,Cin,k,k]."""
    _check_conv_args(x, weight, bias, stride, pad, transposed=False)
    k = weight.shape[2]
    n, _, h, w_ = x.shape
    if h + 2 * pad < k or w_ + 2 * pad < k:
        raise ShapeError(f"kernel {k} larger than padded input {x.shape[2:]} (pad={pad})")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, k, stride)
    out = np.tensordot(win, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = [x, weight] + ([bias] if bias is not None else [])

    def _backward(g):
        grads = []
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            dxp = _col2im(cols, xp.shape, k, stride)
            grads.append(dxp[:, :, pad:pad + h, pad:pad + w_] if pad else dxp)
        if weight.requires_grad:
            grads.append(np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._make(out, parents, _backward, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride=1, pad=0):
    """Adjoint of :func:`conv2d`; ``weight`` is [Cin, Cout, k, k].

    Output extent is (H - 1) * stride - 2 * pad + k.
    """
    _check_conv_args(x, weight, bias, stride, pad, transposed=True)
    k = weight.shape[2]
    n, _, h, w_ = x.shape
    full_h, full_w = (h - 1) * stride + k, (w_ - 1) * stride + k
    if full_h - 2 * pad < 1 or full_w - 2 * pad < 1:
        raise ShapeError(f"pad {pad} leaves no output for input {x.shape[2:]}")
    cout = weight.shape[1]
    cols = np.tensordot(x.data, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    full = _col2im(cols, (n, cout, full_h, full_w), k, stride)
    out = np.ascontiguousarray(full[:, :, pad:full_h - pad, pad:full_w - pad])
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = [x, weight] + ([bias] if bias is not None else [])

    def _backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gwin = _windows(gp, k, stride)
        grads = []
        if x.requires_grad:
            dx = np.tensordot(gwin, weight.data, axes=([1, 4, 5], [1, 2, 3]))
            grads.append(np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))
        if weight.requires_grad:
            grads.append(np.tensordot(x.data, gwin, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._make(out, parents, _backward, "conv_transpose2d")


class RunningStats:
    """Per-channel running mean and unbiased variance for batch norm."""

    def __init__(self, channels, momentum=0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum
        self.populated = False

    def update(self, batch_mean, batch_var_unbiased):
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * batch_mean
        self.var = (1 - m) * self.var + m * batch_var_unbiased
        self.populated = True


def batch_norm2d(x, gamma, beta, running_stats=None, mode="train", epsilon=1e-5):
    """Normalize each channel of ``x`` [N,C,H,W] then apply ``gamma``/``beta``.

    In ``train`` mode the batch statistics are used and, when given,
    ``running_stats`` is updated in place. ``eval`` mode reads the running
    statistics instead.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if mode == "train":
        if count < 2:
            raise DegenerateBatchError("batch norm in train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_stats is not None:
            running_stats.update(mean, var * count / (count - 1))
    elif mode == "eval":
        if running_stats is None:
            raise ConfigError("eval-mode batch norm needs running statistics")
        mean, var = running_stats.mean, running_stats.var
    else:
        raise ConfigError(f"unknown batch norm mode {mode!r}")

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def _backward(g):
        grads = []
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if mode == "train":
                s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (count * dxhat - s1 - xhat * s2) * (inv_std[None, :, None, None] / count)
            else:
                dx = dxhat * inv_std[None, :, None, None]
            grads.append(dx)
        if gamma.requires_grad:
            grads.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._make(out, (x, gamma, beta), _backward, "batch_norm2d")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation(x, kind, alpha=0.2):
    """Elementwise ``relu``, ``leaky_relu``, ``tanh`` or ``sigmoid``.

    The relu and leaky_relu subgradient at exactly 0 is taken from the
    negative side (0 and ``alpha`` respectively).
    """
    z = x.data
    if kind == "relu":
        mask = z > 0
        return Tensor._make(z * mask, (x,), lambda g: (g * mask,), "relu")
    if kind == "leaky_relu":
        if not 0 < alpha < 1:
            raise ConfigError(f"leaky_relu alpha must lie in (0, 1), got {alpha}")
        slope = np.where(z > 0, 1.0, alpha)
        return Tensor._make(z * slope, (x,), lambda g: (g * slope,), "leaky_relu")
    if kind == "tanh":
        t = np.tanh(z)
        return Tensor._make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")
    if kind == "sigmoid":
        s = _sigmoid(z)
        return Tensor._make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")
    raise ConfigError(f"unknown activation {kind!r}")


def relu(x):
    return activation(x, "relu")


def leaky_relu(x, alpha=0.2):
    return activation(x, "leaky_relu", alpha)


def tanh(x):
    return activation(x, "tanh")


def sigmoid(x):
    return activation(x, "sigmoid")


def max_pool2d(x, k=2, stride=2):
    n, c, h, w = x.shape
    if h < k or w < k:
        raise ShapeError(f"pool window {k} exceeds input {x.shape[2:]}")
    win = _windows(x.data, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def _backward(g):
        cols = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(cols, idx[..., None], g[..., None], axis=-1)
        return (_col2im(cols.reshape(n, c, ho, wo, k, k), x.shape, k, stride),)

    return Tensor._make(out, (x,), _backward, "max_pool2d")


def upsample_nearest(x, factor=2):
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def _backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), _backward, "upsample_nearest")


def concat_channels(inputs):
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise ShapeError("concat_channels needs at least one input")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[:1] + t.shape[2:] != ref[:1] + ref[2:]:
            raise ShapeError(f"cannot concatenate {t.shape} with {ref} along channels")
    bounds = np.cumsum([t.shape[1] for t in inputs])[:-1]
    out = np.concatenate([t.data for t in inputs], axis=1)
    tracked = [i for i, t in enumerate(inputs) if t.requires_grad]

    def _backward(g):
        parts = np.split(g, bounds, axis=1)
        return [parts[i] for i in tracked]

    return Tensor._make(out, inputs, _backward, "concat")


# losses --------------------------------------------------------------------


def _target_array(target, shape):
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    return np.broadcast_to(t, shape)


def bce_with_logits(pred, target):
    """Mean binary cross-entropy of ``sigmoid(pred)`` against ``target``."""
    z = pred.data
    t = _target_array(target, z.shape)
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def _backward(g):
        return ((_sigmoid(z) - t) * (g / n),)

    return Tensor._make(np.array(per.mean()), (pred,), _backward, "bce_with_logits")


def l1(pred, target):
    """Mean absolute error; ``target`` may itself be a tracked tensor."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"l1 shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    sign = np.sign(diff)
    n = diff.size

    def _backward(g):
        gp = sign * (g / n)
        return [v for v, t in ((gp, pred), (-gp, target)) if t.requires_grad]

    return Tensor._make(np.array(np.abs(diff).mean()), (pred, target), _backward, "l1")


def weighted_softmax_ce(logits, labels, class_weights):
    """Class-weighted softmax cross-entropy over [N,K,H,W] logits.

    The weighted sum of per-pixel losses is divided by the sum of the weights
    applied, so equal per-pixel losses give that loss back whatever the
    weights are.
    """
    z = logits.data
    if z.ndim != 4:
        raise ShapeError(f"logits must be [N,K,H,W], got {z.shape}")
    n, k, h, w = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {z.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelRangeError(f"labels must lie in [0, {k})")
    weights = np.asarray(class_weights, dtype=np.float64)
    if weights.shape != (k,) or (weights <= 0).any():
        raise ConfigError("class_weights must be K positive values")
    labels = labels.astype(np.intp)

    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    picked = np.take_along_axis(log_p, labels[:, None], axis=1)[:, 0]
    pw = weights[labels]
    total_w = pw.sum()
    loss = -(pw * picked).sum() / total_w

    def _backward(g):
        p = np.exp(log_p)
        np.put_along_axis(p, labels[:, None], np.take_along_axis(p, labels[:, None], axis=1) - 1.0, axis=1)
        return (p * (pw[:, None] * (g / total_w)),)

    return Tensor._make(np.array(loss), (logits,), _backward, "weighted_softmax_ce")
