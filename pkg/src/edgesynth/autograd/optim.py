import numpy as np

from ..exceptions import ConfigError, NumericalError

# pix2pix defaults
ADAM_LR = 2e-4
ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def adam_step(params, grads=None, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2, epsilon=ADAM_EPSILON):
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``grads`` defaults to each parameter's ``.grad``; parameters without a
    gradient are left untouched and do not advance their step count.
    """
    if lr <= 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ConfigError("beta1 and beta2 must lie in [0, 1)")
    params = list(params)
    grads = [p.grad for p in params] if grads is None else list(grads)
    if len(grads) != len(params):
        raise ConfigError("need one gradient per parameter")
    for g in grads:
        if g is not None and not np.isfinite(g).all():
            raise NumericalError("non-finite gradient passed to adam_step")

    for p, g in zip(params, grads):
        if g is None:
            continue
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1 ** t)
        v_hat = p.adam_v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + epsilon)


class Adam:
    """Holds hyperparameters for repeated :func:`adam_step` calls."""

    def __init__(self, params, lr=ADAM_LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2, epsilon=ADAM_EPSILON):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon

    def step(self):
        adam_step(self.params, None, self.lr, self.beta1, self.beta2, self.epsilon)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
