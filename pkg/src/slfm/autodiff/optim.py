"""AdamW with decoupled weight decay, and the cosine learning-rate schedule."""

import math

import numpy as np

from ..errors import ConfigError, NumericalError


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named parameter Tensors."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        """Apply one update. Validates all grads first; a NaN/Inf gradient
        aborts the whole step without touching any parameter."""
        lr = self.lr if lr is None else float(lr)
        for name, p in self.params.items():
            if p.grad is None:
                raise NumericalError(f"gradient not populated for parameter '{name}'")
            if not np.isfinite(p.grad).all():
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= np.float32(lr) * update


def cosine_lr(step, total_steps, lr_max, lr_min):
    """Cosine decay from lr_max at step 0 to lr_min at total_steps."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    frac = step / total_steps
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * frac))
