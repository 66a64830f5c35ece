"""Training optimizers: Adam, Nadam, RMSprop, and Adafactor.

All four follow their standard published update rules; the exact variant
choices (Nesterov form for Nadam, epsilon placement for RMSprop, factored
moments only for 2-D tensors in Adafactor) are documented inline because
the one-step tests hand-derive expected updates from these formulas.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Parameter


class Optimizer:
    def __init__(self, params, lr: float):
        self.params: list[Parameter] = list(params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.lr = lr
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise StateError(f"parameter {p.name!r} has no gradient")
        self.step_count += 1
        self._update()

    def _update(self) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    """Bias-corrected Adam: p -= lr * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Nadam(Optimizer):
    """Adam with a Nesterov lookahead on the first moment:

    p -= lr * (beta1 * m_hat + (1 - beta1) * g / (1 - beta1^t)) / (sqrt(v_hat) + eps)
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            nesterov = self.beta1 * m_hat + (1.0 - self.beta1) * g / bc1
            p.data -= self.lr * nesterov / (np.sqrt(v_hat) + self.eps)


class RMSprop(Optimizer):
    """Running squared-gradient average; epsilon sits inside the root:

    v = decay * v + (1 - decay) * g^2;  p -= lr * g / sqrt(v + eps)
    """

    def __init__(self, params, lr: float, decay: float = 0.9, eps: float = 1e-8):
        super().__init__(params, lr)
        self.decay, self.eps = decay, eps
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self):
        for i, p in enumerate(self.params):
            g = p.grad
            self.v[i] = self.decay * self.v[i] + (1.0 - self.decay) * g * g
            p.data -= self.lr * g / np.sqrt(self.v[i] + self.eps)


class Adafactor(Optimizer):
    """Memory-efficient second-moment optimizer.

    2-D tensors keep factored row/column moment vectors recombined as
    outer(R, C) / mean(R); other ranks keep the full moment.  The decay
    follows the published schedule beta2_t = 1 - t^-0.8, updates are
    RMS-clipped at d = 1.0, and the external learning rate is applied
    directly (no relative-step schedule).  With scale_by_parameter the
    step is additionally multiplied by max(eps2, RMS(param)).
    """

    def __init__(self, params, lr: float, eps1: float = 1e-30, eps2: float = 1e-3,
                 clip_threshold: float = 1.0, scale_by_parameter: bool = False):
        super().__init__(params, lr)
        self.eps1, self.eps2 = eps1, eps2
        self.clip_threshold = clip_threshold
        self.scale_by_parameter = scale_by_parameter
        self.row = {}
        self.col = {}
        self.full = {}
        for i, p in enumerate(self.params):
            if p.data.ndim == 2:
                self.row[i] = np.zeros(p.data.shape[0], dtype=np.float64)
                self.col[i] = np.zeros(p.data.shape[1], dtype=np.float64)
            else:
                self.full[i] = np.zeros_like(p.data, dtype=np.float64)

    def _update(self):
        t = self.step_count
        beta2t = 1.0 - t ** -0.8
        for i, p in enumerate(self.params):
            g = p.grad.astype(np.float64)
            g2 = g * g + self.eps1
            if i in self.row:
                self.row[i] = beta2t * self.row[i] + (1.0 - beta2t) * g2.mean(axis=1)
                self.col[i] = beta2t * self.col[i] + (1.0 - beta2t) * g2.mean(axis=0)
                v = np.outer(self.row[i], self.col[i]) / self.row[i].mean()
            else:
                self.full[i] = beta2t * self.full[i] + (1.0 - beta2t) * g2
                v = self.full[i]
            update = g / np.sqrt(v)
            rms = np.sqrt(np.mean(update * update))
            update /= max(1.0, rms / self.clip_threshold)
            step = self.lr
            if self.scale_by_parameter:
                step *= max(self.eps2, float(np.sqrt(np.mean(p.data.astype(np.float64) ** 2))))
            p.data -= (step * update).astype(p.data.dtype)


OPTIMIZERS = {"adam": Adam, "nadam": Nadam, "rmsprop": RMSprop, "adafactor": Adafactor}


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](params, lr)
