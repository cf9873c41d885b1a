"""Adam over complex parameters.

Each complex parameter is treated as a pair of real parameters: first and
second moments are tracked separately for the real and imaginary components,
so the effective step size adapts per component exactly as real Adam would
on the stacked (re, im) vector.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["Adam", "NonFiniteGradientError", "adam_step"]


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or infinity; the step was not applied."""


def adam_step(data: np.ndarray, grad: np.ndarray, m: np.ndarray,
              v: np.ndarray, t: int, lr: float, beta1: float, beta2: float,
              eps: float) -> None:
    """One in-place Adam update on the (re, im) views of a complex array.

    ``m`` is complex (per-component first moments packed as re + i*im);
    ``v`` is real with shape (2,) + data.shape holding the re/im second
    moments. ``t`` is the 1-based step count after this update.
    """
    g2 = np.stack([grad.real, grad.imag])
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * g2 * g2
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    denom = np.sqrt(vhat) + eps
    data -= lr * (mhat.real / denom[0] + 1j * (mhat.imag / denom[1]))


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._t = [0 for _ in self.params]
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros((2,) + p.data.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad.real)) or not np.all(np.isfinite(p.grad.imag)):
                raise NonFiniteGradientError(
                    "non-finite gradient encountered during optimization")
            self._t[i] += 1
            adam_step(p.data, p.grad, self._m[i], self._v[i], self._t[i],
                      self.lr, self.beta1, self.beta2, self.eps)
