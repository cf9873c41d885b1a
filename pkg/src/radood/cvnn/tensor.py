"""Reverse-mode autodiff over complex arrays.

Every value is a complex128 ndarray; a real quantity is simply a tensor whose
imaginary part is identically zero. For a real loss L the stored gradient of
a tensor x is

    x.grad = dL/dRe(x) + i * dL/dIm(x)  ( = 2 * dL/d conj(x) ),

so the steepest-descent step x <- x - lr * x.grad decreases L to first order,
and for a holomorphic op y = f(x) the chain rule is grad_x += grad_y * conj(f'(x)).
Non-holomorphic ops (conj, real/imag parts, modulus, CReLU) carry their own
rules. The tape is the usual dynamic graph: each op closes over its inputs
and appends gradient contributions during ``backward``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = ["Tensor", "no_grad", "is_grad_enabled"]

_GRAD_ENABLED = True


class no_grad:
    """Context manager disabling tape construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.complex128)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    # -- plumbing ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @staticmethod
    def ensure(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> complex:
        return complex(self.data.reshape(()))

    def real_item(self) -> float:
        return float(self.data.reshape(()).real)

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    @staticmethod
    def _result(data, inputs, backward):
        out = Tensor(data)
        live = tuple(t for t in inputs if t.requires_grad)
        if _GRAD_ENABLED and live:
            out.requires_grad = True
            out._prev = live
            out._backward = backward
        return out

    def backward(self, seed=None):
        """Backpropagate from this (scalar, real) tensor through the tape."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor with no tape")
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed needs a scalar")
            seed = np.ones_like(self.data)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self._accum(np.asarray(seed, dtype=np.complex128))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- arithmetic (holomorphic in each argument) --------------------------

    def __add__(self, other):
        a, b = self, Tensor.ensure(other)
        out_data = a.data + b.data

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        out = Tensor._result(out_data, (a, b), backward)
        return out

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward():
            a._accum(-out.grad)

        out = Tensor._result(-a.data, (a,), backward)
        return out

    def __sub__(self, other):
        return self + (-Tensor.ensure(other))

    def __rsub__(self, other):
        return Tensor.ensure(other) + (-self)

    def __mul__(self, other):
        a, b = self, Tensor.ensure(other)
        out_data = a.data * b.data

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g * np.conj(b.data), a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * np.conj(a.data), b.data.shape))

        out = Tensor._result(out_data, (a, b), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, Tensor.ensure(other)
        out_data = a.data / b.data

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g * np.conj(1.0 / b.data), a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * np.conj(-a.data / (b.data * b.data)),
                                      b.data.shape))

        out = Tensor._result(out_data, (a, b), backward)
        return out

    def __rtruediv__(self, other):
        return Tensor.ensure(other) / self

    def matmul(self, other):
        a, b = self, Tensor.ensure(other)
        out_data = a.data @ b.data

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(g @ np.conj(b.data).swapaxes(-1, -2))
            if b.requires_grad:
                b._accum(np.conj(a.data).swapaxes(-1, -2) @ g)

        out = Tensor._result(out_data, (a, b), backward)
        return out

    __matmul__ = matmul

    # -- structure ---------------------------------------------------------

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def backward():
            a._accum(out.grad.reshape(a.data.shape))

        out = Tensor._result(a.data.reshape(shape), (a,), backward)
        return out

    def sum(self, axis=None, keepdims=False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

        out = Tensor._result(out_data, (a,), backward)
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[i] for i in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- non-holomorphic primitives -----------------------------------------

    def conj(self):
        a = self

        def backward():
            a._accum(np.conj(out.grad))

        out = Tensor._result(np.conj(a.data), (a,), backward)
        return out

    def real(self):
        a = self

        def backward():
            a._accum(out.grad.real.astype(np.complex128))

        out = Tensor._result(a.data.real, (a,), backward)
        return out

    def imag(self):
        a = self

        def backward():
            a._accum(1j * out.grad.real)

        out = Tensor._result(a.data.imag, (a,), backward)
        return out

    @staticmethod
    def compose(re: "Tensor", im: "Tensor") -> "Tensor":
        """Assemble re + i*im from two real tensors."""
        re, im = Tensor.ensure(re), Tensor.ensure(im)
        out_data = re.data.real + 1j * im.data.real

        def backward():
            g = out.grad
            if re.requires_grad:
                re._accum(_unbroadcast(g.real.astype(np.complex128), re.data.shape))
            if im.requires_grad:
                im._accum(_unbroadcast(g.imag.astype(np.complex128), im.data.shape))

        out = Tensor._result(out_data, (re, im), backward)
        return out

    def abs(self, tiny: float = 1e-30):
        a = self
        mod = np.abs(a.data)

        def backward():
            unit = a.data / np.maximum(mod, tiny)
            a._accum(out.grad.real * unit)

        out = Tensor._result(mod, (a,), backward)
        return out

    def abs2(self):
        a = self

        def backward():
            a._accum(2.0 * out.grad.real * a.data)

        out = Tensor._result((a.data * np.conj(a.data)).real, (a,), backward)
        return out

    def crelu(self):
        """ReLU on real and imaginary parts independently."""
        a = self
        out_data = np.maximum(a.data.real, 0.0) + 1j * np.maximum(a.data.imag, 0.0)

        def backward():
            g = out.grad
            gr = g.real * (a.data.real > 0.0)
            gi = g.imag * (a.data.imag > 0.0)
            a._accum(gr + 1j * gi)

        out = Tensor._result(out_data, (a,), backward)
        return out

    # -- real-domain ops (act on the real part, output is real) -------------

    def maximum(self, floor: float):
        a = self
        xr = a.data.real

        def backward():
            a._accum(out.grad.real * (xr > floor))

        out = Tensor._result(np.maximum(xr, floor), (a,), backward)
        return out

    def softplus(self):
        a = self
        xr = a.data.real

        def backward():
            a._accum(out.grad.real * expit(xr))

        out = Tensor._result(np.logaddexp(0.0, xr), (a,), backward)
        return out

    # -- holomorphic elementwise functions -----------------------------------

    def _unary(self, out_data, dfunc):
        a = self

        def backward():
            a._accum(out.grad * np.conj(dfunc()))

        out = Tensor._result(out_data, (a,), backward)
        return out

    def exp(self):
        y = np.exp(self.data)
        return self._unary(y, lambda: y)

    def log(self):
        return self._unary(np.log(self.data), lambda: 1.0 / self.data)

    def sqrt(self):
        y = np.sqrt(self.data)
        return self._unary(y, lambda: 0.5 / y)

    def tanh(self):
        y = np.tanh(self.data)
        return self._unary(y, lambda: 1.0 - y * y)

    def sin(self):
        return self._unary(np.sin(self.data), lambda: np.cos(self.data))

    def cos(self):
        return self._unary(np.cos(self.data), lambda: -np.sin(self.data))
