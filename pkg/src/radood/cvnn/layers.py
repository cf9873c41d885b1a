"""Complex-valued network layers.

Five layer kinds: dense, strided 1-d convolution, its transpose, complex
batch normalization, and CReLU. Weights are complex tensors initialised with
independent real and imaginary parts ~ N(0, 1/(2*fan_in)) so the complex
variance is 1/fan_in. Convolutions slide over the last axis of (batch,
channels, length) arrays; backward rules follow the same conjugate-adjoint
convention as the tensor ops.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = [
    "Layer",
    "ComplexDense",
    "ComplexConv1d",
    "ComplexConvTranspose1d",
    "ComplexBatchNorm",
    "CRelu",
    "layer_from_spec",
    "LAYER_KINDS",
]

LAYER_KINDS = (
    "complex_dense",
    "complex_conv1d",
    "complex_conv1d_transposed",
    "complex_batch_norm",
    "crelu",
)


def _require_positive(**sizes):
    for name, value in sizes.items():
        if int(value) != value or value <= 0:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")


def _init_weight(shape, fan_in: int, gen: np.random.Generator) -> np.ndarray:
    scale = np.sqrt(1.0 / (2.0 * fan_in))
    return scale * (gen.standard_normal(shape) + 1j * gen.standard_normal(shape))


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int, padding: int) -> Tensor:
    """y[n,o,t] = sum_{c,k} w[o,c,k] x[n,c,s*t+k-p] + b[o]."""
    batch, cin, length = x.data.shape
    cout, cin_w, kernel = w.data.shape
    if cin_w != cin:
        raise ValueError(f"conv expects {cin_w} input channels, got {cin}")
    if length + 2 * padding < kernel:
        raise ValueError("input shorter than kernel after padding")
    lout = (length + 2 * padding - kernel) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    out_data = np.tile(b.data[None, :, None], (batch, 1, lout))
    for k in range(kernel):
        tap = xp[:, :, k:k + stride * (lout - 1) + 1:stride]
        out_data += np.einsum("oc,nct->not", w.data[:, :, k], tap)

    def backward():
        g = out.grad
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(kernel):
                gxp[:, :, k:k + stride * (lout - 1) + 1:stride] += np.einsum(
                    "oc,not->nct", np.conj(w.data[:, :, k]), g)
            x._accum(gxp[:, :, padding:padding + length])
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for k in range(kernel):
                tap = xp[:, :, k:k + stride * (lout - 1) + 1:stride]
                gw[:, :, k] = np.einsum("not,nct->oc", g, np.conj(tap))
            w._accum(gw)
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 2)))

    out = Tensor._result(out_data, (x, w, b), backward)
    return out


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor, stride: int,
                     padding: int, output_padding: int) -> Tensor:
    """Transpose of conv1d: y[n,o,s*t+k-p] += w[c,o,k] x[n,c,t], then bias."""
    batch, cin, lin = x.data.shape
    cin_w, cout, kernel = w.data.shape
    if cin_w != cin:
        raise ValueError(f"transposed conv expects {cin_w} input channels, got {cin}")
    lout = (lin - 1) * stride - 2 * padding + kernel + output_padding
    if lout <= 0:
        raise ValueError("transposed conv output length is not positive")
    lfull = (lin - 1) * stride + kernel + output_padding
    yfull = np.zeros((batch, cout, lfull), dtype=np.complex128)
    for k in range(kernel):
        yfull[:, :, k:k + stride * (lin - 1) + 1:stride] += np.einsum(
            "co,nct->not", w.data[:, :, k], x.data)
    out_data = yfull[:, :, padding:padding + lout] + b.data[None, :, None]

    def backward():
        gfull = np.zeros_like(yfull)
        gfull[:, :, padding:padding + lout] = out.grad
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for k in range(kernel):
                gslice = gfull[:, :, k:k + stride * (lin - 1) + 1:stride]
                gx += np.einsum("co,not->nct", np.conj(w.data[:, :, k]), gslice)
            x._accum(gx)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for k in range(kernel):
                gslice = gfull[:, :, k:k + stride * (lin - 1) + 1:stride]
                gw[:, :, k] = np.einsum("nct,not->co", np.conj(x.data), gslice)
            w._accum(gw)
        if b.requires_grad:
            b._accum(out.grad.sum(axis=(0, 2)))

    out = Tensor._result(out_data, (x, w, b), backward)
    return out


class Layer:
    def parameters(self) -> list:
        return []

    def state_arrays(self) -> dict:
        """Name -> ndarray for everything a checkpoint must carry."""
        return {}

    def load_state(self, arrays: dict):
        for name, value in self.state_arrays().items():
            incoming = np.asarray(arrays[name])
            if incoming.shape != value.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{incoming.shape} vs {value.shape}")
            value[...] = incoming

    def spec(self) -> dict:
        raise NotImplementedError

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        raise NotImplementedError


class ComplexDense(Layer):
    def __init__(self, in_features: int, out_features: int,
                 gen: np.random.Generator | None = None):
        _require_positive(in_features=in_features, out_features=out_features)
        self.in_features = in_features
        self.out_features = out_features
        gen = gen or np.random.default_rng(0)
        self.weight = Tensor(_init_weight((out_features, in_features), in_features, gen),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=np.complex128),
                           requires_grad=True)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        w, b = self.weight, self.bias
        out_data = x.data @ w.data.T + b.data

        def backward():
            g = out.grad
            if x.requires_grad:
                x._accum(g @ np.conj(w.data))
            if w.requires_grad:
                w._accum(g.T @ np.conj(x.data))
            if b.requires_grad:
                b._accum(g.sum(axis=0))

        out = Tensor._result(out_data, (x, w, b), backward)
        return out

    def parameters(self):
        return [self.weight, self.bias]

    def state_arrays(self):
        return {"weight": self.weight.data, "bias": self.bias.data}

    def spec(self):
        return {"kind": "complex_dense", "in_features": self.in_features,
                "out_features": self.out_features}


class ComplexConv1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0,
                 gen: np.random.Generator | None = None):
        _require_positive(in_channels=in_channels, out_channels=out_channels,
                          kernel=kernel, stride=stride)
        if padding < 0:
            raise ValueError("padding must be non-negative")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        gen = gen or np.random.default_rng(0)
        fan_in = in_channels * kernel
        self.weight = Tensor(_init_weight((out_channels, in_channels, kernel),
                                          fan_in, gen), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.complex128),
                           requires_grad=True)

    def out_length(self, length: int) -> int:
        if length + 2 * self.padding < self.kernel:
            raise ValueError("input shorter than kernel after padding")
        return (length + 2 * self.padding - self.kernel) // self.stride + 1

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [self.weight, self.bias]

    def state_arrays(self):
        return {"weight": self.weight.data, "bias": self.bias.data}

    def spec(self):
        return {"kind": "complex_conv1d", "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding}


class ComplexConvTranspose1d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, output_padding: int = 0,
                 gen: np.random.Generator | None = None):
        _require_positive(in_channels=in_channels, out_channels=out_channels,
                          kernel=kernel, stride=stride)
        if padding < 0 or output_padding < 0:
            raise ValueError("padding values must be non-negative")
        if output_padding >= stride:
            raise ValueError("output_padding must be smaller than stride")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        self.padding, self.output_padding = padding, output_padding
        gen = gen or np.random.default_rng(0)
        fan_in = in_channels * kernel
        self.weight = Tensor(_init_weight((in_channels, out_channels, kernel),
                                          fan_in, gen), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=np.complex128),
                           requires_grad=True)

    def out_length(self, length: int) -> int:
        lout = ((length - 1) * self.stride - 2 * self.padding
                + self.kernel + self.output_padding)
        if lout <= 0:
            raise ValueError("transposed conv output length is not positive")
        return lout

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return conv_transpose1d(x, self.weight, self.bias, self.stride,
                                self.padding, self.output_padding)

    def parameters(self):
        return [self.weight, self.bias]

    def state_arrays(self):
        return {"weight": self.weight.data, "bias": self.bias.data}

    def spec(self):
        return {"kind": "complex_conv1d_transposed",
                "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding,
                "output_padding": self.output_padding}


class ComplexBatchNorm(Layer):
    """Whitens each channel's (re, im) pair to identity covariance, then
    applies a learned 2x2 symmetric scale and complex shift.

    The whitening matrix is the inverse matrix square root of the 2x2
    covariance C = [[vrr, vri], [vri, vii]] + eps*I, computed in closed form:
    with s = sqrt(det C) and t = tr C, C^{-1/2} = [[c+s, -b], [-b, a+s]] /
    (s * sqrt(t + 2s)). Running estimates are used at inference time.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        _require_positive(channels=channels)
        self.channels = channels
        self.momentum = float(momentum)
        self.eps = float(eps)
        # learned affine: symmetric 2x2 gain (grr, gri, gii) and complex shift
        rt2 = 1.0 / np.sqrt(2.0)
        self.gamma_rr = Tensor(np.full(channels, rt2), requires_grad=True)
        self.gamma_ii = Tensor(np.full(channels, rt2), requires_grad=True)
        self.gamma_ri = Tensor(np.zeros(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.complex128),
                           requires_grad=True)
        # running statistics (not trained)
        self.run_mean = np.zeros(channels, dtype=np.complex128)
        self.run_vrr = np.full(channels, 0.5)
        self.run_vii = np.full(channels, 0.5)
        self.run_vri = np.zeros(channels)

    def _axes_shape(self, x: Tensor):
        if x.data.ndim == 2:            # (batch, channels)
            return (0,), (1, self.channels)
        if x.data.ndim == 3:            # (batch, channels, length)
            return (0, 2), (1, self.channels, 1)
        raise ValueError("batch norm expects 2-d or 3-d input")

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        axes, stat_shape = self._axes_shape(x)
        if x.data.shape[1] != self.channels:
            raise ValueError(f"batch norm expects {self.channels} channels, "
                             f"got {x.data.shape[1]}")
        if training:
            mean = x.mean(axis=axes, keepdims=True)
            ctr = x - mean
            re, im = ctr.real(), ctr.imag()
            vrr = (re * re).mean(axis=axes, keepdims=True) + self.eps
            vii = (im * im).mean(axis=axes, keepdims=True) + self.eps
            vri = (re * im).mean(axis=axes, keepdims=True)
            m = self.momentum
            self.run_mean = ((1 - m) * self.run_mean
                             + m * mean.data.reshape(self.channels))
            self.run_vrr = ((1 - m) * self.run_vrr
                            + m * vrr.data.real.reshape(self.channels))
            self.run_vii = ((1 - m) * self.run_vii
                            + m * vii.data.real.reshape(self.channels))
            self.run_vri = ((1 - m) * self.run_vri
                            + m * vri.data.real.reshape(self.channels))
        else:
            mean = Tensor(self.run_mean.reshape(stat_shape))
            ctr = x - mean
            re, im = ctr.real(), ctr.imag()
            vrr = Tensor((self.run_vrr + self.eps).reshape(stat_shape))
            vii = Tensor((self.run_vii + self.eps).reshape(stat_shape))
            vri = Tensor(self.run_vri.reshape(stat_shape))
        # closed-form inverse sqrt of [[vrr, vri], [vri, vii]]
        det = vrr * vii - vri * vri
        s = det.sqrt()
        denom = 1.0 / (s * (vrr + vii + 2.0 * s).sqrt())
        wrr = (vii + s) * denom
        wii = (vrr + s) * denom
        wri = (0.0 - vri) * denom
        zre = wrr * re + wri * im
        zim = wri * re + wii * im
        grr = self.gamma_rr.reshape(stat_shape)
        gii = self.gamma_ii.reshape(stat_shape)
        gri = self.gamma_ri.reshape(stat_shape)
        yre = grr * zre + gri * zim
        yim = gri * zre + gii * zim
        return Tensor.compose(yre, yim) + self.beta.reshape(stat_shape)

    def parameters(self):
        return [self.gamma_rr, self.gamma_ii, self.gamma_ri, self.beta]

    def state_arrays(self):
        return {"gamma_rr": self.gamma_rr.data, "gamma_ii": self.gamma_ii.data,
                "gamma_ri": self.gamma_ri.data, "beta": self.beta.data,
                "run_mean": self.run_mean, "run_vrr": self.run_vrr,
                "run_vii": self.run_vii, "run_vri": self.run_vri}

    def spec(self):
        return {"kind": "complex_batch_norm", "channels": self.channels,
                "momentum": self.momentum, "eps": self.eps}


class CRelu(Layer):
    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return x.crelu()

    def spec(self):
        return {"kind": "crelu"}


_FACTORY = {
    "complex_dense": lambda s, gen: ComplexDense(
        s["in_features"], s["out_features"], gen=gen),
    "complex_conv1d": lambda s, gen: ComplexConv1d(
        s["in_channels"], s["out_channels"], s["kernel"],
        stride=s.get("stride", 1), padding=s.get("padding", 0), gen=gen),
    "complex_conv1d_transposed": lambda s, gen: ComplexConvTranspose1d(
        s["in_channels"], s["out_channels"], s["kernel"],
        stride=s.get("stride", 1), padding=s.get("padding", 0),
        output_padding=s.get("output_padding", 0), gen=gen),
    "complex_batch_norm": lambda s, gen: ComplexBatchNorm(
        s["channels"], momentum=s.get("momentum", 0.1), eps=s.get("eps", 1e-5)),
    "crelu": lambda s, gen: CRelu(),
}


def layer_from_spec(spec: dict, gen: np.random.Generator | None = None) -> Layer:
    kind = spec.get("kind")
    if kind not in _FACTORY:
        raise ValueError(f"unknown layer kind {kind!r}")
    return _FACTORY[kind](spec, gen)
