"""Shared fixtures and numeric oracles for the test suite."""

import numpy as np
import pytest

from radood.cvnn import Tensor


def numeric_gradient(f, arrays, step=1e-6):
    """Central finite differences of a real scalar loss in each array entry.

    ``f`` recomputes the loss from the current (mutated in place) array
    values. For complex arrays the real and imaginary parts are perturbed
    separately and combined as dL/dRe + i dL/dIm, the same convention the
    autodiff engine reports.
    """
    grads = []
    for a in arrays:
        grad = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f()
            flat[i] = orig - step
            down = f()
            value = (up - down) / (2.0 * step)
            if np.iscomplexobj(a):
                flat[i] = orig + 1j * step
                up = f()
                flat[i] = orig - 1j * step
                down = f()
                value = value + 1j * (up - down) / (2.0 * step)
            flat[i] = orig
            gflat[i] = value
        grads.append(grad)
    return grads


def grad_check(build_loss, tensors, step=1e-6, rtol=1e-4, atol=1e-7):
    """Compare autodiff gradients of ``build_loss()`` against differences.

    ``build_loss`` must return a real-valued scalar Tensor computed from
    ``tensors``; it is re-invoked for every perturbation.
    """
    loss = build_loss()
    for t in tensors:
        t.grad = None
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]

    def value():
        return float(build_loss().data.real.reshape(()))

    numeric = numeric_gradient(value, [t.data for t in tensors], step=step)
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a, n, rtol=rtol, atol=atol)


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def random_tensor(gen, shape, requires_grad=True, real=False):
    data = gen.standard_normal(shape)
    if not real:
        data = data + 1j * gen.standard_normal(shape)
    return Tensor(np.asarray(data), requires_grad=requires_grad)
