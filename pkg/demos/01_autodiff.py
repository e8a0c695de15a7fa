"""Reverse-mode autodiff on a tiny conv layer, checked by finite differences.

The whole network is built from a handful of numpy-backed ops. Here we push
one 3x3 convolution through leaky ReLU and an MSE loss, then compare the
kernel gradient from ``backward()`` with central differences in float64.

Run: python demos/01_autodiff.py
"""

import numpy as np

from lip2tongue import functional as fn
from lip2tongue.tensor import Tensor, no_grad, precision

rng = np.random.default_rng(0)
x = rng.normal(size=(2, 1, 8, 8))
k = rng.normal(size=(4, 1, 3, 3))
target = rng.normal(size=(2, 4, 8, 8))


def loss_of(kernel: Tensor) -> Tensor:
    y = fn.leaky_relu(fn.conv2d(Tensor(x), kernel, padding=1))
    return fn.mse_loss(y, target)


with precision(np.float64):
    kt = Tensor(k, requires_grad=True)
    loss = loss_of(kt)
    loss.backward()
    analytic = kt.grad
    print(f"loss = {loss.item():.6f}")

    eps = 1e-5
    numeric = np.empty_like(k)
    with no_grad():
        for i in np.ndindex(k.shape):
            old = k[i]
            k[i] = old + eps
            up = loss_of(Tensor(k)).item()
            k[i] = old - eps
            down = loss_of(Tensor(k)).item()
            k[i] = old
            numeric[i] = (up - down) / (2 * eps)

rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
print(f"kernel gradient, relative error vs central differences: {rel:.2e}")
