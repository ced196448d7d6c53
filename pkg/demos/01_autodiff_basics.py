#!/usr/bin/env python3
"""Tour of the tensor engine: forward ops, gradients, emulated half precision."""

import numpy as np

from lanekit import tensor as T
from lanekit.tensor import F16E, F32, F64, Tensor

# --- forward ops --------------------------------------------------------
x = Tensor([[1.0, -2.0], [3.0, 0.5]], F64, requires_grad=True)
w = Tensor([[0.5, 1.0], [-1.0, 2.0]], F64, requires_grad=True)
out = T.relu(T.matmul(x, w))
print("relu(x @ w) =\n", out.data)

# --- reverse-mode gradients ----------------------------------------------
loss = (out * out).mean()
T.backward(loss)
print("d loss / d x =\n", x.grad)


def loss_at(x_vals):
    with T.no_grad():
        y = T.relu(T.matmul(Tensor(x_vals, F64), Tensor(w.data, F64)))
        return (y * y).mean().item()


eps = 1e-6
xp, xm = x.data.copy(), x.data.copy()
xp[0, 0] += eps
xm[0, 0] -= eps
numeric = (loss_at(xp) - loss_at(xm)) / (2 * eps)
print(f"finite difference at [0,0]: {numeric:.9f} vs tape {x.grad[0, 0]:.9f}")

# --- emulated binary16 ----------------------------------------------------
vals = Tensor([1.0, 2049.0, 70000.0, 6.1e-5], F32)
half = T.cast(vals, F16E)
print("\nfloat32  :", vals.data)
print("binary16 :", half.data, "(2049 rounds to even, 70000 overflows)")

a = Tensor(np.linspace(0, 1, 5), F16E)
b = Tensor(np.linspace(1, 2, 5), F16E)
prod = a * b
print("product stays exactly representable in half:",
      np.array_equal(prod.data, prod.data.astype(np.float16).astype(np.float32)))
