"""Tour of the reverse-mode autodiff engine.

Builds small tensor graphs, runs backward, and verifies one gradient
against a finite-difference estimate.
"""

import numpy as np

from vseg.autodiff import Tensor, conv3d, relu, sigmoid

rng = np.random.default_rng(0)

# -- scalar chain rule -------------------------------------------------
a = Tensor(np.array([2.0]), requires_grad=True)
b = Tensor(np.array([3.0]), requires_grad=True)
loss = (a * b + a ** 2).sum()
loss.backward()
print("f(a,b) = a*b + a^2 at a=2, b=3")
print(f"  df/da = {a.grad[0]} (expected b + 2a = 7)")
print(f"  df/db = {b.grad[0]} (expected a = 2)")

# -- a small convolution + nonlinearity graph --------------------------
x = Tensor(rng.normal(size=(1, 1, 6, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(2, 1, 3, 3, 3)) * 0.1, requires_grad=True)
bias = Tensor(np.zeros(2), requires_grad=True)
y = sigmoid(relu(conv3d(x, w, bias, padding=1)))
loss = y.sum()
loss.backward()
print(f"\nconv3d -> relu -> sigmoid on 6^3 input: output shape {y.data.shape}")
print(f"  |dL/dw| max = {np.abs(w.grad).max():.4f}")

# -- finite-difference spot check --------------------------------------
h = 1e-6
idx = (0, 0, 1, 1, 1)
w_pert = w.data.copy()
w_pert[idx] += h


def loss_at(weights):
    out = sigmoid(relu(conv3d(Tensor(x.data), Tensor(weights), Tensor(bias.data),
                              padding=1)))
    return float(out.sum().data)


fd = (loss_at(w_pert) - loss_at(w.data)) / h
print(f"  analytic dL/dw{idx} = {w.grad[idx]:.8f}")
print(f"  finite diff        = {fd:.8f}")
assert abs(fd - w.grad[idx]) < 1e-4
print("  match within 1e-4")
