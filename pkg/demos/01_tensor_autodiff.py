#!/usr/bin/env python3
"""Tour of the tensor core: tape-based autodiff and the dilated convolution.

Run:  python demos/01_tensor_autodiff.py
"""

import numpy as np

from xmtc.tensor import (
    GradTape,
    Tensor,
    conv1d_dilated,
    grad_check,
    matmul,
    relu,
    same_padding,
    sigmoid,
    softmax,
    tensor_sum,
)

print("=" * 60)
print("1. Tensors and the gradient tape")
print("=" * 60)

x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True, name="x")
w = Tensor(np.array([[0.5], [-0.25]]), requires_grad=True, name="w")

with GradTape() as tape:
    y = relu(matmul(x, w))
    loss = tensor_sum(y)
    tape.backward(loss)

print("y        =", y.data.ravel())
print("dloss/dx =\n", x.grad)
print("dloss/dw =", w.grad.ravel())

print()
print("=" * 60)
print("2. Dilated convolution arithmetic")
print("=" * 60)

# A kernel of size K with dilation r spans r*(K-1)+1 positions.  The
# length-preserving padding is r*(K-1)/2, e.g. K=9, r=4 -> padding 16.
for k, r in [(9, 1), (9, 2), (9, 4)]:
    print(f"kernel {k}, dilation {r}: padding {same_padding(k, r)}")

signal = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
box = Tensor(np.ones((3, 1, 1)))  # sums three taps spaced `dilation` apart
out = conv1d_dilated(signal, box, dilation=2, padding=2)
print("conv([1,2,3,4], ones(3), dilation=2, same padding) ->", out.data.ravel())

print()
print("=" * 60)
print("3. Numerically stable activations")
print("=" * 60)

print("softmax([1000, 1000])  =", softmax(Tensor([1000.0, 1000.0]), axis=0).data)
print("sigmoid(+-800)         =", sigmoid(Tensor([-800.0, 800.0])).data)

print()
print("=" * 60)
print("4. Finite-difference gradient verification")
print("=" * 60)

rng = np.random.default_rng(0)
a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
report = grad_check(matmul, [a, b], tol=1e-6)
print(f"matmul: max relative error {report.max_rel_err:.2e} (tolerance {report.tol})")

filters = Tensor(rng.standard_normal((3, 4, 4)), requires_grad=True)
seq = Tensor(rng.standard_normal((7, 4)), requires_grad=True)
report = grad_check(lambda s, f: conv1d_dilated(s, f, 2, 2), [seq, filters], tol=1e-6)
print(f"conv1d: max relative error {report.max_rel_err:.2e} (tolerance {report.tol})")
