"""The reverse-mode tape in isolation.

Differentiates a small composite function, verifies the result against
central finite differences, and shows the two failure modes the tape
guards against: backpropagating the same graph twice, and building
graphs inside no_grad.
"""
import numpy as np

from vmt.gradcheck import check_function
from vmt.tensor import GraphError, Tensor, matmul, no_grad, sigmoid

rng = np.random.default_rng(7)
w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)

loss = (sigmoid(matmul(x, w)) * 2.0).sum()
loss.backward()
print(f"loss = {loss.item():.6f}")
print(f"dloss/dw:\n{w.grad.round(4)}")

err = check_function(
    lambda xx, ww: (sigmoid(matmul(xx, ww)) * 2.0).sum(),
    [x.data.astype(np.float64), w.data.astype(np.float64)])
print(f"\nmax relative error vs finite differences: {err:.2e}")

try:
    loss.backward()
except GraphError as e:
    print(f"\nsecond backward refused: {e}")

with no_grad():
    silent = sigmoid(matmul(x, w))
print(f"under no_grad the result records nothing: node={silent.node}, "
      f"requires_grad={silent.requires_grad}")
