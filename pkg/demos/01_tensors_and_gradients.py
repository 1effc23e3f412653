"""Tensors, reverse-mode gradients, and finite-difference verification.

Everything in this library runs on a small numpy-backed tensor type with an
implicit tape: each op links to its parents, and backward() replays the graph
in reverse topological order.
"""
import numpy as np

from cssl import autodiff as ad
from cssl.autodiff import Tensor, backward, grad_check
from cssl.optim import SGD, LRSchedule, ParamGroup

# A parameter tensor opts into gradients; plain data does not.
w = Tensor(np.array([[0.5, -0.3], [0.8, 0.1]]), requires_grad=True)
x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))

# Forward: a tiny affine + relu + reduction pipeline.
h = ad.relu(ad.matmul(x, w))
loss = ad.mean(h * h)
print("loss value:", loss.item())

# Reverse sweep: every tensor that requires grad now holds d(loss)/d(tensor).
backward(loss)
print("dloss/dw:\n", w.grad)

# Gradients accumulate across calls until cleared, mirroring optimizer steps.
backward(loss)
print("doubled after second backward:", np.allclose(w.grad.mean(), 2 * w.grad.mean() / 2))

# Central finite differences confirm any scalar-valued composite.
w2 = Tensor(np.random.default_rng(0).standard_normal((4, 3)), requires_grad=True)
err = grad_check(lambda p: ad.sum_(ad.exp(ad.matmul(Tensor(np.ones((2, 4))), p))), [w2])
print("max relative gradient error:", err)

# SGD with momentum plus a cosine schedule drives the training loops.
sched = LRSchedule("cosine", initial=0.06, anneal_steps=100, floor=0.02)
opt = SGD([ParamGroup("all", [w2])], momentum=0.9, weight_decay=1e-4)
for step in range(100):
    target = Tensor(np.ones_like(w2.data))
    backward(ad.sum_((w2 - target) ** 2))
    opt.step({"all": sched.rate(step)})
print("after 100 cosine-annealed steps, distance to optimum:",
      float(np.abs(w2.data - 1).max()))
