"""Tour of the numeric substrate: MLP forward/backward and Adam.

Builds a small network, checks its hand-derived gradients against central
finite differences, and watches Adam pull a regression loss down.
"""

import numpy as np

from dagsac.mlp import (
    adam_init,
    adam_step,
    finite_diff_grad,
    mlp_backward,
    mlp_forward,
    mlp_init,
    params_to_vector,
    vector_to_params,
)

rng = np.random.default_rng(0)

net = mlp_init([3, 16, 16, 2], rng)
x = rng.standard_normal(3)
y, cache = mlp_forward(net, x)
print("forward:", x, "->", y)

# gradient of a scalar readout, checked coordinate by coordinate
readout = rng.standard_normal(2)
grad = mlp_backward(net, cache, readout)
analytic = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grad.layers])


def loss_at(vec):
    out, _ = mlp_forward(vector_to_params(net, vec), x)
    return float(readout @ out)


fd = finite_diff_grad(loss_at, params_to_vector(net), h=1e-5)
rel = np.abs(fd - analytic) / np.maximum(np.abs(fd), 1e-6)
print(f"finite-difference check over {fd.size} parameters: "
      f"max relative error {rel.max():.2e}")

# fit a tiny regression target with Adam
targets = rng.standard_normal((64, 2))
inputs = rng.standard_normal((64, 3))
state = adam_init(net)
for step in range(400):
    preds, cache = mlp_forward(net, inputs)
    resid = preds - targets
    grad = mlp_backward(net, cache, resid / 64.0)
    adam_step(net, grad, state, lr=1e-2)
    if step % 100 == 0:
        print(f"step {step:4d}  mse {float((resid ** 2).mean()):.4f}")
preds, _ = mlp_forward(net, inputs)
print("final mse:", float(((preds - targets) ** 2).mean()))
