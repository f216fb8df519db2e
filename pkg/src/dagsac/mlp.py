"""Dense multilayer perceptrons with hand-derived gradients and Adam.

Everything here is plain float64 numpy: networks are lists of (weight, bias)
pairs, the forward pass keeps a cache, and the backward pass replays the
chain rule layer by layer. Hidden layers are rectified-linear (subgradient 0
at exactly 0), output heads are linear.

Parameters and gradients live in one flat buffer per network, with the layer
arrays as views into it; elementwise math is identical to the per-layer
form, but the optimizer touches each network a handful of times instead of
once per array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 3e-4


class ShapeError(ValueError):
    """Tensor shapes disagree with the network layout."""


def _flat_views(layers: list[tuple[Array, Array]]):
    """Copy (weight, bias) pairs into one flat vector; return it with views.

    Layout: W0 (row-major), b0, W1, b1, ... so the flat order matches
    params_to_vector.
    """
    total = sum(w.size + b.size for w, b in layers)
    flat = np.empty(total, dtype=np.float64)
    views = []
    pos = 0
    for w, b in layers:
        wv = flat[pos:pos + w.size].reshape(w.shape)
        np.copyto(wv, w)
        pos += w.size
        bv = flat[pos:pos + b.size]
        np.copyto(bv, b)
        pos += b.size
        views.append((wv, bv))
    return flat, views


class Mlp:
    """Parameters of a fully connected net: layers[k] = (weight, bias).

    Weights are shaped (out, in); consecutive layers must chain, i.e.
    out of layer k equals in of layer k+1. The arrays in `layers` are views
    into `flat`, so in-place edits through either are visible to both.
    """

    def __init__(self, layers: list[tuple[Array, Array]]):
        for k, (w, b) in enumerate(layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[1] != layers[k - 1][0].shape[0]:
                raise ShapeError(
                    f"layer {k}: in-dim {w.shape[1]} does not chain from "
                    f"layer {k - 1} out-dim {layers[k - 1][0].shape[0]}"
                )
        self.flat, self.layers = _flat_views(
            [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
             for w, b in layers])

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([(w.copy(), b.copy()) for w, b in self.layers])

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())


class Grad:
    """Parameter gradients shaped like an Mlp, plus the input gradient."""

    def __init__(self, layers: list[tuple[Array, Array]], input_grad: Array,
                 _flat: Array | None = None, _views=None):
        if _flat is not None:
            self.flat, self.layers = _flat, _views
        else:
            self.flat, self.layers = _flat_views(layers)
        self.input_grad = input_grad


def _empty_grad_like(net: Mlp) -> Grad:
    total = net.flat.size
    flat = np.empty(total, dtype=np.float64)
    views = []
    pos = 0
    for w, b in net.layers:
        wv = flat[pos:pos + w.size].reshape(w.shape)
        pos += w.size
        bv = flat[pos:pos + b.size]
        pos += b.size
        views.append((wv, bv))
    return Grad([], np.zeros(0), _flat=flat, _views=views)


@dataclass
class ForwardCache:
    inputs: list[Array]   # input to each layer, batched (B, in_k)
    preacts: list[Array]  # pre-activation of each layer, batched (B, out_k)
    squeezed: bool        # original input was 1-D


@dataclass
class AdamState:
    m: Array  # first-moment accumulator, flat, shaped like Mlp.flat
    v: Array  # second-moment accumulator, flat
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


def mlp_init(sizes: list[int], rng: np.random.Generator) -> Mlp:
    """Uniform +/- 1/sqrt(fan_in) weights, zero biases."""
    layers = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        lim = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-lim, lim, size=(n_out, n_in))
        b = np.zeros(n_out)
        layers.append((w, b))
    return Mlp(layers)


def mlp_forward(net: Mlp, x: Array) -> tuple[Array, ForwardCache]:
    """Forward pass. x may be a single vector (n,) or a batch (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != net.in_dim:
        raise ShapeError(f"layer 0 expects input width {net.in_dim}, got {x.shape[1]}")
    inputs, preacts = [], []
    h = x
    last = len(net.layers) - 1
    for k, (w, b) in enumerate(net.layers):
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    out = preacts[-1]
    return (out[0] if squeezed else out), ForwardCache(inputs, preacts, squeezed)


def _check_upstream(net: Mlp, cache: ForwardCache, output_grad: Array) -> Array:
    if len(cache.preacts) != len(net.layers):
        raise ShapeError(
            f"cache has {len(cache.preacts)} layers, network has {len(net.layers)}"
        )
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ShapeError(
            f"layer {len(net.layers) - 1}: upstream grad {g.shape} "
            f"!= output {cache.preacts[-1].shape}"
        )
    return g


def mlp_backward(net: Mlp, cache: ForwardCache, output_grad: Array) -> Grad:
    """Backpropagate d(loss)/d(output) to every parameter and the input.

    Parameter gradients are summed over the batch; the input gradient keeps
    the batch axis (or is a vector when the forward input was one).
    """
    g = _check_upstream(net, cache, output_grad)
    grad = _empty_grad_like(net)
    for k in range(len(net.layers) - 1, -1, -1):
        w, _ = net.layers[k]
        x_k = cache.inputs[k]
        if x_k.shape[1] != w.shape[1]:
            raise ShapeError(f"layer {k}: cached input width {x_k.shape[1]} != {w.shape[1]}")
        gw, gb = grad.layers[k]
        np.matmul(g.T, x_k, out=gw)
        np.sum(g, axis=0, out=gb)
        g = g @ w
        if k > 0:
            g = g * (cache.preacts[k - 1] > 0.0)
    grad.input_grad = g[0] if cache.squeezed else g
    return grad


def mlp_input_grad(net: Mlp, cache: ForwardCache, output_grad: Array) -> Array:
    """Input gradient only, skipping the parameter-gradient matmuls."""
    g = _check_upstream(net, cache, output_grad)
    for k in range(len(net.layers) - 1, -1, -1):
        g = g @ net.layers[k][0]
        if k > 0:
            g = g * (cache.preacts[k - 1] > 0.0)
    return g[0] if cache.squeezed else g


def adam_init(net: Mlp, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
              eps: float = ADAM_EPS) -> AdamState:
    return AdamState(m=np.zeros_like(net.flat), v=np.zeros_like(net.flat),
                     step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(net: Mlp, grad: Grad, state: AdamState, lr: float = DEFAULT_LR
              ) -> tuple[Mlp, AdamState]:
    """One Adam update with bias correction. Mutates net and state in place."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if grad.flat.size != net.flat.size or len(grad.layers) != len(net.layers):
        raise ShapeError("gradient layout does not match network")
    for k, (gw, gb) in enumerate(grad.layers):
        if gw.shape != net.layers[k][0].shape or gb.shape != net.layers[k][1].shape:
            raise ShapeError(f"layer {k}: gradient shape does not match parameters")
    if not np.isfinite(grad.flat).all():
        for k, (gw, gb) in enumerate(grad.layers):
            if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
                raise ValueError(f"non-finite gradient at layer {k}; update rejected")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    g = grad.flat
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    net.flat -= lr * (state.m / c1) / (np.sqrt(state.v / c2) + state.eps)
    return net, state


def finite_diff_grad(f, x: Array, h: float = 1e-5) -> Array:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        hi = f(x + e)
        lo = f(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"function not finite at coordinate {k}")
        g.flat[k] = (hi - lo) / (2.0 * h)
    return g


def params_to_vector(net: Mlp) -> Array:
    return net.flat.copy()


def vector_to_params(net: Mlp, vec: Array) -> Mlp:
    """New Mlp with the same layout as `net` and entries taken from `vec`."""
    if vec.size != net.flat.size:
        raise ShapeError(f"vector has {vec.size} entries, network needs {net.flat.size}")
    out = []
    pos = 0
    for w, b in net.layers:
        nw = vec[pos:pos + w.size].reshape(w.shape).copy()
        pos += w.size
        nb = vec[pos:pos + b.size].copy()
        pos += b.size
        out.append((nw, nb))
    return Mlp(out)


def grad_norm(grad: Grad) -> float:
    return float(np.sqrt(grad.flat @ grad.flat))
