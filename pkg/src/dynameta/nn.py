"""Minimal fully connected network stack in float64 numpy.

Forward pass, exact reverse-mode gradients (including layer norm), MSE and
binary-cross-entropy-with-logits losses, and Adam. Hidden layers are ReLU,
the head is affine; when layer norm is enabled it is applied to each hidden
pre-activation, per sample over the layer's units.

All parameters of a network live in one flat float64 vector; per-layer
weights and biases are reshaped views into it. Gradients come back as a
single matching vector, which keeps the Adam update a handful of whole-vector
operations no matter how many layers there are. These networks run millions
of minibatch-32 updates per training run, so the per-call overhead matters
more than asymptotics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5

MSE = "mse"
BCE_WITH_LOGITS = "bce_logits"


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    """Training diverged: the loss or its inputs stopped being finite."""


@dataclass
class Layer:
    w: np.ndarray  # view into the flat vector, shape (out, in)
    b: np.ndarray  # view, shape (out,)
    gain: np.ndarray | None  # layer-norm gamma, hidden layers only
    offset: np.ndarray | None  # layer-norm beta
    activation: str  # "relu" | "linear"


@dataclass
class Mlp:
    flat: np.ndarray
    layers: list[Layer]
    layer_sizes: list[int]
    layer_norm: bool


@dataclass
class LossSpec:
    kind: str  # MSE | BCE_WITH_LOGITS
    target: np.ndarray


@dataclass
class AdamState:
    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _flat_size(layer_sizes: list[int], layer_norm: bool) -> int:
    total = 0
    n = len(layer_sizes) - 1
    for i in range(n):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        total += fan_out * fan_in + fan_out
        if layer_norm and i < n - 1:
            total += 2 * fan_out
    return total


def _build_views(flat: np.ndarray, layer_sizes: list[int], layer_norm: bool) -> list[Layer]:
    layers = []
    n = len(layer_sizes) - 1
    pos = 0
    for i in range(n):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        w = flat[pos: pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = flat[pos: pos + fan_out]
        pos += fan_out
        hidden = i < n - 1
        gain = offset = None
        if layer_norm and hidden:
            gain = flat[pos: pos + fan_out]
            pos += fan_out
            offset = flat[pos: pos + fan_out]
            pos += fan_out
        layers.append(Layer(w, b, gain, offset, "relu" if hidden else "linear"))
    return layers


def mlp_init(layer_sizes: list[int], layer_norm: bool, rng: np.random.Generator) -> Mlp:
    """Uniform fan-in initialisation: W ~ U(-1/sqrt(in), 1/sqrt(in)), zero bias."""
    if len(layer_sizes) < 2:
        raise ShapeMismatch("need at least input and output dims")
    flat = np.zeros(_flat_size(layer_sizes, layer_norm))
    layers = _build_views(flat, layer_sizes, layer_norm)
    for l in layers:
        bound = 1.0 / np.sqrt(l.w.shape[1])
        l.w[...] = rng.uniform(-bound, bound, size=l.w.shape)
        if l.gain is not None:
            l.gain[...] = 1.0
    return Mlp(flat, layers, list(layer_sizes), layer_norm)


def copy_params(src: Mlp) -> Mlp:
    flat = src.flat.copy()
    return Mlp(flat, _build_views(flat, src.layer_sizes, src.layer_norm),
               list(src.layer_sizes), src.layer_norm)


def assign_params(dst: Mlp, src: Mlp) -> None:
    """Copy src's parameter values into dst without reallocating views."""
    if dst.flat.shape != src.flat.shape:
        raise ShapeMismatch("parameter vectors differ in size")
    dst.flat[...] = src.flat


def param_arrays(net: Mlp) -> list[np.ndarray]:
    """Live parameter views in the canonical traversal order."""
    out: list[np.ndarray] = []
    for l in net.layers:
        out.append(l.w)
        out.append(l.b)
        if l.gain is not None:
            out.append(l.gain)
            out.append(l.offset)
    return out


def forward(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Inference-only forward pass (no gradient cache)."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(
            f"input shape {x.shape} incompatible with first layer dim {net.layer_sizes[0]}")
    for l in net.layers:
        z = x @ l.w.T
        z += l.b
        if l.gain is not None:
            inv_h = 1.0 / z.shape[1]
            mu = np.add.reduce(z, axis=1)
            mu *= inv_h
            z -= mu[:, None]
            var = np.add.reduce(z * z, axis=1)
            var *= inv_h
            z *= (1.0 / np.sqrt(var + LN_EPS))[:, None]
            z *= l.gain
            z += l.offset
        if l.activation == "relu":
            np.maximum(z, 0.0, out=z)
        x = z
    return x


def forward_cached(net: Mlp, batch: np.ndarray):
    """Forward pass returning the output and the cache backward() needs."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(
            f"input shape {x.shape} incompatible with first layer dim {net.layer_sizes[0]}")
    cache = []
    for l in net.layers:
        z = x @ l.w.T
        z += l.b
        step = {"x": x}
        if l.gain is not None:
            # ufunc.reduce instead of ndarray.mean/var: this runs millions
            # of times on 32-row batches and the wrapper overhead dominates
            inv_h = 1.0 / z.shape[1]
            mu = np.add.reduce(z, axis=1)
            mu *= inv_h
            centered = z - mu[:, None]
            var = np.add.reduce(centered * centered, axis=1)  # population
            var *= inv_h
            inv_std = 1.0 / np.sqrt(var + LN_EPS)
            xhat = centered * inv_std[:, None]
            z = xhat * l.gain
            z += l.offset
            step["xhat"] = xhat
            step["inv_std"] = inv_std
        if l.activation == "relu":
            step["pre_act"] = z
            z = np.maximum(z, 0.0)
        cache.append(step)
        x = z
    return x, cache


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_and_grad(kind: str, pred: np.ndarray, target: np.ndarray):
    """Mean-over-all-elements loss and its gradient w.r.t. pred."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeMismatch(f"target shape {target.shape} != output shape {pred.shape}")
    n_elem = pred.size
    if kind == MSE:
        diff = pred - target
        flat = diff.ravel()
        loss = float(flat @ flat) / n_elem
        grad = diff
        grad *= 2.0 / n_elem
    elif kind == BCE_WITH_LOGITS:
        z, t = pred, target
        # stable softplus form of -t*log(sig(z)) - (1-t)*log(1-sig(z))
        loss = float(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))
        grad = _sigmoid(z) - t
        grad /= n_elem
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"{kind} loss is not finite")
    return loss, grad


def loss_value(kind: str, pred: np.ndarray, target: np.ndarray) -> float:
    """Evaluate a loss without gradients (validation passes)."""
    value, _ = _loss_and_grad(kind, pred, target)
    return value


def backward(net: Mlp, batch: np.ndarray, loss: LossSpec):
    """Mean loss over the batch and exact gradients for every parameter.

    Returns ``(loss_value, grads)`` with ``grads`` a flat vector matching
    ``net.flat``.
    """
    pred, cache = forward_cached(net, batch)
    return backward_from(net, cache, pred, loss)


def backward_from(net: Mlp, cache, pred: np.ndarray, loss: LossSpec):
    """Backward pass reusing an existing forward cache (see forward_cached)."""
    loss_value, d = _loss_and_grad(loss.kind, pred, loss.target)
    grads = np.empty_like(net.flat)
    grad_views = _build_views(grads, net.layer_sizes, net.layer_norm)

    for l, gl, step in zip(reversed(net.layers), reversed(grad_views), reversed(cache)):
        if l.activation == "relu":
            d = d * (step["pre_act"] > 0.0)
        if l.gain is not None:
            xhat, inv_std = step["xhat"], step["inv_std"]
            np.add.reduce(d * xhat, axis=0, out=gl.gain)
            np.add.reduce(d, axis=0, out=gl.offset)
            dxhat = d * l.gain
            # standard layer-norm backward, per sample over the units
            inv_h = 1.0 / dxhat.shape[1]
            sum_dx = np.add.reduce(dxhat, axis=1)
            sum_dx *= inv_h
            sum_dx_xhat = np.add.reduce(dxhat * xhat, axis=1)
            sum_dx_xhat *= inv_h
            d = dxhat - sum_dx[:, None]
            d -= xhat * sum_dx_xhat[:, None]
            d *= inv_std[:, None]
        np.matmul(d.T, step["x"], out=gl.w)
        np.add.reduce(d, axis=0, out=gl.b)
        d = d @ l.w
    return loss_value, grads


def adam_init(net: Mlp, learning_rate: float) -> AdamState:
    return AdamState(
        learning_rate=learning_rate,
        m=np.zeros_like(net.flat),
        v=np.zeros_like(net.flat),
    )


def adam_step(opt: AdamState, net: Mlp, grads: np.ndarray) -> None:
    """Bias-corrected Adam update, applied to the network in place."""
    if grads.shape != net.flat.shape:
        raise ShapeMismatch("gradient vector does not match parameter vector")
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    m, v = opt.m, opt.v
    m *= b1
    m += (1.0 - b1) * grads
    v *= b2
    v += (1.0 - b2) * (grads * grads)
    denom = np.sqrt(v / (1.0 - b2**opt.t))
    denom += opt.eps
    step = m / denom
    step *= opt.learning_rate / (1.0 - b1**opt.t)
    net.flat -= step


def mlp_to_json(net: Mlp) -> dict:
    doc = {
        "layer_sizes": list(net.layer_sizes),
        "layer_norm": net.layer_norm,
        "activations": [l.activation for l in net.layers],
        "layers": [],
    }
    for l in net.layers:
        doc["layers"].append({
            "w": l.w.tolist(),
            "b": l.b.tolist(),
            "gain": None if l.gain is None else l.gain.tolist(),
            "offset": None if l.offset is None else l.offset.tolist(),
        })
    return doc


def mlp_from_json(doc: dict) -> Mlp:
    sizes = list(doc["layer_sizes"])
    layer_norm = bool(doc["layer_norm"])
    flat = np.zeros(_flat_size(sizes, layer_norm))
    layers = _build_views(flat, sizes, layer_norm)
    for l, spec, act in zip(layers, doc["layers"], doc["activations"]):
        l.w[...] = np.asarray(spec["w"], dtype=np.float64)
        l.b[...] = np.asarray(spec["b"], dtype=np.float64)
        l.activation = act
        if l.gain is not None:
            l.gain[...] = np.asarray(spec["gain"], dtype=np.float64)
            l.offset[...] = np.asarray(spec["offset"], dtype=np.float64)
    return Mlp(flat, layers, sizes, layer_norm)
