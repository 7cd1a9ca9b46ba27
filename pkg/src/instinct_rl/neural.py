"""Minimal dense-network core: MLPs with manual backprop, Adam, Gaussian math.

Everything runs in float64 numpy. Networks are fixed-shape multilayer
perceptrons with Tanh hidden activations and an optional elementwise
``scale * tanh(z) + offset`` output transform; that covers every head this
project needs (linear critics, bounded action means, a [0, 1] modulation
unit), so there is no general autodiff graph.

All functions are pure: they never mutate their inputs and are safe to call
from concurrent workers as long as each worker owns its rng.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, NumericalError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Parameters of a fully connected net with Tanh hidden layers.

    ``weights[k]`` has shape (fan_in, fan_out) and ``biases[k]`` shape
    (fan_out,). With ``out_scale`` set, the final layer output z becomes
    ``out_scale * tanh(z) + out_offset`` (elementwise); otherwise it is
    linear. Adjacent layer dimensions must chain.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_scale: np.ndarray | None = None
    out_offset: np.ndarray | None = None

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            out_scale=None if self.out_scale is None else self.out_scale.copy(),
            out_offset=None if self.out_offset is None else self.out_offset.copy(),
        )


@dataclass
class GradientBundle:
    """Per-parameter gradients mirroring an MlpParams, plus the input grad."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray


@dataclass
class AdamState:
    """First/second-moment accumulators for a flat list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def mlp_init(
    layer_sizes,
    rng: np.random.Generator,
    out_scale=None,
    out_offset=None,
) -> MlpParams:
    """Kaiming-uniform initialization: W ~ U(-b, b), b = sqrt(6 / fan_in).

    Biases start at zero. ``layer_sizes`` must contain at least an input and
    an output dimension, all positive.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ConfigurationError(f"need at least 2 layer sizes, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ConfigurationError(f"layer sizes must be positive, got {sizes}")
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    scale = None if out_scale is None else np.asarray(out_scale, dtype=float) * np.ones(sizes[-1])
    offset = None
    if scale is not None:
        offset = np.zeros(sizes[-1]) if out_offset is None else (
            np.asarray(out_offset, dtype=float) * np.ones(sizes[-1])
        )
    elif out_offset is not None:
        raise ConfigurationError("out_offset requires out_scale")
    return MlpParams(weights=weights, biases=biases, out_scale=scale, out_offset=offset)


# Fixed-order affine kernels. Both accumulate over the fan-in index in the
# same sequential order, so a row's result is bit-identical whether it is
# pushed through alone or inside any batch (BLAS gemm does not give that).
@numba.njit(cache=True, fastmath=False)
def _affine_batch(x, w, b):
    n, d = x.shape
    k = w.shape[1]
    out = np.empty((n, k))
    for i in range(n):
        row = out[i]
        for j in range(k):
            row[j] = b[j]
        for l in range(d):
            xv = x[i, l]
            wl = w[l]
            for j in range(k):
                row[j] += xv * wl[j]
    return out


@numba.njit(cache=True, fastmath=False)
def _affine_vec(x, w, b):
    d = x.shape[0]
    k = w.shape[1]
    out = np.empty(k)
    for j in range(k):
        out[j] = b[j]
    for l in range(d):
        xv = x[l]
        wl = w[l]
        for j in range(k):
            out[j] += xv * wl[j]
    return out


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Forward pass; returns (output, cache) where cache feeds mlp_backward.

    ``x`` may be a single vector (d,) or a batch (n, d); outputs do not
    depend on how inputs are grouped into batches.
    """
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeError(
            f"input dim {x.shape[-1]} != first layer fan_in {params.weights[0].shape[0]}"
        )
    affine = _affine_vec if x.ndim == 1 else _affine_batch
    inputs = [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = affine(h, w, b)
        if k < last:
            h = np.tanh(z)
            inputs.append(h)
        else:
            if params.out_scale is None:
                y = z
                t_out = None
            else:
                t_out = np.tanh(z)
                y = params.out_scale * t_out + params.out_offset
    return y, (inputs, t_out)


def mlp_backward(params: MlpParams, cache, grad_out: np.ndarray) -> GradientBundle:
    """Backprop ``sum(output * grad_out)`` through the net.

    For batched caches the weight/bias gradients are summed over the batch;
    callers fold any 1/n factors into ``grad_out``.
    """
    inputs, t_out = cache
    if len(inputs) != len(params.weights):
        raise ShapeError(
            f"cache has {len(inputs)} layer inputs for {len(params.weights)} layers"
        )
    g = np.asarray(grad_out, dtype=float)
    if g.shape != (inputs[0].shape[:-1] + (params.weights[-1].shape[1],)):
        raise ShapeError(f"grad_out shape {g.shape} does not match network output")
    if params.out_scale is not None:
        g = g * (params.out_scale * (1.0 - t_out * t_out))
    batched = inputs[0].ndim == 2
    w_grads: list[np.ndarray] = [None] * len(params.weights)
    b_grads: list[np.ndarray] = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        inp = inputs[k]
        if batched:
            w_grads[k] = inp.T @ g
            b_grads[k] = g.sum(axis=0)
        else:
            w_grads[k] = np.outer(inp, g)
            b_grads[k] = g.copy()
        g = g @ params.weights[k].T
        if k > 0:
            g = g * (1.0 - inp * inp)
    return GradientBundle(weights=w_grads, biases=b_grads, input=g)


def adam_init(param_arrays) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in param_arrays],
        v=[np.zeros_like(p) for p in param_arrays],
        step=0,
    )


def adam_step(
    param_arrays,
    grad_arrays,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
):
    """One Adam update over a flat list of arrays; returns (params', state').

    Raises NumericalError on non-finite gradient entries so training aborts
    with a diagnosable failure instead of silently poisoning the weights.
    """
    if len(param_arrays) != len(grad_arrays) or len(param_arrays) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    for p, g in zip(param_arrays, grad_arrays):
        if p.shape != g.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient entries in adam_step")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params = []
    new_m = []
    new_v = []
    for p, g, m, v in zip(param_arrays, grad_arrays, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def clip_grad_norm(grad_arrays, max_norm: float):
    """Scale gradients so their global L2 norm is at most max_norm.

    Returns (clipped_arrays, pre_clip_norm). Zero gradients pass through.
    """
    total = 0.0
    for g in grad_arrays:
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        grad_arrays = [g * factor for g in grad_arrays]
    return grad_arrays, norm


def _check_sigma(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be strictly positive")
    return sigma


def gaussian_logprob(mean, sigma, action):
    """Diagonal-Gaussian log density, summed over the last axis.

    Accepts single vectors (k,) -> scalar or batches (n, k) -> (n,).
    """
    mean = np.asarray(mean, dtype=float)
    sigma = _check_sigma(sigma)
    action = np.asarray(action, dtype=float)
    if mean.shape[-1] != action.shape[-1]:
        raise ShapeError(f"mean dim {mean.shape[-1]} != action dim {action.shape[-1]}")
    z = (action - mean) / sigma
    k = mean.shape[-1]
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) - 0.5 * k * LOG_2PI


def gaussian_entropy(sigma) -> float:
    """Entropy of a diagonal Gaussian: sum_j 0.5 * ln(2 pi e sigma_j^2)."""
    sigma = _check_sigma(sigma)
    k = sigma.shape[-1]
    return float(np.sum(np.log(sigma)) + 0.5 * k * (LOG_2PI + 1.0))


def gaussian_sample(mean, sigma, rng: np.random.Generator) -> np.ndarray:
    """Draw mean + sigma * z with z standard normal per dimension."""
    mean = np.asarray(mean, dtype=float)
    sigma = _check_sigma(sigma)
    return mean + sigma * rng.standard_normal(mean.shape)


def mlp_to_dict(params: MlpParams) -> dict:
    """JSON-ready description: layer sizes plus flat row-major arrays."""
    out = {
        "layer_sizes": params.layer_sizes,
        "weights": [w.ravel(order="C").tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "out_scale": None if params.out_scale is None else params.out_scale.tolist(),
        "out_offset": None if params.out_offset is None else params.out_offset.tolist(),
    }
    return out


def mlp_from_dict(data: dict) -> MlpParams:
    sizes = [int(s) for s in data["layer_sizes"]]
    if len(sizes) < 2:
        raise ConfigurationError("checkpoint layer_sizes needs >= 2 entries")
    weights = []
    biases = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        flat = np.asarray(data["weights"][k], dtype=float)
        if flat.size != fan_in * fan_out:
            raise ConfigurationError(
                f"layer {k}: {flat.size} weights for shape ({fan_in}, {fan_out})"
            )
        weights.append(flat.reshape(fan_in, fan_out))
        b = np.asarray(data["biases"][k], dtype=float)
        if b.shape != (fan_out,):
            raise ConfigurationError(f"layer {k}: bias shape {b.shape} != ({fan_out},)")
        biases.append(b)
    scale = data.get("out_scale")
    offset = data.get("out_offset")
    return MlpParams(
        weights=weights,
        biases=biases,
        out_scale=None if scale is None else np.asarray(scale, dtype=float),
        out_offset=None if offset is None else np.asarray(offset, dtype=float),
    )
