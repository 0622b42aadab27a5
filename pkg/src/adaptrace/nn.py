"""Minimal feed-forward neural substrate with exact reverse-mode gradients.

Everything runs in 64-bit numpy on a leading batch axis.  The layer set is
deliberately small -- dense, 1D convolution, flatten -- because the networks
built on top of it are tiny and trained on CPU; the payoff is that every
gradient can be checked against central finite differences to tight
tolerances.

Parameters live inside the layer objects and are exposed as ordered lists of
arrays, so an optimizer update mutates the network in place.  Checkpoints
round-trip through JSON byte-stably: saving, loading, and saving again
produces identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointMismatch, ShapeMismatch

CHECKPOINT_VERSION = 1


# -- activations -------------------------------------------------------------


def _act_forward(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _act_backward(name: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient through the activation, using the cached *output* y."""
    if name == "linear":
        return dy
    if name == "tanh":
        return dy * (1.0 - y * y)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)), optionally rescaled."""
    bound = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# -- layers ------------------------------------------------------------------


class Dense:
    """Fully connected layer  y = act(x W + b)  on batched inputs (B, n_in)."""

    def __init__(self, n_in: int, n_out: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None,
                 weight_scale: float = 1.0):
        rng = rng or np.random.default_rng(0)
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.activation = activation
        self.W = glorot_uniform(rng, (n_in, n_out), n_in, n_out, weight_scale)
        self.b = np.zeros(n_out)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(
                f"dense expects (B, {self.n_in}), got {x.shape}")
        y = _act_forward(self.activation, x @ self.W + self.b)
        return y, (x, y)

    def backward(self, cache, dy: np.ndarray):
        x, y = cache
        if dy.shape != y.shape:
            raise ShapeMismatch(f"gradient shape {dy.shape} != {y.shape}")
        dz = _act_backward(self.activation, y, dy)
        return [x.T @ dz, dz.sum(axis=0)], dz @ self.W.T


class Conv1D:
    """Valid (no padding) 1D convolution over inputs (B, in_ch, L)."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int,
                 stride: int = 1, activation: str = "tanh",
                 rng: np.random.Generator | None = None):
        if stride != 1:
            raise ValueError("only stride 1 is implemented")
        rng = rng or np.random.default_rng(0)
        self.in_ch, self.out_ch, self.kernel = int(in_ch), int(out_ch), int(kernel)
        self.activation = activation
        fan_in, fan_out = in_ch * kernel, out_ch * kernel
        self.W = glorot_uniform(rng, (out_ch, in_ch, kernel), fan_in, fan_out)
        self.b = np.zeros(out_ch)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, float)
        if x.ndim != 3 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(
                f"conv1d expects (B, {self.in_ch}, L), got {x.shape}")
        if x.shape[2] < self.kernel:
            raise ShapeMismatch(
                f"input length {x.shape[2]} shorter than kernel {self.kernel}")
        windows = sliding_window_view(x, self.kernel, axis=2)  # (B,C,T,k)
        z = np.einsum("oik,bitk->bot", self.W, windows) + self.b[:, None]
        y = _act_forward(self.activation, z)
        return y, (x, y)

    def backward(self, cache, dy: np.ndarray):
        x, y = cache
        if dy.shape != y.shape:
            raise ShapeMismatch(f"gradient shape {dy.shape} != {y.shape}")
        dz = _act_backward(self.activation, y, dy)
        windows = sliding_window_view(x, self.kernel, axis=2)
        dW = np.einsum("bot,bitk->oik", dz, windows)
        db = dz.sum(axis=(0, 2))
        dx = np.zeros_like(x)
        t_out = dz.shape[2]
        for j in range(self.kernel):
            dx[:, :, j:j + t_out] += np.einsum("bot,oi->bit", dz, self.W[:, :, j])
        return [dW, db], dx


class Flatten:
    """Collapses all non-batch axes: (B, ...) -> (B, prod(...))."""

    params: list[np.ndarray] = []

    def forward(self, x: np.ndarray):
        x = np.asarray(x, float)
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy: np.ndarray):
        return [], dy.reshape(cache)


class Sequential:
    """Ordered chain of layers with a shared forward/backward protocol."""

    def __init__(self, layers: list):
        self.layers = list(layers)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dy: np.ndarray):
        grads: list[np.ndarray] = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            layer_grads, dy = layer.backward(cache, dy)
            grads = layer_grads + grads
        return grads, dy


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Adam with bias correction, updating a fixed parameter list in place."""

    def __init__(self, params: list[np.ndarray],
                 config: AdamConfig | None = None):
        self.params = list(params)
        self.config = config or AdamConfig()
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeMismatch(
                f"{len(grads)} gradients for {len(self.params)} parameters")
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch(
                    f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": [x.tolist() for x in self.m],
                "v": [x.tolist() for x in self.v]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params):
            raise CheckpointMismatch("optimizer state length mismatch")
        self.t = int(state["t"])
        for i, (m, v) in enumerate(zip(state["m"], state["v"])):
            self.m[i] = np.asarray(m, float).reshape(self.params[i].shape)
            self.v[i] = np.asarray(v, float).reshape(self.params[i].shape)


# -- categorical utilities ----------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; rows sum to 1."""
    z = np.asarray(logits, float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_sample(logits: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sample per row; deterministic given the generator state."""
    p = softmax(np.atleast_2d(logits))
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=-1)
    idx = (u[:, None] > cdf).sum(axis=-1)
    return np.minimum(idx, p.shape[-1] - 1)


def categorical_log_prob(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    logp = log_softmax(np.atleast_2d(logits))
    actions = np.atleast_1d(actions)
    return logp[np.arange(logp.shape[0]), actions]


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    """Entropy -sum p log p per row, safe at p = 0."""
    logp = log_softmax(np.atleast_2d(logits))
    p = np.exp(logp)
    return -(p * logp).sum(axis=-1)


# -- checkpoints ---------------------------------------------------------------


def _shape_signature(params: list[np.ndarray]) -> list[list[int]]:
    return [list(p.shape) for p in params]


def save_checkpoint(path: str | Path, params: list[np.ndarray],
                    meta: dict | None = None,
                    optimizer: Adam | None = None,
                    rng_state: dict | None = None) -> None:
    """Write parameters (plus optional optimizer/RNG state) as stable JSON.

    Keys are sorted and floats serialized with shortest round-trip repr, so
    identical states always produce identical bytes.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "shapes": _shape_signature(params),
        "params": [p.tolist() for p in params],
        "meta": meta or {},
    }
    if optimizer is not None:
        payload["adam"] = optimizer.state_dict()
    if rng_state is not None:
        payload["rng_state"] = rng_state
    Path(path).write_text(json.dumps(payload, sort_keys=True,
                                     separators=(",", ":")))


def load_checkpoint(path: str | Path,
                    params: list[np.ndarray] | None = None) -> dict:
    """Read a checkpoint; if ``params`` is given, load weights into them.

    Raises CheckpointMismatch when the stored shapes do not match the
    provided parameter list or the version is unknown.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointMismatch(f"unreadable checkpoint: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(
            f"unsupported checkpoint version {payload.get('version')!r}")
    if params is not None:
        if payload["shapes"] != _shape_signature(params):
            raise CheckpointMismatch("parameter shapes do not match network")
        for p, stored in zip(params, payload["params"]):
            p[...] = np.asarray(stored, float).reshape(p.shape)
    return payload
