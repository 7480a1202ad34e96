"""Dense MLP core with hand-written reverse mode, softmax policy head and Adam.

Weights are stored input-major (``x @ W + b``) so a batch of observations is
a 2-D array with one row per observation.  Hidden layers use tanh, the output
layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = "flexdesign-ckpt-1"


@dataclass
class MlpParams:
    layers: list  # [(W, b), ...]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0][0].shape[0]] + [W.shape[1] for W, _ in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([(W.copy(), b.copy()) for W, b in self.layers])

    def shapes(self) -> list[list[int]]:
        return [list(W.shape) for W, _ in self.layers]


Gradient = MlpParams


def init_mlp(sizes, rng: np.random.Generator, output_gain: float = 1.0, hidden_gain: float = 1.0) -> MlpParams:
    """Orthogonal init (gain 1 on hidden layers, ``output_gain`` on the last), zero biases."""
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = output_gain if k == len(sizes) - 2 else hidden_gain
        a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))
        W = q if fan_in >= fan_out else q.T
        layers.append((gain * W[:fan_in, :fan_out].copy(), np.zeros(fan_out)))
    return MlpParams(layers)


def zeros_like(params: MlpParams) -> MlpParams:
    return MlpParams([(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers])


def _check_input(params: MlpParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.layers[0][0].shape[0]:
        raise ValueError(f"input dimension {x.shape[-1]} != network input {params.layers[0][0].shape[0]}")


def forward_cached(params: MlpParams, x) -> tuple[np.ndarray, list]:
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    acts = [x]
    h = x
    last = len(params.layers) - 1
    for k, (W, b) in enumerate(params.layers):
        h = h @ W + b
        if k < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def forward(params: MlpParams, x) -> np.ndarray:
    return forward_cached(params, x)[0]


def backward(params: MlpParams, x, output_cotangent, cache: list | None = None) -> MlpParams:
    """Gradient of ``sum(forward(params, x) * output_cotangent)`` wrt every parameter."""
    if cache is None:
        _, cache = forward_cached(params, x)
    delta = np.asarray(output_cotangent, dtype=float)
    if delta.shape != cache[-1].shape:
        raise ValueError(f"cotangent shape {delta.shape} != output shape {cache[-1].shape}")
    grads = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[k]
        a_in = cache[k]
        if a_in.ndim == 1:
            gW = np.outer(a_in, delta)
            gb = delta.copy()
        else:
            gW = a_in.T @ delta
            gb = delta.sum(axis=0)
        grads[k] = (gW, gb)
        if k > 0:
            # cache[k] is tanh output of layer k-1
            delta = (delta @ W.T) * (1.0 - cache[k] ** 2)
    return MlpParams(grads)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def policy_distribution(params: MlpParams, observation) -> np.ndarray:
    return np.exp(log_softmax(forward(params, observation)))


def policy_log_probs(params: MlpParams, observation) -> np.ndarray:
    return log_softmax(forward(params, observation))


def flatten(params: MlpParams) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params.layers])


def unflatten(vec: np.ndarray, shapes) -> MlpParams:
    layers = []
    pos = 0
    for fan_in, fan_out in shapes:
        W = np.array(vec[pos : pos + fan_in * fan_out], dtype=float).reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = np.array(vec[pos : pos + fan_out], dtype=float)
        pos += fan_out
        layers.append((W, b))
    if pos != len(vec):
        raise ValueError(f"vector length {len(vec)} does not match shapes (expected {pos})")
    return MlpParams(layers)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams) -> "AdamState":
        size = flatten(params).size
        return cls(np.zeros(size), np.zeros(size))

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(params: MlpParams, gradient: MlpParams, state: AdamState, lr: float, maximize: bool = False):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    g = flatten(gradient)
    if maximize:
        g = -g
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = flatten(params) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return unflatten(theta, params.shapes()), new_state


def save_checkpoint(path, networks: dict[str, MlpParams], extra: dict | None = None) -> Path:
    """One JSON header line, then every network's flat parameters as little-endian float64."""
    path = Path(path)
    header = {"format": FORMAT_VERSION, "networks": {k: p.shapes() for k, p in networks.items()}}
    header.update(extra or {})
    blob = b"".join(flatten(networks[k]).astype("<f8").tobytes() for k in networks)
    path.write_bytes(json.dumps(header).encode() + b"\n" + blob)
    return path


def load_checkpoint(path) -> tuple[dict[str, MlpParams], dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl])
    if header.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {header.get('format')!r}")
    data = np.frombuffer(raw[nl + 1 :], dtype="<f8")
    out = {}
    pos = 0
    for name, shapes in header["networks"].items():
        size = sum(a * b + b for a, b in shapes)
        out[name] = unflatten(data[pos : pos + size], shapes)
        pos += size
    if pos != data.size:
        raise ValueError("checkpoint payload size does not match header")
    return out, header
