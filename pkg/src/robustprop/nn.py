"""Small dense ReLU networks: evaluation, reverse-mode gradients, Adam, JSON I/O.

Every function accepts either a single input vector of shape ``(n,)`` or a
batch of shape ``(B, n)``; outputs follow the same convention.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RELU = "relu"
CLAMP = "clamp"
IDENTITY = "identity"
ACTIVATIONS = (RELU, CLAMP, IDENTITY)

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when a model file cannot be parsed."""


class UnsupportedVersionError(ModelFormatError):
    pass


class StaleTapeError(RuntimeError):
    """A gradient tape was used after the network it recorded was modified."""


@dataclass
class Layer:
    """Affine map followed by an elementwise activation.

    ``weights`` has shape ``(out, in)``. Parameter values may be updated in
    place by an optimizer, but shapes never change.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU
    clamp_lo: float | None = None
    clamp_hi: float | None = None

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D matrix")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"bias length {self.bias.shape[0]} does not match "
                f"{self.weights.shape[0]} weight rows"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == CLAMP:
            if self.clamp_lo is None or self.clamp_hi is None:
                raise ValueError("clamp activation needs clamp_lo and clamp_hi")
            self.clamp_lo = float(self.clamp_lo)
            self.clamp_hi = float(self.clamp_hi)
            if not self.clamp_lo < self.clamp_hi:
                raise ValueError("clamp requires clamp_lo < clamp_hi")
        else:
            self.clamp_lo = self.clamp_hi = None
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == RELU:
            return np.maximum(z, 0.0)
        if self.activation == CLAMP:
            return np.clip(z, self.clamp_lo, self.clamp_hi)
        return z

    def activation_grad(self, z: np.ndarray) -> np.ndarray:
        # subgradient 0 exactly at kinks
        if self.activation == RELU:
            return (z > 0.0).astype(np.float64)
        if self.activation == CLAMP:
            return ((z > self.clamp_lo) & (z < self.clamp_hi)).astype(np.float64)
        return np.ones_like(z)


@dataclass
class Network:
    layers: list[Layer]
    _version: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        if self.output_dim < 2:
            raise ValueError("a classifier needs at least 2 outputs")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
        return params

    def mark_updated(self):
        """Invalidate outstanding gradient tapes after an in-place update."""
        self._version += 1

    def copy(self) -> Network:
        return Network([
            Layer(l.weights.copy(), l.bias.copy(), l.activation, l.clamp_lo, l.clamp_hi)
            for l in self.layers
        ])

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class GradientTape:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    batched: bool
    net_id: int
    net_version: int


def init_network(sizes, rng=None, hidden=RELU, output_clamp=(-100.0, 100.0)) -> Network:
    """Glorot-uniform initialised network with layer widths ``sizes``.

    Hidden layers use ``hidden``; the last layer is clamped to ``output_clamp``
    or left as identity when ``output_clamp`` is None.
    """
    rng = np.random.default_rng(rng)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        last = i == len(sizes) - 2
        if not last:
            layers.append(Layer(w, b, hidden))
        elif output_clamp is None:
            layers.append(Layer(w, b, IDENTITY))
        else:
            layers.append(Layer(w, b, CLAMP, *output_clamp))
    return Network(layers)


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim != 2:
        raise ValueError(f"expected a vector or a batch of vectors, got shape {x.shape}")
    if x.shape[1] != net.input_dim:
        raise ValueError(f"input has dimension {x.shape[1]}, network expects {net.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or Inf")
    return x, batched


def forward(net: Network, x) -> tuple[np.ndarray, GradientTape]:
    h, batched = _as_batch(net, x)
    inputs = h
    pre, post = [], []
    for layer in net.layers:
        # einsum rather than BLAS: each row's result must not depend on the batch it sits in
        z = np.einsum("bi,oi->bo", h, layer.weights) + layer.bias
        h = layer.activate(z)
        pre.append(z)
        post.append(h)
    tape = GradientTape(inputs, pre, post, batched, id(net), net._version)
    out = h if batched else h[0]
    return out, tape


def predict_logits(net: Network, x) -> np.ndarray:
    return forward(net, x)[0]


def backward(net: Network, tape: GradientTape, out_grad):
    """Backpropagate ``out_grad`` (d loss / d outputs) through the tape.

    Returns ``(param_grads, input_grad)``; ``param_grads`` is aligned with
    ``net.parameters()`` and sums over the batch.
    """
    if tape.net_id != id(net) or tape.net_version != net._version:
        raise StaleTapeError("tape does not belong to the current state of this network")
    g = np.asarray(out_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != tape.post[-1].shape:
        raise ValueError(f"out_grad shape {g.shape} does not match outputs {tape.post[-1].shape}")
    grads: list[np.ndarray] = []
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        g = g * layer.activation_grad(tape.pre[k])
        h_in = tape.post[k - 1] if k > 0 else tape.inputs
        grads.append(g.sum(axis=0))
        grads.append(g.T @ h_in)
        g = np.einsum("bo,oi->bi", g, layer.weights)
    grads.reverse()
    input_grad = g if tape.batched else g[0]
    return grads, input_grad


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def cross_entropy(logits, label):
    """Softmax cross-entropy on raw logits.

    For a single vector returns ``(loss, d loss / d logits)``. For a batch the
    loss is the batch mean and the gradient rows are scaled accordingly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    batched = logits.ndim == 2
    z = logits if batched else logits[None, :]
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    if labels.shape[0] != z.shape[0]:
        raise ValueError("one label per logit row is required")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise ValueError(f"label out of range for {z.shape[1]} outputs")
    rows = np.arange(z.shape[0])
    logp = log_softmax(z)
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    if not batched:
        return float(losses[0]), grad[0]
    n = z.shape[0]
    return float(losses.mean()), grad / n


def cross_entropy_per_sample(logits: np.ndarray, labels) -> np.ndarray:
    logp = log_softmax(np.atleast_2d(logits))
    labels = np.asarray(labels, dtype=np.int64)
    return -logp[np.arange(logp.shape[0]), labels]


@dataclass
class AdamState:
    params_shapes: list[tuple[int, ...]]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros(s) for s in self.params_shapes]
            self.v = [np.zeros(s) for s in self.params_shapes]

    @classmethod
    def for_network(cls, net: Network, **kwargs) -> AdamState:
        return cls([p.shape for p in net.parameters()], **kwargs)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float):
    for p, g in zip(params, grads):
        p -= lr * g
    return params


# -- serialization ----------------------------------------------------------

def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        entry = {
            "weights": [float(w) for w in layer.weights.ravel()],
            "bias": [float(b) for b in layer.bias],
            "activation": layer.activation,
        }
        if layer.activation == CLAMP:
            entry["clamp_lo"] = layer.clamp_lo
            entry["clamp_hi"] = layer.clamp_hi
        layers.append(entry)
    return {"version": MODEL_FORMAT_VERSION, "input_dim": net.input_dim, "layers": layers}


def network_from_dict(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if "version" not in doc:
        raise ModelFormatError("missing field 'version'")
    if doc["version"] != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported model version {doc['version']!r}")
    try:
        in_dim = int(doc["input_dim"])
        raw_layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"bad or missing top-level field: {exc}") from None
    layers = []
    for i, entry in enumerate(raw_layers):
        try:
            bias = np.asarray(entry["bias"], dtype=np.float64)
            flat = np.asarray(entry["weights"], dtype=np.float64)
            if flat.size != bias.size * in_dim:
                raise ModelFormatError(
                    f"layers[{i}].weights: expected {bias.size}x{in_dim}="
                    f"{bias.size * in_dim} values, got {flat.size}"
                )
            layers.append(Layer(
                flat.reshape(bias.size, in_dim), bias, entry["activation"],
                entry.get("clamp_lo"), entry.get("clamp_hi"),
            ))
        except ModelFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"layers[{i}]: {exc}") from None
        in_dim = bias.size
    try:
        return Network(layers)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def save_model(net: Network, path):
    # json writes floats via repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


def load_model(path) -> Network:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return network_from_dict(doc)
