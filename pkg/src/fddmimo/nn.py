"""Small fully-connected networks with explicit forward/backward passes.

Batches are row-major: an input of shape ``(N, n_in)`` gives an output of
shape ``(N, n_out)``. Dropout is inverted (scaled at train time), so
evaluation mode is a plain deterministic function.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

__all__ = ["ACTIVATIONS", "Layer", "Mlp", "Cache", "StaleCacheError", "AdamState",
           "forward", "backward", "adam_step"]

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("leaky_relu", "tanh", "sigmoid", "identity")


class StaleCacheError(RuntimeError):
    """Backward called with a cache recorded before the last parameter update."""


def _act(name, z):
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z, a):
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Layer:
    W: np.ndarray            # (n_in, n_out)
    b: np.ndarray            # (n_out,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError("layer weight/bias shapes do not match")


@dataclass
class Cache:
    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    post: List[np.ndarray]
    masks: List[Optional[np.ndarray]]
    version: int


class Mlp:
    """Stack of dense layers; dropout applies after every hidden layer."""

    def __init__(self, layers: Sequence[Layer], dropout: float = 0.0):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        if not 0.0 <= dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.layers = list(layers)
        self.dropout = float(dropout)
        self.version = 0

    @classmethod
    def build(cls, sizes: Sequence[int], rng: np.random.Generator,
              hidden_activation: str = "leaky_relu", output_activation: str = "identity",
              dropout: float = 0.0) -> "Mlp":
        """Glorot-uniform weights, zero biases. ``sizes`` includes input and output."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(Layer(rng.uniform(-lim, lim, (fan_in, fan_out)),
                                np.zeros(fan_out), act))
        return cls(layers, dropout)

    @property
    def n_in(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def n_out(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def forward(self, x, mode: str = "eval", rng: Optional[np.random.Generator] = None,
                masks: Optional[Sequence[Optional[np.ndarray]]] = None):
        """Return ``(output, cache)``.

        In ``"train"`` mode hidden activations are multiplied by inverted
        dropout masks, either drawn from ``rng`` or taken from ``masks``
        (useful to freeze the masks for gradient checks).
        """
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        a = np.asarray(x, dtype=float)
        squeeze = a.ndim == 1
        a = np.atleast_2d(a)
        if a.shape[1] != self.n_in:
            raise ValueError(f"expected input width {self.n_in}, got {a.shape[1]}")
        use_dropout = mode == "train" and self.dropout > 0
        if use_dropout and masks is None and rng is None:
            raise ValueError("train-mode dropout needs an rng or explicit masks")
        cache = Cache([], [], [], [], self.version)
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            cache.inputs.append(a)
            z = a @ layer.W + layer.b
            a = _act(layer.activation, z)
            cache.pre.append(z)
            cache.post.append(a)
            mask = None
            if use_dropout and i < last:
                if masks is not None:
                    mask = masks[i]
                else:
                    keep = 1.0 - self.dropout
                    mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            cache.masks.append(mask)
        return (a[0] if squeeze else a), cache

    def __call__(self, x):
        return self.forward(x, "eval")[0]

    def backward(self, cache: Cache, grad_output):
        """Gradients of a scalar loss given ``d loss / d output``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered as
        :attr:`params`.
        """
        if cache.version != self.version:
            raise StaleCacheError("parameters changed since this forward pass")
        g = np.atleast_2d(np.asarray(grad_output, dtype=float))
        grads: List[np.ndarray] = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            g = g * _act_grad(layer.activation, cache.pre[i], cache.post[i])
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.W.T
        if np.asarray(grad_output).ndim == 1:
            g = g[0]
        return grads, g

    def step(self, grads, state: "AdamState"):
        adam_step(self.params, grads, state)
        self.version += 1

    def copy(self) -> "Mlp":
        net = Mlp([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers],
                  self.dropout)
        return net

    def to_dict(self) -> dict:
        return {"dropout": self.dropout,
                "layers": [{"n_in": l.W.shape[0], "n_out": l.W.shape[1],
                            "activation": l.activation, "weight": l.W.tolist(),
                            "bias": l.b.tolist()} for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        layers = []
        for spec in d["layers"]:
            W = np.asarray(spec["weight"], dtype=float).reshape(spec["n_in"], spec["n_out"])
            layers.append(Layer(W, np.asarray(spec["bias"], dtype=float), spec["activation"]))
        return cls(layers, d.get("dropout", 0.0))


def forward(net: Mlp, x, mode: str = "eval", rng=None, masks=None):
    return net.forward(x, mode, rng, masks)


def backward(net: Mlp, cache: Cache, grad_output):
    return net.backward(cache, grad_output)


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> Sequence[np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
