"""Minimal dense-network engine: forward, reverse-mode gradients, Adam.

Covers exactly what the adversarial models here need: dense layers,
LeakyReLU, batch normalization, sigmoid, binary cross-entropy with a
fused logit gradient, and bias-corrected Adam. Everything is float64
numpy; checkpoints store float32 blocks.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.2
BN_EPS = 1e-3
BN_MOMENTUM = 0.99
BCE_CLAMP = 1e-7


class Dense:
    """Affine layer y = x W^T + b with Glorot-uniform init."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        limit = np.sqrt(6.0 / (n_in + n_out))
        self.weights = rng.uniform(-limit, limit, size=(n_out, n_in))
        self.bias = np.zeros(n_out)
        self.d_weights = np.zeros_like(self.weights)
        self.d_bias = np.zeros_like(self.bias)
        self._x = None

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.shape[1] != self.n_in:
            raise ValueError(f"expected width {self.n_in}, got {x.shape[1]}")
        self._x = x if train else None
        return x @ self.weights.T + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.d_weights = grad.T @ self._x
        self.d_bias = grad.sum(axis=0)
        return grad @ self.weights

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.d_weights, self.d_bias]

    def counts(self):
        n = self.weights.size + self.bias.size
        return n, n


class BatchNorm:
    """Per-feature normalization with trainable scale/shift.

    Train mode normalizes by batch statistics (population variance) and
    updates the running statistics; inference mode uses the running
    statistics. The running mean/var count toward the total parameter
    number but are not trainable.
    """

    def __init__(self, features: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        self.gamma = np.ones(features)
        self.beta = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.eps = eps
        self.momentum = momentum
        self.d_gamma = np.zeros(features)
        self.d_beta = np.zeros(features)
        self._cache = None

    @property
    def features(self) -> int:
        return self.gamma.size

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.shape[1] != self.features:
            raise ValueError(f"expected width {self.features}, got {x.shape[1]}")
        if not train:
            self._cache = None
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            return self.gamma * (x - self.running_mean) * inv + self.beta
        if x.shape[0] < 2:
            raise ValueError("batch norm needs batch size >= 2 in train mode")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
        self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        self._cache = (xhat, inv)
        return self.gamma * xhat + self.beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, inv = self._cache
        b = grad.shape[0]
        self.d_gamma = (grad * xhat).sum(axis=0)
        self.d_beta = grad.sum(axis=0)
        dxhat = grad * self.gamma
        return (inv / b) * (b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def params(self):
        return [self.gamma, self.beta]

    def grads(self):
        return [self.d_gamma, self.d_beta]

    def counts(self):
        return 2 * self.features, 4 * self.features


class LeakyReLU:
    def __init__(self, slope: float = LEAKY_SLOPE):
        self.slope = slope
        self._mask = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._mask = x >= 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, self.slope * grad)

    def params(self):
        return []

    def grads(self):
        return []

    def counts(self):
        return 0, 0


class Sigmoid:
    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._y = 1.0 / (1.0 + np.exp(-x))
        return self._y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self._y * (1.0 - self._y)

    def params(self):
        return []

    def grads(self):
        return []

    def counts(self):
        return 0, 0


class Network:
    """Ordered layer stack with cached-activation backpropagation."""

    def __init__(self, layers: list):
        self.layers = list(layers)
        self._ready = False

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("batch must be 2-D (rows are samples)")
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ready = train
        return x

    def backward(self, grad: np.ndarray, from_logits: bool = False) -> np.ndarray:
        """Propagate an output (or pre-sigmoid logit) gradient to the input.

        Parameter gradients are left on each layer; ``grads()`` collects
        them in ``params()`` order.
        """
        if not self._ready:
            raise RuntimeError("backward requires a preceding train-mode forward pass")
        layers = self.layers
        if from_logits:
            if not layers or not isinstance(layers[-1], Sigmoid):
                raise ValueError("from_logits requires a sigmoid output layer")
            layers = layers[:-1]
        g = np.asarray(grad, dtype=np.float64)
        for layer in reversed(layers):
            g = layer.backward(g)
        return g

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]


def parameter_count(net: Network) -> tuple[int, int]:
    """(trainable, total) over all layers; batch-norm running statistics
    count toward the total only."""
    trainable = total = 0
    for layer in net.layers:
        tr, tot = layer.counts()
        trainable += tr
        total += tot
    return trainable, total


def bce_loss(predictions: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Binary cross-entropy and its gradient w.r.t. the pre-sigmoid logits.

    Predictions are clamped away from {0, 1} for the log; the fused logit
    gradient (p - t) / B is exact and numerically stable.
    """
    p = np.clip(np.asarray(predictions, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(targets, dtype=np.float64)
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return float(loss), (p - t) / p.size


def init_adam_state(params: list[np.ndarray]) -> dict:
    return {
        "t": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], dict]:
    """Bias-corrected Adam; updates params in place and returns them."""
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


_MAGIC = b"AGN1"
_DENSE, _BN, _LRELU, _SIGMOID = 1, 2, 3, 4


def save_network(net: Network, path) -> None:
    """Versioned binary checkpoint: layer descriptors + float32 blocks."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_MAGIC, struct.pack("<I", len(net.layers))]
    for layer in net.layers:
        if isinstance(layer, Dense):
            chunks.append(struct.pack("<BII", _DENSE, layer.n_in, layer.n_out))
            chunks.append(layer.weights.astype("<f4").tobytes())
            chunks.append(layer.bias.astype("<f4").tobytes())
        elif isinstance(layer, BatchNorm):
            chunks.append(struct.pack("<BIdd", _BN, layer.features, layer.eps, layer.momentum))
            for arr in (layer.gamma, layer.beta, layer.running_mean, layer.running_var):
                chunks.append(arr.astype("<f4").tobytes())
        elif isinstance(layer, LeakyReLU):
            chunks.append(struct.pack("<Bd", _LRELU, layer.slope))
        elif isinstance(layer, Sigmoid):
            chunks.append(struct.pack("<B", _SIGMOID))
        else:
            raise TypeError(f"cannot serialize layer {type(layer).__name__}")
    path.write_bytes(b"".join(chunks))


def load_network(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    off = 4
    (n_layers,) = struct.unpack_from("<I", raw, off)
    off += 4

    def take(count):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(np.float64)
        off += 4 * count
        return arr

    layers = []
    for _ in range(n_layers):
        (code,) = struct.unpack_from("<B", raw, off)
        off += 1
        if code == _DENSE:
            n_in, n_out = struct.unpack_from("<II", raw, off)
            off += 8
            layer = Dense(n_in, n_out, rng=np.random.default_rng(0))
            layer.weights = take(n_in * n_out).reshape(n_out, n_in)
            layer.bias = take(n_out)
        elif code == _BN:
            features, eps, momentum = struct.unpack_from("<Idd", raw, off)
            off += 20
            layer = BatchNorm(features, eps, momentum)
            layer.gamma = take(features)
            layer.beta = take(features)
            layer.running_mean = take(features)
            layer.running_var = take(features)
        elif code == _LRELU:
            (slope,) = struct.unpack_from("<d", raw, off)
            off += 8
            layer = LeakyReLU(slope)
        elif code == _SIGMOID:
            layer = Sigmoid()
        else:
            raise ValueError(f"{path}: unknown layer code {code}")
        layers.append(layer)
    return Network(layers)
