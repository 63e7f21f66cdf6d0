"""Feedforward maps with hand-written backpropagation.

Weights are stored ``(out, in)`` so ``y = x @ W.T + b`` on row-batched input.
Hidden layers use ``activation``; the last layer is always affine. A map
with a single size has no layers and is the identity.
"""

from __future__ import annotations

import numpy as np

__all__ = ["MlpMap", "ACTIVATIONS"]

ACTIVATIONS = ("tanh", "linear")


class MlpMap:
    def __init__(self, sizes, activation: str = "tanh", weights=None, biases=None):
        sizes = tuple(int(s) for s in sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = sizes
        self.activation = activation
        pairs = list(zip(sizes[:-1], sizes[1:]))
        if weights is None:
            weights = [np.zeros((o, i)) for i, o in pairs]
        if biases is None:
            biases = [np.zeros(o) for _, o in pairs]
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("number of weight/bias arrays does not match layer sizes")
        for (i, o), w, b in zip(pairs, self.weights, self.biases):
            if w.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"layer {i}->{o} has weight {w.shape} and bias {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("weights must be finite")

    @classmethod
    def init(cls, sizes, activation: str = "tanh", rng: np.random.Generator | None = None,
             zero_last: bool = False, scale: float = 1.0) -> "MlpMap":
        """Glorot-uniform weights, zero biases; optionally zero the output layer."""
        rng = rng or np.random.default_rng(0)
        net = cls(sizes, activation)
        for idx, (i, o) in enumerate(zip(net.sizes[:-1], net.sizes[1:])):
            if zero_last and idx == len(net.weights) - 1:
                continue
            limit = scale * np.sqrt(6.0 / (i + o))
            net.weights[idx] = rng.uniform(-limit, limit, size=(o, i))
        return net

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        if not self.weights:
            return np.zeros(0)
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(self.weights, self.biases)])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        pos = 0
        for idx, w in enumerate(self.weights):
            o, i = w.shape
            self.weights[idx] = theta[pos:pos + o * i].reshape(o, i).copy()
            pos += o * i
            self.biases[idx] = theta[pos:pos + o].copy()
            pos += o

    def copy(self) -> "MlpMap":
        return MlpMap(self.sizes, self.activation,
                      [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Output and the per-layer inputs needed by :meth:`backward`."""
        acts = [X]
        a = X
        last = len(self.weights) - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if idx < last and self.activation == "tanh":
                a = np.tanh(a)
            acts.append(a)
        return a, acts

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, acts: list[np.ndarray], dY: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat parameter gradient and input gradient for upstream ``dY``."""
        grads = []
        delta = dY
        last = len(self.weights) - 1
        for idx in range(last, -1, -1):
            if idx < last and self.activation == "tanh":
                delta = delta * (1.0 - acts[idx + 1] ** 2)
            grads.append((delta.T @ acts[idx], delta.sum(axis=0)))
            delta = delta @ self.weights[idx]
        if not grads:
            return np.zeros(0), delta
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])
        return flat, delta

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W, b)`` with ``f(x) = W x + b``; only valid for linear maps."""
        if self.activation == "tanh" and len(self.weights) > 1:
            raise ValueError("map with tanh hidden layers is not affine")
        W = np.eye(self.n_in)
        b = np.zeros(self.n_in)
        for w, bias in zip(self.weights, self.biases):
            W = w @ W
            b = w @ b + bias
        return W, b

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activation": self.activation,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpMap":
        sizes = [int(s) for s in doc["sizes"]]
        weights = []
        for (i, o), flat in zip(zip(sizes[:-1], sizes[1:]), doc["weights"]):
            arr = np.array(flat, dtype=float)
            if arr.size != o * i:
                raise ValueError(f"weight array for layer {i}->{o} has {arr.size} entries")
            weights.append(arr.reshape(o, i))
        return cls(sizes, doc.get("activation", "tanh"), weights,
                   [np.array(b, dtype=float) for b in doc["biases"]])
