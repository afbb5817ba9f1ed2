"""Minimal dense-network engine with hand-derived gradients.

Fixed-topology multilayer perceptrons (tanh or relu hidden layers, linear
output), reverse-mode gradients computed from a cached forward tape, a
numerically stable categorical head, and a bias-corrected adaptive-moment
optimizer.  Everything runs in 64-bit numpy on the CPU; networks are small
enough that exactness and reproducibility matter more than throughput.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ContractViolation

ACTIVATIONS = ("tanh", "relu")

# gradients are a list of (dW, db) pairs, one per layer, shapes mirroring
# the parameters
Gradients = list


class Mlp:
    """Fully connected network; hidden activations share one nonlinearity,
    the output layer is linear."""

    def __init__(self, layer_sizes: Sequence[int], hidden_activation: str = "tanh",
                 seed: int = 0) -> None:
        sizes = tuple(int(n) for n in layer_sizes)
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise ValueError("layer sizes need at least input and output dims, all >= 1")
        if hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {hidden_activation!r}")
        self.layer_sizes = sizes
        self.hidden_activation = hidden_activation
        self.seed = seed
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))
        self._tape: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    # -- forward / backward ---------------------------------------------------

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.hidden_activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _activate_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.hidden_activation == "tanh":
            return 1.0 - a * a
        return (z > 0.0).astype(np.float64)

    def _run(self, x: np.ndarray, keep: bool) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        squeeze = arr.ndim == 1
        if squeeze:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.layer_sizes[0]:
            raise ValueError(
                f"input shape {np.shape(x)} incompatible with {self.layer_sizes[0]} inputs"
            )
        activations = [arr]
        pre = []
        a = arr
        last = len(self.weights) - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pre.append(z)
            a = z if idx == last else self._activate(z)
            activations.append(a)
        if keep:
            self._tape = (activations, pre)
        return a[0] if squeeze else a

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Run the network and cache intermediates for :meth:`backward`."""
        return self._run(x, keep=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Run the network without touching the tape (safe for concurrent
        read-only inference on a frozen net)."""
        return self._run(x, keep=False)

    def backward(self, upstream: np.ndarray) -> tuple[Gradients, np.ndarray]:
        """Exact reverse-mode gradients from the last :meth:`forward` call.

        ``upstream`` is d(loss)/d(output) with the same shape the forward
        pass returned.  Returns per-layer (dW, db) pairs, summed over the
        batch, plus d(loss)/d(input).
        """
        if self._tape is None:
            raise ContractViolation("backward called before forward")
        activations, pre = self._tape
        delta = np.asarray(upstream, dtype=np.float64)
        squeeze = delta.ndim == 1
        if squeeze:
            delta = delta[None, :]
        if delta.shape != activations[-1].shape:
            raise ValueError(
                f"upstream shape {np.shape(upstream)} does not match output "
                f"shape {activations[-1].shape}"
            )
        grads: Gradients = [None] * len(self.weights)
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = activations[layer]
            grads[layer] = (delta.T @ a_in, delta.sum(axis=0))
            delta = delta @ self.weights[layer]
            if layer > 0:
                delta = delta * self._activate_grad(pre[layer - 1], activations[layer])
        return grads, (delta[0] if squeeze else delta)

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def gradient_arrays(self, grads: Gradients) -> list[np.ndarray]:
        out = []
        for dw, db in grads:
            out.append(dw)
            out.append(db)
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError("flat parameter vector has the wrong length")
        offset = 0
        for p in self.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def copy(self) -> "Mlp":
        clone = Mlp(self.layer_sizes, self.hidden_activation, self.seed)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst[...] = src
        return clone


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax_sample(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float, np.ndarray]:
    """Sample one action from a categorical over the logits.

    Returns (action index, log probability of that action, full probability
    vector).  Max-subtraction keeps huge logits from overflowing.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("softmax_sample expects a single logit vector")
    if np.isnan(z).any():
        raise ValueError("NaN logits")
    logp = log_softmax(z)
    probs = np.exp(logp)
    probs = probs / probs.sum()
    u = rng.random()
    action = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    action = min(action, len(probs) - 1)
    return action, float(logp[action]), probs


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              moments: tuple[list[np.ndarray], list[np.ndarray]],
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int = 1):
    """One bias-corrected adaptive-moment update.

    ``moments`` is the (first, second) moment lists; ``t`` is the 1-based
    update count.  Parameters and moments update in place and are returned
    for convenience.
    """
    if t < 1:
        raise ValueError("update count t starts at 1")
    m, v = moments
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * (g * g)
        m_hat = mi / (1.0 - beta1 ** t)
        v_hat = vi / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, (m, v)


class Adam:
    """Stateful wrapper around :func:`adam_step` for one parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        adam_step(self.params, grads, (self.m, self.v),
                  self.lr, self.beta1, self.beta2, self.eps, self.t)
