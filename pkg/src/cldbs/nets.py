"""Minimal dense networks with manual backprop and an Adam optimizer.

Self-contained on purpose: training runs are reproducible bit for bit from
a seed with no learning-framework dependency. Hidden activations are
rectifiers; the output is either tanh (actor) or identity (critics).
"""

from __future__ import annotations

import numpy as np


class DenseNet:
    """Fully connected net. Parameters are float64 throughout."""

    def __init__(self, sizes, out_activation="linear", rng=None):
        if out_activation not in ("linear", "tanh"):
            raise ValueError("out_activation must be 'linear' or 'tanh'")
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.out_activation = out_activation
        if rng is None:
            rng = np.random.default_rng()
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, fan_out))

    def forward(self, x, want_cache=False):
        """x of shape (batch, in) -> output (batch, out), optionally with cache."""
        h = np.asarray(x, dtype=np.float64)
        hs = [h]
        zs = []
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            zs.append(z)
            if li < last:
                h = np.maximum(z, 0.0)
            elif self.out_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
            hs.append(h)
        if want_cache:
            return h, (hs, zs)
        return h

    def backward(self, grad_out, cache):
        """Backpropagate d(loss)/d(output after activation).

        Returns (param_grads, grad_input) where param_grads interleaves
        (dW, db) in layer order matching .params().
        """
        hs, zs = cache
        last = len(self.weights) - 1
        if self.out_activation == "tanh":
            delta = grad_out * (1.0 - hs[-1] ** 2)
        else:
            delta = np.asarray(grad_out, dtype=np.float64)
        grads = [None] * (2 * len(self.weights))
        for li in range(last, -1, -1):
            grads[2 * li] = hs[li].T @ delta
            grads[2 * li + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[li].T
            if li > 0:
                delta = delta * (zs[li - 1] > 0.0)
        return grads, delta

    def params(self):
        """Live parameter arrays, interleaved (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        dup = DenseNet.__new__(DenseNet)
        dup.sizes = self.sizes
        dup.out_activation = self.out_activation
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def load_from(self, other):
        for mine, theirs in zip(self.params(), other.params()):
            mine[...] = theirs


def polyak_update(target: DenseNet, online: DenseNet, tau: float):
    """target <- tau * online + (1 - tau) * target, in place."""
    for tp, op in zip(target.params(), online.params()):
        tp *= 1.0 - tau
        tp += tau * op


class Adam:
    """Adaptive moment estimation with standard bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self._params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self._params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
