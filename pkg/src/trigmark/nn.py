"""Small numpy building blocks with hand-written backward passes.

Everything here works in float64 on row-major batches ``(n, features)``.
Parameters live in plain ``dict[str, np.ndarray]`` so optimizers and
checkpoints can treat every model the same way.
"""

from __future__ import annotations

import numpy as np


def init_perceptron(rng, n_in, n_hidden, n_out, out_scale=1.0):
    """Gaussian fan-in initialisation for an affine-tanh-affine stack."""
    return {
        "W1": rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_hidden)),
        "b1": np.zeros(n_hidden),
        "W2": rng.normal(0.0, out_scale / np.sqrt(n_hidden), size=(n_hidden, n_out)),
        "b2": np.zeros(n_out),
    }


def perceptron_forward(params, x):
    pre = x @ params["W1"] + params["b1"]
    hidden = np.tanh(pre)
    out = hidden @ params["W2"] + params["b2"]
    return out, (x, hidden)


def perceptron_backward(params, cache, grad_out):
    """Return ``(param_grads, grad_input)`` for :func:`perceptron_forward`."""
    x, hidden = cache
    grads = {
        "W2": hidden.T @ grad_out,
        "b2": grad_out.sum(axis=0),
    }
    grad_hidden = grad_out @ params["W2"].T
    grad_pre = grad_hidden * (1.0 - hidden**2)
    grads["W1"] = x.T @ grad_pre
    grads["b1"] = grad_pre.sum(axis=0)
    return grads, grad_pre @ params["W1"].T


def normalize_rows(z):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise FloatingPointError("cannot normalize a zero vector")
    return z / norms, norms


def normalize_rows_backward(unit, norms, grad_unit):
    # d(z/|z|)/dz = (I - u u^T) / |z|
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


class Adam:
    """Adam over a parameter dict, updated in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad**2
            params[key] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
