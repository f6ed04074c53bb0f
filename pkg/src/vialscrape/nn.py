"""Minimal dense networks with explicit backprop, all float64 numpy.

Layers are fully connected with ReLU hidden activations and an identity
output.  Backprop is written out by hand so gradients can be audited
against central finite differences; the optimizer is Adam with bias
correction and targets track online networks by Polyak averaging.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

__all__ = [
    "MLP",
    "Adam",
    "polyak_update",
    "fd_gradient",
    "relative_error",
    "flatten_arrays",
    "unflatten_arrays",
]


class MLP:
    """Feed-forward net: x @ W0 + b0 -> relu -> ... -> x @ Wk + bk.

    Weights start uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases at
    zero.  ``params`` is the flat list [W0, b0, W1, b1, ...]; gradients
    from :meth:`backward` come back in the same order.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        self.sizes = list(int(s) for s in sizes)
        self.params: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params.append(w)
            self.params.append(np.zeros(fan_out, dtype=np.float64))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x: np.ndarray) -> Tuple[np.ndarray, list]:
        """Forward pass keeping per-layer inputs and pre-activations.

        Accepts (batch, in) or a single (in,) vector, which is promoted
        and squeezed back on return.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        cache = []
        for layer in range(self.n_layers):
            w = self.params[2 * layer]
            b = self.params[2 * layer + 1]
            z = a @ w + b
            cache.append((a, z))
            a = np.maximum(z, 0.0) if layer < self.n_layers - 1 else z
        cache.append(squeeze)
        return (a[0] if squeeze else a), cache

    def backward(
        self, cache: list, grad_out: np.ndarray
    ) -> Tuple[List[np.ndarray], np.ndarray]:
        """Backprop ``grad_out`` (dL/dy) through the cached forward pass.

        Returns (param gradients in ``params`` order, dL/dx).  grad_out
        must already carry any batch-mean scaling.
        """
        squeeze = cache[-1]
        g = np.asarray(grad_out, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        grads: List[np.ndarray] = [np.empty(0)] * (2 * self.n_layers)
        for layer in range(self.n_layers - 1, -1, -1):
            a, z = cache[layer]
            if layer < self.n_layers - 1:
                g = g * (z > 0.0)
            grads[2 * layer] = a.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ self.params[2 * layer].T
        return grads, (g[0] if squeeze else g)

    def clone(self) -> "MLP":
        other = object.__new__(MLP)
        other.sizes = list(self.sizes)
        other.params = [p.copy() for p in self.params]
        return other

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {}
        for layer in range(self.n_layers):
            out[f"W{layer}"] = self.params[2 * layer].copy()
            out[f"b{layer}"] = self.params[2 * layer + 1].copy()
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for layer in range(self.n_layers):
            w = np.asarray(state[f"W{layer}"], dtype=np.float64)
            b = np.asarray(state[f"b{layer}"], dtype=np.float64)
            expect_w = self.params[2 * layer].shape
            if w.shape != expect_w:
                raise ValueError(
                    f"layer {layer} weight shape {w.shape} != expected {expect_w}"
                )
            self.params[2 * layer] = w.copy()
            self.params[2 * layer + 1] = b.copy()


class Adam:
    """Adam with bias correction, updating a list of arrays in place."""

    def __init__(
        self,
        params: List[np.ndarray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("param/grad count does not match optimizer state")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {"t": np.array([self.t], dtype=np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"] = m.copy()
            out[f"v{i}"] = v.copy()
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.t = int(np.asarray(state["t"]).reshape(-1)[0])
        for i in range(len(self.m)):
            self.m[i] = np.asarray(state[f"m{i}"], dtype=np.float64).reshape(
                self.m[i].shape
            )
            self.v[i] = np.asarray(state[f"v{i}"], dtype=np.float64).reshape(
                self.v[i].shape
            )


def polyak_update(target: MLP, online: MLP, rho: float) -> None:
    """target <- (1 - rho) * target + rho * online, parameter-wise."""
    if target.sizes != online.sizes:
        raise ValueError("target and online networks differ in architecture")
    for tp, op in zip(target.params, online.params):
        tp *= 1.0 - rho
        tp += rho * op


def flatten_arrays(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])


def unflatten_arrays(flat: np.ndarray, like: Sequence[np.ndarray]) -> List[np.ndarray]:
    out = []
    i = 0
    for a in like:
        n = a.size
        out.append(np.asarray(flat[i : i + n], dtype=np.float64).reshape(a.shape))
        i += n
    if i != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, expected {i}")
    return out


def fd_gradient(
    fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Scale-free gradient mismatch: ||a-b|| / max(||a||, ||b||, tiny)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
