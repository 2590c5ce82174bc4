"""Dense neural-network substrate: linear layers, ReLU, batch normalization
with batch-computed statistics, reverse-mode gradients, and Adam.

All activations are float64 numpy arrays of shape (batch, features). Forward
passes return an ``(output, cache)`` pair; the cache is call-local so that a
trained model can score concurrent batches without interior mutation. The only
stateful exception is the optional ``record`` flag on :class:`BatchNorm`,
used by the trainer to remember the statistics of the most recent training
batch (the "frozen statistics" scoring mode).
"""

from __future__ import annotations

import numpy as np

from .errors import BatchTooSmallError

DTYPE = np.float64

BN_BATCH = "batch"
BN_IDENTITY = "identity"
BN_FROZEN = "frozen"
BN_MODES = (BN_BATCH, BN_IDENTITY, BN_FROZEN)


def as_batch(x) -> np.ndarray:
    """Coerce input to a 2-D float64 array without copying when possible."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D (batch, features) array, got shape {arr.shape}")
    return arr


class Linear:
    """Affine map ``y = x @ W.T + b`` with W of shape (out, in).

    Weights are initialized uniformly in +-sqrt(6 / (fan_in + fan_out)),
    biases at zero.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(DTYPE)
        self.bias = np.zeros(out_dim, dtype=DTYPE)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x: np.ndarray):
        if x.shape[1] != self.in_dim:
            raise ValueError(
                f"linear layer expects {self.in_dim} input features, got {x.shape[1]}"
            )
        return x @ self.weight.T + self.bias, x

    def backward(self, grad: np.ndarray, cache):
        x = cache
        grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight, grads

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]


class BatchNorm:
    """Per-feature batch normalization with learnable scale/shift.

    Three behaviors (chosen per call, not stored):

    - ``batch``: normalize with the mean and biased variance of the current
      batch. Requires at least two rows.
    - ``identity``: skip normalization; the layer reduces to ``gamma*x + beta``
      (the normalization-off ablation).
    - ``frozen``: normalize with statistics previously captured via
      ``record=True`` and :meth:`freeze` (train-time statistics reused at
      scoring time).
    """

    def __init__(self, dim: int, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = np.ones(dim, dtype=DTYPE)
        self.beta = np.zeros(dim, dtype=DTYPE)
        self.eps = float(eps)
        self.dim = dim
        # last batch statistics seen with record=True; copied by freeze()
        self.last_mean = None
        self.last_var = None
        # statistics used by the "frozen" mode
        self.frozen_mean = None
        self.frozen_var = None

    def forward(self, x: np.ndarray, mode: str = BN_BATCH, record: bool = False):
        if mode == BN_BATCH:
            if x.shape[0] < 2:
                raise BatchTooSmallError(
                    "batch statistics need at least 2 rows, got "
                    f"{x.shape[0]}"
                )
            mean = x.mean(axis=0)
            var = x.var(axis=0)  # biased (population) variance
            if record:
                self.last_mean = mean.copy()
                self.last_var = var.copy()
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv
            return self.gamma * xhat + self.beta, (BN_BATCH, xhat, inv)
        if mode == BN_FROZEN:
            if self.frozen_mean is None:
                raise RuntimeError("frozen statistics requested but none were captured")
            inv = 1.0 / np.sqrt(self.frozen_var + self.eps)
            xhat = (x - self.frozen_mean) * inv
            return self.gamma * xhat + self.beta, (BN_FROZEN, xhat, inv)
        if mode == BN_IDENTITY:
            return self.gamma * x + self.beta, (BN_IDENTITY, x, None)
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    def backward(self, grad: np.ndarray, cache):
        mode, xhat, inv = cache
        grads = {"gamma": (grad * xhat).sum(axis=0), "beta": grad.sum(axis=0)}
        if mode == BN_BATCH:
            # mean and variance depend on every row: full batch-coupled Jacobian
            b = grad.shape[0]
            gh = grad * self.gamma
            gx = (inv / b) * (
                b * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0)
            )
            return gx, grads
        if mode == BN_FROZEN:
            return grad * self.gamma * inv, grads
        return grad * self.gamma, grads

    def freeze(self):
        """Adopt the last recorded batch statistics for the frozen mode."""
        if self.last_mean is None:
            raise RuntimeError("no batch statistics recorded yet")
        self.frozen_mean = self.last_mean.copy()
        self.frozen_var = self.last_var.copy()

    def param_items(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad * mask


class Adam:
    """Adam with bias correction over a fixed, ordered set of parameters."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._order = list(params)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in self._order:
            g = grads[name]
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
