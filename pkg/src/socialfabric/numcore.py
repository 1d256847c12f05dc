"""Dense float64 kernels with explicit forward/backward pairs.

Every learnable layer in the package is expressed through the functions in
this module. There is no autodiff graph: forward functions return a cache
that the matching backward function consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LN_EPS = 1e-5
BCE_EPS = 1e-7

_MASK64 = (1 << 64) - 1


class InvalidArgument(ValueError):
    """Raised on shape mismatches and out-of-range arguments."""


class NumericFailure(ArithmeticError):
    """Raised when a loss or gradient becomes non-finite."""


# --------------------------------------------------------------------------
# PRNG: xoshiro256** seeded through splitmix64
# --------------------------------------------------------------------------


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator whose 256-bit state is filled by splitmix64.

    Pure integer arithmetic, so a seed yields the same stream on every
    platform. Distribution helpers are built on ``random_u64`` only.
    """

    algorithm = "xoshiro256**/splitmix64"

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            s.append(out)
        self._s = s
        self._spare: float | None = None

    def random_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits."""
        return (self.random_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def integers(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise InvalidArgument(f"integers() needs n > 0, got {n}")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            r = self.random_u64()
            if r < limit:
                return r % n

    def normal(self) -> float:
        """Standard normal via the polar Box-Muller method."""
        if self._spare is not None:
            v, self._spare = self._spare, None
            return v
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        m = np.sqrt(-2.0 * np.log(s) / s)
        self._spare = float(v * m)
        return float(u * m)

    def normal_array(self, shape, std: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        out = np.fromiter((self.normal() for _ in range(n)), dtype=np.float64, count=n)
        return (out * std).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integers(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.asarray(idx, dtype=np.int64)

    def spawn(self, key: int) -> "Rng":
        """Child stream derived from this generator's seed and ``key``."""
        _, mixed = _splitmix64(self.seed ^ ((int(key) * 0xD1B54A32D192ED03) & _MASK64))
        return Rng(mixed)


# --------------------------------------------------------------------------
# Parameters and optimizer
# --------------------------------------------------------------------------


@dataclass(eq=False)
class ParamTensor:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise InvalidArgument(f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def sgd_step(params: Iterable[ParamTensor], lr: float) -> None:
    """value -= lr * grad, then zero the grads."""
    if lr <= 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    for p in params:
        p.value -= lr * p.grad
        p.grad[...] = 0.0


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS):
    """Row-wise layer normalization over the last axis.

    Uses the population variance. Returns ``(out, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    f = x.shape[-1]
    if gain.shape != (f,) or bias.shape != (f,):
        raise InvalidArgument(f"layer_norm: x has {f} features, gain {gain.shape}, bias {bias.shape}")
    if eps <= 0:
        raise InvalidArgument("layer_norm: eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gain + bias, (xhat, inv_std, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    """Returns ``(dx, dgain, dbias)``; parameter grads are summed over all rows."""
    xhat, inv_std, gain = cache
    f = xhat.shape[-1]
    lead = tuple(range(dout.ndim - 1))
    dgain = (dout * xhat).sum(axis=lead)
    dbias = dout.sum(axis=lead)
    dxhat = dout * gain
    dx = inv_std * (
        dxhat
        - dxhat.sum(axis=-1, keepdims=True) / f
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / f
    )
    return dx, dgain, dbias


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise InvalidArgument(f"linear: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W + b


def linear_backward(dout: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Returns ``(dx, dW, db)`` with parameter grads summed over leading axes."""
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ W.T, x2.T @ d2, d2.sum(axis=0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[axis] == 0:
        raise InvalidArgument("softmax of an empty vector")
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(dout: np.ndarray, probs: np.ndarray, axis: int = -1) -> np.ndarray:
    return probs * (dout - (dout * probs).sum(axis=axis, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def bce_loss(score, label):
    """Binary cross-entropy on a probability; returns ``(loss, dloss/dscore)``.

    Works elementwise on arrays. The score is clamped to [1e-7, 1 - 1e-7].
    """
    y = np.asarray(label, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidArgument("bce_loss: labels must be 0 or 1")
    s = np.clip(np.asarray(score, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    dscore = -(y / s) + (1.0 - y) / (1.0 - s)
    if loss.ndim == 0:
        return float(loss), float(dscore)
    return loss, dscore


def ce_loss(logits, label):
    """Softmax cross-entropy. ``logits`` is (K,) with an int label, or (B, K)
    with a label array. Returns ``(loss, dlogits)`` per sample."""
    logits = np.asarray(logits, dtype=np.float64)
    k = logits.shape[-1]
    labels = np.asarray(label)
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidArgument(f"ce_loss: label out of range [0, {k})")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    probs = np.exp(logp)
    onehot = np.zeros_like(logits)
    if logits.ndim == 1:
        onehot[int(labels)] = 1.0
        return float(-logp[int(labels)]), probs - onehot
    rows = np.arange(logits.shape[0])
    onehot[rows, labels] = 1.0
    return -logp[rows, labels], probs - onehot


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------


def grad_check(
    f: Callable[[], float],
    params: Sequence[ParamTensor],
    h: float = 1e-5,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Max relative error between analytic grads and central differences.

    ``f`` recomputes the loss from the current parameter values. Analytic
    gradients are taken from ``p.grad`` unless ``analytic`` is given. Error per
    entry is ``|a - n| / max(1, |a|, |n|)``.
    """
    if not 1e-6 <= h <= 1e-4:
        raise InvalidArgument(f"grad_check step must be in [1e-6, 1e-4], got {h}")
    grads = [np.array(p.grad, copy=True) for p in params] if analytic is None else list(analytic)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericFailure(f"grad_check: non-finite loss perturbing {p.name}[{i}]")
            num = (fp - fm) / (2.0 * h)
            a = gflat[i]
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
    return worst


class DataError(ValueError):
    """Raised when input data files are missing pieces or malformed."""
