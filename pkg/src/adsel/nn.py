"""Layer primitives with hand-written float64 backward passes.

No autodiff framework: each layer caches what its backward pass needs on
the instance, so forward and backward must be called in matched pairs.
Trainable arrays are wrapped in Param so the optimizer and the persistence
code can walk them by name.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "NNError",
    "Param",
    "Conv1dSame",
    "BatchNorm1d",
    "Relu",
    "GlobalAvgPool",
    "Dense",
    "Adam",
    "masked_log_softmax",
    "softmax",
    "cross_entropy",
    "finite_difference_gradient",
    "relative_error",
]


class NNError(ValueError):
    pass


class Param:
    """A trainable array plus its gradient accumulator."""

    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, name: str, value: np.ndarray, trainable: bool = True):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name}, shape={self.value.shape})"


def he_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)


class Conv1dSame:
    """1-D convolution over (batch, channels, length) that preserves length.

    Even kernels pad one extra point on the right: left pad = (k - 1) // 2.
    """

    def __init__(
        self,
        name: str,
        channels_in: int,
        filters: int,
        kernel_size: int,
        rng: np.random.Generator,
    ):
        if channels_in < 1 or filters < 1 or kernel_size < 1:
            raise NNError("conv sizes must be positive")
        self.kernel_size = kernel_size
        self.weight = Param(
            f"{name}.weight",
            he_init(rng, (filters, channels_in, kernel_size), channels_in * kernel_size),
        )
        self.bias = Param(f"{name}.bias", np.zeros(filters))
        self._cols: np.ndarray | None = None
        self._padded: np.ndarray | None = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = self.kernel_size
        if x.ndim != 3 or x.shape[1] != self.weight.value.shape[1]:
            raise NNError(
                f"conv input shape {x.shape} does not match "
                f"{self.weight.value.shape[1]} channels"
            )
        if x.shape[2] < k:
            raise NNError(f"input length {x.shape[2]} shorter than kernel {k}")
        left = (k - 1) // 2
        padded = np.pad(x, ((0, 0), (0, 0), (left, k - 1 - left)))
        b, c, lp = padded.shape
        s0, s1, s2 = padded.strides
        cols = np.lib.stride_tricks.as_strided(
            padded, (b, c, lp - k + 1, k), (s0, s1, s2, s2), writeable=False
        )
        self._padded, self._cols = padded, cols
        out = np.einsum("bclk,fck->bfl", cols, self.weight.value, optimize=True)
        return out + self.bias.value[None, :, None]

    def backward(self, gout: np.ndarray) -> np.ndarray:
        if self._cols is None:
            raise NNError("backward before forward")
        self.weight.grad += np.einsum("bfl,bclk->fck", gout, self._cols, optimize=True)
        self.bias.grad += gout.sum(axis=(0, 2))
        length = gout.shape[2]
        gpad = np.zeros_like(self._padded)
        w = self.weight.value
        for j in range(self.kernel_size):
            gpad[:, :, j : j + length] += np.einsum(
                "bfl,fc->bcl", gout, w[:, :, j], optimize=True
            )
        left = (self.kernel_size - 1) // 2
        return gpad[:, :, left : left + length]


class BatchNorm1d:
    """Per-channel batch normalization over the (batch, length) axes.

    Running statistics use the same biased variance as the batch pass, so a
    batch whose statistics equal the running ones behaves identically in
    train and inference modes.
    """

    def __init__(self, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Param(f"{name}.gamma", np.ones(channels))
        self.beta = Param(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps
        self._cache: tuple | None = None

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def state(self) -> dict[str, np.ndarray]:
        prefix = self.gamma.name.rsplit(".", 1)[0]
        return {
            f"{prefix}.running_mean": self.running_mean,
            f"{prefix}.running_var": self.running_var,
        }

    def forward(self, x: np.ndarray, train: bool, update_running: bool = True) -> np.ndarray:
        if train:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            if update_running:
                # In place: persistence code holds references to these arrays.
                m = self.momentum
                self.running_mean += m * (mean - self.running_mean)
                self.running_var += m * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        self._cache = (xhat, inv_std, train)
        return self.gamma.value[None, :, None] * xhat + self.beta.value[None, :, None]

    def backward(self, gout: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise NNError("backward before forward")
        xhat, inv_std, train = self._cache
        self.gamma.grad += (gout * xhat).sum(axis=(0, 2))
        self.beta.grad += gout.sum(axis=(0, 2))
        gxhat = gout * self.gamma.value[None, :, None]
        if not train:
            # Inference mode is an affine map; statistics carry no gradient.
            return gxhat * inv_std[None, :, None]
        n = xhat.shape[0] * xhat.shape[2]
        s1 = gxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
        return (inv_std[None, :, None] / n) * (n * gxhat - s1 - xhat * s2)


class Relu:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._keep = x > 0.0
        return np.where(self._keep, x, 0.0)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        return np.where(self._keep, gout, 0.0)


class GlobalAvgPool:
    """(batch, channels, length) -> (batch, channels), mean over time."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._length = x.shape[2]
        return x.mean(axis=2)

    def backward(self, gout: np.ndarray) -> np.ndarray:
        g = np.broadcast_to(gout[:, :, None], gout.shape + (self._length,))
        return g / self._length


class Dense:
    def __init__(self, name: str, width_in: int, width_out: int, rng: np.random.Generator):
        if width_in < 1 or width_out < 1:
            raise NNError("dense widths must be positive")
        self.weight = Param(f"{name}.weight", he_init(rng, (width_in, width_out), width_in))
        self.bias = Param(f"{name}.bias", np.zeros(width_out))
        self._x: np.ndarray | None = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.weight.value.shape[0]:
            raise NNError(
                f"dense input width {x.shape[1]} != {self.weight.value.shape[0]}"
            )
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gout: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise NNError("backward before forward")
        self.weight.grad += self._x.T @ gout
        self.bias.grad += gout.sum(axis=0)
        return gout @ self.weight.value.T


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-softmax; rows of `mask=False` entries get -inf log prob.

    Masked entries come out as exactly -inf, so exp() of the result has
    exact zeros there.
    """
    if mask is None:
        z = logits
    else:
        if not mask.any(axis=-1).all():
            raise NNError("softmax mask leaves a row with no valid entry")
        z = np.where(mask, logits, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    return np.exp(masked_log_softmax(logits, mask))


def cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray | None = None,
    sample_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean weighted negative log likelihood and its gradient w.r.t. logits.

    Weighted samples still divide by the batch size, not the weight total,
    so reweighting one task cannot silently rescale the other against
    the shared loss_weight_lambda.
    """
    batch = logits.shape[0]
    rows = np.arange(batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise NNError("label index outside logit width")
    if mask is not None and not mask[rows, labels].all():
        bad = [int(i) for i in rows[~mask[rows, labels]]]
        raise NNError(f"labels fall outside the valid mask at rows {bad}")
    logp = masked_log_softmax(logits, mask)
    nll = -logp[rows, labels]
    if sample_weights is None:
        weights = np.ones(batch)
    else:
        weights = np.asarray(sample_weights, dtype=np.float64)
        if weights.shape != (batch,) or (weights < 0).any():
            raise NNError("sample_weights must be nonnegative, one per row")
    loss = float((weights * nll).sum() / batch)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (weights / batch)[:, None]
    if mask is not None:
        grad = np.where(mask, grad, 0.0)
    return loss, grad


class Adam:
    """Adaptive-moment optimizer, standard bias correction.

    Frozen params (trainable=False) are skipped entirely: neither their
    values nor their moment estimates move while frozen.
    """

    def __init__(
        self,
        params: list[Param],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if learning_rate < 0:
            raise NNError("learning_rate must be >= 0")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]
        self._t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad[...] = 0.0

    def step(self) -> None:
        self._t += 1
        scale = (
            self.learning_rate
            * math.sqrt(1.0 - self.beta2**self._t)
            / (1.0 - self.beta1**self._t)
        )
        for p, m, v in zip(self.params, self._m, self._v):
            if not p.trainable:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.value -= scale * m / (np.sqrt(v) + self.eps)


def finite_difference_gradient(f, array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. array, in place.

    f must be a pure function of the array's current contents; the array is
    restored exactly after each probe.
    """
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        kept = array[idx]
        array[idx] = kept + step
        up = f()
        array[idx] = kept - step
        down = f()
        array[idx] = kept
        grad[idx] = (up - down) / (2.0 * step)
        it.iternext()
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Worst absolute disagreement, normalized by the larger gradient scale.

    The scale floor keeps parameters with an exactly-zero true gradient
    (e.g. a conv bias immediately followed by batch normalization) from
    turning float roundoff into a spurious relative error.
    """
    scale = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-6)
    return float(np.abs(a - b).max(initial=0.0)) / scale
