"""A small numpy MLP with batch normalization and hand-written backprop.

Hidden layers are ``affine -> batchnorm -> ReLU``; the output layer is affine.
All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import ArchiveError, read_archive, write_archive

MODEL_MAGIC = "DPXM1"


class ModelFormatError(ArchiveError):
    pass


@dataclass
class ForwardCache:
    train: bool
    inputs: list = field(default_factory=list)  # input to each affine layer
    zhat: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    pre_relu: list = field(default_factory=list)


class MLP:
    """Feedforward ReLU network.

    Parameters are exposed by :meth:`parameters` in a fixed order
    (weights, biases, then batch-norm gains and shifts); :meth:`backward`
    returns gradients in the same order.
    """

    def __init__(self, dims, batchnorm: bool = True, momentum: float = 0.1, bn_eps: float = 1e-5):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid dimension chain {dims}")
        self.dims = dims
        self.batchnorm = batchnorm
        self.momentum = momentum
        self.bn_eps = bn_eps
        self.W = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
        self.b = [np.zeros(b) for b in dims[1:]]
        hidden = dims[1:-1] if batchnorm else []
        self.gamma = [np.ones(h) for h in hidden]
        self.beta = [np.zeros(h) for h in hidden]
        self.running_mean = [np.zeros(h) for h in hidden]
        self.running_var = [np.ones(h) for h in hidden]

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.W)

    def parameters(self) -> list[np.ndarray]:
        return [*self.W, *self.b, *self.gamma, *self.beta]

    def buffers(self) -> list[np.ndarray]:
        return [*self.running_mean, *self.running_var]

    def forward(self, X, train: bool = False):
        """Return ``(output, cache)``. Train mode uses and updates batch statistics."""
        a = np.asarray(X, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.in_dim:
            raise ValueError(f"expected batch of shape (B, {self.in_dim}), got {a.shape}")
        if train and self.batchnorm and a.shape[0] < 2:
            raise ValueError("train-mode batch normalization needs at least 2 samples")
        cache = ForwardCache(train=train)
        last = self.n_layers - 1
        for i in range(self.n_layers):
            cache.inputs.append(a)
            z = a @ self.W[i] + self.b[i]
            if i == last:
                a = z
                break
            if self.batchnorm:
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                    B = z.shape[0]
                    m = self.momentum
                    self.running_mean[i] = (1 - m) * self.running_mean[i] + m * mu
                    self.running_var[i] = (1 - m) * self.running_var[i] + m * var * B / (B - 1)
                else:
                    mu, var = self.running_mean[i], self.running_var[i]
                inv_std = 1.0 / np.sqrt(var + self.bn_eps)
                zhat = (z - mu) * inv_std
                cache.zhat.append(zhat)
                cache.inv_std.append(inv_std)
                z = self.gamma[i] * zhat + self.beta[i]
            cache.pre_relu.append(z)
            a = np.maximum(z, 0.0)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite network output")
        return a, cache

    def backward(self, cache: ForwardCache, grad_out) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` with respect to :meth:`parameters`."""
        d = np.asarray(grad_out, dtype=np.float64)
        if len(cache.inputs) != self.n_layers or d.shape != (cache.inputs[0].shape[0], self.out_dim):
            raise ValueError("cache does not match this model / gradient shape")
        gW = [None] * self.n_layers
        gb = [None] * self.n_layers
        gg = [None] * len(self.gamma)
        gB = [None] * len(self.beta)
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                d = d * (cache.pre_relu[i] > 0)
                if self.batchnorm:
                    zhat, inv_std = cache.zhat[i], cache.inv_std[i]
                    gg[i] = np.sum(d * zhat, axis=0)
                    gB[i] = np.sum(d, axis=0)
                    dzhat = d * self.gamma[i]
                    if cache.train:
                        B = d.shape[0]
                        d = (inv_std / B) * (
                            B * dzhat - dzhat.sum(axis=0) - zhat * np.sum(dzhat * zhat, axis=0)
                        )
                    else:
                        d = dzhat * inv_std
            a = cache.inputs[i]
            gW[i] = a.T @ d
            gb[i] = d.sum(axis=0)
            if i > 0:
                d = d @ self.W[i].T
        return [*gW, *gb, *gg, *gB]

    def copy(self) -> "MLP":
        other = MLP(self.dims, self.batchnorm, self.momentum, self.bn_eps)
        for dst, src in zip(other.parameters() + other.buffers(), self.parameters() + self.buffers()):
            dst[...] = src
        return other


def init_xavier(seed: int, dims, batchnorm: bool = True, momentum: float = 0.1, bn_eps: float = 1e-5) -> MLP:
    """Xavier-uniform weights, zero biases, unit batch-norm gains."""
    model = MLP(dims, batchnorm=batchnorm, momentum=momentum, bn_eps=bn_eps)
    rng = np.random.default_rng(seed)
    for W in model.W:
        lim = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-lim, lim, size=W.shape)
    return model


def relu_clamp_head(output, n_lam: int):
    """Split ``output`` into ``(lam, nu)`` with ``lam = max(raw, 0)``."""
    out = np.asarray(output)
    return np.maximum(out[:, :n_lam], 0.0), out[:, n_lam:]


def relu_clamp_head_backward(output, grad_lam, grad_nu):
    """Gradient w.r.t. the raw head output; clamped (negative) coordinates get zero."""
    n_lam = grad_lam.shape[1]
    gate = np.asarray(output)[:, :n_lam] >= 0.0
    return np.concatenate([grad_lam * gate, grad_nu], axis=1)


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float):
        if not learning_rate >= 0:
            raise ValueError("learning rate must be nonnegative")
        self.learning_rate = learning_rate

    def step(self, params, grads, ascent: bool = True):
        sign = 1.0 if ascent else -1.0
        for p, g in zip(params, grads, strict=True):
            p += sign * self.learning_rate * g


class Adam:
    kind = "adam"

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not learning_rate >= 0:
            raise ValueError("learning rate must be nonnegative")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads, ascent: bool = True):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        sign = 1.0 if ascent else -1.0
        for p, g, m, v in zip(params, grads, self.m, self.v, strict=True):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p += sign * self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, learning_rate: float):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def save_model(model: MLP, path) -> str:
    meta = {
        "format": MODEL_MAGIC,
        "dims": model.dims,
        "batchnorm": model.batchnorm,
        "momentum": model.momentum,
        "bn_eps": model.bn_eps,
    }
    arrays = {}
    for i, (W, b) in enumerate(zip(model.W, model.b)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    for i in range(len(model.gamma)):
        arrays[f"gamma{i}"] = model.gamma[i]
        arrays[f"beta{i}"] = model.beta[i]
        arrays[f"running_mean{i}"] = model.running_mean[i]
        arrays[f"running_var{i}"] = model.running_var[i]
    return write_archive(path, MODEL_MAGIC, meta, arrays)


def load_model(path, expected_out_dim: int | None = None, expected_in_dim: int | None = None) -> MLP:
    meta, arrays, _ = read_archive(Path(path), MODEL_MAGIC)
    model = MLP(meta["dims"], meta["batchnorm"], meta["momentum"], meta["bn_eps"])
    if expected_out_dim is not None and model.out_dim != expected_out_dim:
        raise ModelFormatError(f"model output dimension {model.out_dim} != expected {expected_out_dim}")
    if expected_in_dim is not None and model.in_dim != expected_in_dim:
        raise ModelFormatError(f"model input dimension {model.in_dim} != expected {expected_in_dim}")
    try:
        for i in range(model.n_layers):
            model.W[i][...] = arrays[f"W{i}"]
            model.b[i][...] = arrays[f"b{i}"]
        for i in range(len(model.gamma)):
            model.gamma[i][...] = arrays[f"gamma{i}"]
            model.beta[i][...] = arrays[f"beta{i}"]
            model.running_mean[i][...] = arrays[f"running_mean{i}"]
            model.running_var[i][...] = arrays[f"running_var{i}"]
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"model file inconsistent with its manifest: {exc}") from exc
    return model
