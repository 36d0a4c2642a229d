"""Minimal dense-layer substrate with hand-written backprop.

Everything runs in float64. Layers cache their forward inputs so that
``backward`` can be called once per forward pass; inference code passes
``cache=False`` to skip caching, which also makes forward calls safe to run
concurrently over shared parameters.

Checkpoint format (version 1): ``MMCK`` magic (4 bytes), uint32 version,
uint64 header length, a UTF-8 JSON header, then the raw little-endian
float64 array data. The header is ``{"version": 1, "meta": {...},
"arrays": [{"name","shape","dtype","offset","nbytes"}, ...]}`` with arrays
sorted by name. Writing the same parameters twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ShapeError, StateError

DTYPE = np.float64

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def init_weight(rng: np.random.Generator, d_out: int, d_in: int) -> np.ndarray:
    """Uniform(-s, s) with s = sqrt(6 / (d_in + d_out))."""
    s = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-s, s, size=(d_out, d_in))


class Param:
    """A learnable array paired with its gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)


class Module:
    """Base class providing parameter traversal in construction order."""

    def named_parameters(self, prefix=""):
        for key, attr in vars(self).items():
            if isinstance(attr, Param):
                yield prefix + key, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(f"{prefix}{key}.")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad[...] = 0.0

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        for name, p in self.named_parameters():
            if name not in state:
                raise ShapeError(f"missing parameter {name!r} in state dict")
            arr = np.asarray(state[name], dtype=DTYPE)
            if arr.shape != p.value.shape:
                raise ShapeError(
                    f"parameter {name!r}: expected shape {p.value.shape}, got {arr.shape}"
                )
            p.value[...] = arr


class Linear(Module):
    """y = x @ W.T + b with W of shape [d_out, d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = Param(init_weight(rng, d_out, d_in))
        self.bias = Param(np.zeros(d_out))
        self._x = None

    @property
    def d_in(self):
        return self.weight.value.shape[1]

    @property
    def d_out(self):
        return self.weight.value.shape[0]

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(
                f"linear layer expects [N, {self.d_in}] input, "
                f"got {x.shape} against weights {self.weight.value.shape}"
            )
        self._x = x if cache else None
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad):
        if self._x is None:
            raise StateError("linear backward called before forward")
        grad = np.asarray(grad, dtype=DTYPE)
        self.weight.grad += grad.T @ self._x
        self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value


class LayerNorm(Module):
    """Per-row normalization followed by a learnable affine map."""

    def __init__(self, dim: int, eps: float = 1e-5):
        if dim < 1:
            raise ShapeError("layer norm requires dim >= 1")
        if eps <= 0:
            raise ShapeError("layer norm requires eps > 0")
        self.gamma = Param(np.ones(dim))
        self.beta = Param(np.zeros(dim))
        self.eps = float(eps)
        self._cache = None

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=DTYPE)
        if x.ndim != 2 or x.shape[1] != self.gamma.value.shape[0]:
            raise ShapeError(
                f"layer norm expects [N, {self.gamma.value.shape[0]}], got {x.shape}"
            )
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv) if cache else None
        return self.gamma.value * xhat + self.beta.value

    def backward(self, grad):
        if self._cache is None:
            raise StateError("layer norm backward called before forward")
        xhat, inv = self._cache
        grad = np.asarray(grad, dtype=DTYPE)
        self.gamma.grad += (grad * xhat).sum(axis=0)
        self.beta.grad += grad.sum(axis=0)
        gh = grad * self.gamma.value
        return inv * (
            gh
            - gh.mean(axis=1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=1, keepdims=True)
        )


def normalize_rows(x, eps=1e-5):
    """The pre-affine part of layer norm, exposed for direct checks."""
    x = np.asarray(x, dtype=DTYPE)
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def relu(x):
    return np.maximum(x, 0.0)


def gelu(x):
    """tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    x = np.asarray(x, dtype=DTYPE)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


class Activation(Module):
    KINDS = ("relu", "gelu")

    def __init__(self, kind: str = "gelu"):
        if kind not in self.KINDS:
            raise ShapeError(f"unknown activation {kind!r}; expected one of {self.KINDS}")
        self.kind = kind
        self._x = None

    def forward(self, x, cache=True):
        x = np.asarray(x, dtype=DTYPE)
        if self.kind == "relu":
            self._x = (x, None) if cache else None
            return relu(x)
        t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
        self._x = (x, t) if cache else None
        return 0.5 * x * (1.0 + t)

    def backward(self, grad):
        if self._x is None:
            raise StateError("activation backward called before forward")
        x, t = self._x
        if self.kind == "relu":
            return grad * (x > 0)
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        return grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)


class Mlp(Module):
    """Two dense layers with an activation in between."""

    def __init__(self, d_in, hidden, d_out, rng, activation="gelu"):
        self.fc1 = Linear(d_in, hidden, rng)
        self.act = Activation(activation)
        self.fc2 = Linear(hidden, d_out, rng)

    @property
    def d_in(self):
        return self.fc1.d_in

    @property
    def d_out(self):
        return self.fc2.d_out

    @property
    def macs_per_row(self):
        """Multiply-accumulate count for one input row."""
        return self.fc1.d_in * self.fc1.d_out + self.fc2.d_in * self.fc2.d_out

    def forward(self, x, cache=True):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x, cache), cache), cache)

    def backward(self, grad):
        return self.fc1.backward(self.act.backward(self.fc2.backward(grad)))


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits, labels):
    """Mean cross entropy and the gradient w.r.t. the logits.

    Stabilized by max subtraction; the gradient is (softmax - onehot) / N.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [N, C], got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels must be [{n}], got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad


class Adam:
    """Bias-corrected Adam. ``step`` leaves gradients untouched."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays, meta=None):
    """Write named float64 arrays plus a JSON metadata blob. Deterministic."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=DTYPE)
        raw = arr.astype("<f8", copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": "<f8",
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "meta": meta or {}, "arrays": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ShapeError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ShapeError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()
    arrays = {}
    for entry in header["arrays"]:
        start = entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=entry["dtype"]).reshape(
            entry["shape"]
        ).astype(DTYPE)
    return arrays, header.get("meta", {})
