"""Small numpy neural toolkit with exact backpropagation.

Only what the two agents need: dense layers, single-head attention over a
handful of tokens, Gaussian reparameterisation, a few losses and Adam.
Layers cache their forward inputs, so ``backward`` must follow the matching
``forward`` call. Arrays are float32 unless a layer is built with another
dtype (gradient checks run in float64).
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "linear", "sigmoid")
MAGIC = b"GSNN"
VERSION = 1


class ShapeMismatch(ValueError):
    pass


class CheckpointError(Exception):
    pass


class Module:
    """Parameter container; subclasses list their sub-layers in ``children``."""

    children: list["Module"]

    def params(self) -> list[np.ndarray]:
        out = []
        for c in self.children:
            out.extend(c.params())
        return out

    def grads(self) -> list[np.ndarray]:
        out = []
        for c in self.children:
            out.extend(c.grads())
        return out

    def zero_grad(self):
        for g in self.grads():
            g[...] = 0

    def load_params(self, arrays):
        mine = self.params()
        if len(arrays) != len(mine):
            raise ShapeMismatch(f"expected {len(mine)} arrays, got {len(arrays)}")
        for p, a in zip(mine, arrays):
            if p.shape != np.shape(a):
                raise ShapeMismatch(f"parameter shape {p.shape} vs {np.shape(a)}")
            p[...] = a

    def copy_from(self, other: "Module"):
        self.load_params(other.params())


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, activation: str = "relu",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        if activation == "relu":
            std = np.sqrt(2.0 / n_in)
            w = rng.normal(0.0, std, size=(n_out, n_in))
        else:
            lim = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-lim, lim, size=(n_out, n_in))
        self.W = w.astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self.children = []
        self._x = self._y = None

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def params(self):
        return [self.W, self.b]

    def grads(self):
        return [self.gW, self.gb]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.n_in}")
        z = x @ self.W.T + self.b
        if self.activation == "relu":
            y = np.maximum(z, 0)
        elif self.activation == "sigmoid":
            y = 1.0 / (1.0 + np.exp(-z))
        else:
            y = z
        self._x, self._y = x, y
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward before forward")
        if gy.shape != self._y.shape:
            raise ShapeMismatch(f"grad shape {gy.shape} != output {self._y.shape}")
        if self.activation == "relu":
            gz = gy * (self._y > 0)
        elif self.activation == "sigmoid":
            gz = gy * self._y * (1 - self._y)
        else:
            gz = gy
        x2 = self._x.reshape(-1, self.n_in)
        gz2 = gz.reshape(-1, self.n_out)
        self.gW += gz2.T @ x2
        self.gb += gz2.sum(axis=0)
        return gz @ self.W


class Stack(Module):
    def __init__(self, widths: list[int], activations: list[str], rng=None, dtype=np.float32):
        if len(activations) != len(widths) - 1:
            raise ValueError("need one activation per layer")
        self.children = [Dense(a, b, act, rng, dtype)
                         for a, b, act in zip(widths[:-1], widths[1:], activations)]

    def forward(self, x):
        for layer in self.children:
            x = layer.forward(x)
        return x

    def backward(self, g):
        for layer in reversed(self.children):
            g = layer.backward(g)
        return g


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


class Attention(Module):
    """Single-head scaled dot-product self-attention over (batch, tokens, width)."""

    def __init__(self, width: int, rng=None, dtype=np.float32):
        self.q = Dense(width, width, "linear", rng, dtype)
        self.k = Dense(width, width, "linear", rng, dtype)
        self.v = Dense(width, width, "linear", rng, dtype)
        self.children = [self.q, self.k, self.v]
        self.width = width
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[-1] != self.width:
            raise ShapeMismatch(f"expected (batch, tokens, {self.width}), got {x.shape}")
        q, k, v = self.q.forward(x), self.k.forward(x), self.v.forward(x)
        scale = 1.0 / np.sqrt(self.width)
        a = softmax(q @ k.transpose(0, 2, 1) * scale)
        self._cache = (q, k, v, a, scale)
        return a @ v

    def weights(self) -> np.ndarray:
        return self._cache[3]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        q, k, v, a, scale = self._cache
        ga = gy @ v.transpose(0, 2, 1)
        gv = a.transpose(0, 2, 1) @ gy
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ k
        gk = gs.transpose(0, 2, 1) @ q
        return self.q.backward(gq) + self.k.backward(gk) + self.v.backward(gv)


# -- losses -----------------------------------------------------------------------------

def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements, with its gradient."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d)), (2.0 / d.size) * d


def huber(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"{pred.shape} vs {target.shape}")
    d = pred - target
    ad = np.abs(d)
    quad = ad <= delta
    loss = np.where(quad, 0.5 * d * d, delta * (ad - 0.5 * delta))
    grad = np.where(quad, d, delta * np.sign(d)) / d.size
    return float(loss.mean()), grad


def kl_gaussian(mu: np.ndarray, logvar: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims and averaged over rows."""
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"{mu.shape} vs {logvar.shape}")
    mu2 = np.atleast_2d(mu)
    lv2 = np.atleast_2d(logvar)
    n = mu2.shape[0]
    ev = np.exp(lv2)
    kl = 0.5 * np.sum(mu2 * mu2 + ev - 1.0 - lv2) / n
    return float(max(kl, 0.0)), (mu2 / n).reshape(mu.shape), (0.5 * (ev - 1.0) / n).reshape(mu.shape)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, noise: np.ndarray) -> np.ndarray:
    if not (mu.shape == logvar.shape == noise.shape):
        raise ShapeMismatch("mu, logvar and noise must share a shape")
    return mu + np.exp(0.5 * logvar) * noise


# -- optimiser --------------------------------------------------------------------------

class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads: list[np.ndarray]):
        if len(grads) != len(self.params):
            raise ShapeMismatch("gradient list does not match parameters")
        self.step_count += 1
        t = self.step_count
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ShapeMismatch(f"grad {g.shape} vs param {p.shape}")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def clip_grads(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


# -- checkpoints ------------------------------------------------------------------------

def dump_params(arrays: list[np.ndarray], meta: dict | None = None) -> bytes:
    """Header (magic, version, array count, metadata length) + JSON metadata,
    then per array its (rows, cols) and row-major little-endian float32 data."""
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, len(arrays), len(meta_bytes)))
    buf.write(meta_bytes)
    for a in arrays:
        a2 = np.atleast_2d(a)
        rows, cols = (1, a.size) if a.ndim == 1 else a2.shape
        buf.write(struct.pack("<II", rows, cols))
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return buf.getvalue()


def parse_params(data: bytes) -> tuple[list[np.ndarray], dict]:
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic; not a network checkpoint")
    try:
        version, count, mlen = struct.unpack_from("<III", data, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 16
        meta = json.loads(data[off:off + mlen].decode())
        off += mlen
        arrays = []
        for _ in range(count):
            rows, cols = struct.unpack_from("<II", data, off)
            off += 8
            n = rows * cols
            a = np.frombuffer(data, dtype="<f4", count=n, offset=off).astype(np.float32)
            off += 4 * n
            arrays.append(a.reshape(rows, cols))
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"truncated or corrupt checkpoint: {e}") from e
    if off != len(data):
        raise CheckpointError("trailing bytes after last array")
    return arrays, meta


def save_module(path, module: Module, meta: dict | None = None):
    Path(path).write_bytes(dump_params(module.params(), meta))


def load_arrays(path) -> tuple[list[np.ndarray], dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(str(e)) from e
    return parse_params(data)


def restore(module: Module, arrays: list[np.ndarray]):
    mine = module.params()
    if len(mine) != len(arrays):
        raise CheckpointError(f"checkpoint has {len(arrays)} arrays, network {len(mine)}")
    for p, a in zip(mine, arrays):
        if a.size != p.size:
            raise CheckpointError(f"array size {a.size} does not fit parameter {p.shape}")
        p[...] = a.reshape(p.shape)
