"""Two-layer GRU network with a linear head, forward and backprop-through-time.

Cell convention (gate order z, r, h in all stacked weights)::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    c  = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * c

Sequences are batched as ``(T, B, I)``; every batch column keeps its own
hidden state, which starts at zero.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ParameterError

_MAGIC = b"GRUN"
_VERSION = 1


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split form keeps exp() from overflowing for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruLayer:
    """Stacked gate weights: ``W (3H, I)``, ``U (3H, H)``, ``b (3H,)``."""

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        H3 = self.U.shape[0]
        if H3 % 3 or self.U.shape != (H3, H3 // 3) or self.W.shape[0] != H3 or self.b.shape != (H3,):
            raise DimensionError(f"inconsistent GRU layer shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


@dataclass
class GruNetParams:
    layers: list
    head_W: np.ndarray
    head_b: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.head_W = np.asarray(self.head_W, dtype=np.float64)
        self.head_b = np.asarray(self.head_b, dtype=np.float64)
        if not self.layers:
            raise DimensionError("a GRU net needs at least one layer")
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if nxt.input_size != prev.hidden_size:
                raise DimensionError("GRU layer sizes do not chain")
        if self.head_W.shape != (self.head_b.shape[0], self.layers[-1].hidden_size):
            raise DimensionError(f"head shape {self.head_W.shape} does not match last hidden size")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def hidden_sizes(self) -> tuple:
        return tuple(l.hidden_size for l in self.layers)

    @property
    def output_size(self) -> int:
        return self.head_W.shape[0]

    @classmethod
    def init(cls, input_size: int, hidden_sizes, output_size: int, seed: int = 0, tag: str = "") -> "GruNetParams":
        """Seeded uniform init in ``+-1/sqrt(fan_in)`` per weight matrix."""
        rng = np.random.default_rng(seed)
        layers, fan = [], input_size
        for H in hidden_sizes:
            layers.append(GruLayer(rng.uniform(-1, 1, (3 * H, fan)) / np.sqrt(fan),
                                   rng.uniform(-1, 1, (3 * H, H)) / np.sqrt(H),
                                   rng.uniform(-1, 1, 3 * H) / np.sqrt(H)))
            fan = H
        return cls(layers, rng.uniform(-1, 1, (output_size, fan)) / np.sqrt(fan),
                   rng.uniform(-1, 1, output_size) / np.sqrt(fan), tag)

    @classmethod
    def zeros(cls, input_size: int, hidden_sizes, output_size: int, tag: str = "") -> "GruNetParams":
        layers, fan = [], input_size
        for H in hidden_sizes:
            layers.append(GruLayer(np.zeros((3 * H, fan)), np.zeros((3 * H, H)), np.zeros(3 * H)))
            fan = H
        return cls(layers, np.zeros((output_size, fan)), np.zeros(output_size), tag)

    def arrays(self) -> list:
        """All parameter arrays in a fixed order (views, not copies)."""
        out = []
        for l in self.layers:
            out += [l.W, l.U, l.b]
        return out + [self.head_W, self.head_b]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def load_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size != self.num_parameters:
            raise DimensionError(f"vector of {vec.size} entries for {self.num_parameters} parameters")
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    def copy(self) -> "GruNetParams":
        return GruNetParams([GruLayer(l.W.copy(), l.U.copy(), l.b.copy()) for l in self.layers],
                            self.head_W.copy(), self.head_b.copy(), self.tag)

    @property
    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())


def gru_cell_step(layer: GruLayer, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """One step for a batch: ``x (B, I)``, ``h (B, H)`` (1-D inputs also accepted)."""
    x, h = np.asarray(x, dtype=np.float64), np.asarray(h, dtype=np.float64)
    if x.shape[-1] != layer.input_size or h.shape[-1] != layer.hidden_size:
        raise DimensionError(f"cell expects input {layer.input_size} / hidden {layer.hidden_size}, "
                             f"got {x.shape[-1]} / {h.shape[-1]}")
    H = layer.hidden_size
    a = x @ layer.W.T + layer.b
    a[..., :2 * H] += h @ layer.U[:2 * H].T
    z = sigmoid(a[..., :H])
    r = sigmoid(a[..., H:2 * H])
    c = np.tanh(a[..., 2 * H:] + (r * h) @ layer.U[2 * H:].T)
    return (1.0 - z) * h + z * c


@dataclass
class _LayerCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    c: np.ndarray


@dataclass
class ForwardCache:
    layers: list = field(default_factory=list)
    top: np.ndarray | None = None


def _layer_forward(layer: GruLayer, X: np.ndarray, keep: bool):
    T, B, _ = X.shape
    H = layer.hidden_size
    XW = X @ layer.W.T + layer.b
    Uzr, Uh = layer.U[:2 * H].T, layer.U[2 * H:].T
    h = np.zeros((B, H))
    out = np.empty((T, B, H))
    if keep:
        hp, zs, rs, cs = (np.empty((T, B, H)) for _ in range(4))
    for t in range(T):
        a = XW[t]
        zr = sigmoid(a[:, :2 * H] + h @ Uzr)
        z, r = zr[:, :H], zr[:, H:]
        c = np.tanh(a[:, 2 * H:] + (r * h) @ Uh)
        if keep:
            hp[t], zs[t], rs[t], cs[t] = h, z, r, c
        h = (1.0 - z) * h + z * c
        out[t] = h
    return out, (_LayerCache(X, hp, zs, rs, cs) if keep else None)


def gru_forward(params: GruNetParams, inputs: np.ndarray, keep_cache: bool = False):
    """Run the net over ``(T, B, I)`` inputs; returns ``(T, B, O)`` (and a cache)."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3 or X.shape[-1] != params.input_size:
        raise DimensionError(f"net expects (T, B, {params.input_size}) inputs, got {X.shape}")
    cache = ForwardCache()
    for layer in params.layers:
        X, lc = _layer_forward(layer, X, keep_cache)
        cache.layers.append(lc)
    cache.top = X
    out = X @ params.head_W.T + params.head_b
    return (out, cache) if keep_cache else out


def _layer_backward(layer: GruLayer, lc: _LayerCache, dH: np.ndarray):
    T, B, H = dH.shape
    Uz, Ur, Uh = layer.U[:H], layer.U[H:2 * H], layer.U[2 * H:]
    dA = np.empty((T, B, 3 * H))
    dU = np.zeros_like(layer.U)
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h, z, r, c = lc.h_prev[t], lc.z[t], lc.r[t], lc.c[t]
        dh = dH[t] + dh_next
        dz = dh * (c - h)
        da_h = dh * z * (1.0 - c * c)
        drh = da_h @ Uh
        da_z = dz * z * (1.0 - z)
        da_r = drh * h * r * (1.0 - r)
        dA[t, :, :H], dA[t, :, H:2 * H], dA[t, :, 2 * H:] = da_z, da_r, da_h
        dU[:H] += da_z.T @ h
        dU[H:2 * H] += da_r.T @ h
        dU[2 * H:] += da_h.T @ (r * h)
        dh_next = dh * (1.0 - z) + drh * r + da_z @ Uz + da_r @ Ur
    flat = dA.reshape(T * B, 3 * H)
    dW = flat.T @ lc.x.reshape(T * B, -1)
    db = flat.sum(axis=0)
    dX = dA @ layer.W
    return GruLayer(dW, dU, db), dX


def gru_backward(params: GruNetParams, cache: ForwardCache, d_out: np.ndarray) -> GruNetParams:
    """Gradients of a scalar loss given ``dL/d(outputs)`` shaped ``(T, B, O)``."""
    if cache.top is None or cache.layers[0] is None:
        raise ParameterError("backward needs a forward pass run with keep_cache=True")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != cache.top.shape[:2] + (params.output_size,):
        raise DimensionError(f"output gradient {d_out.shape} does not match outputs "
                             f"{cache.top.shape[:2] + (params.output_size,)}")
    top = cache.top
    d_head_W = d_out.reshape(-1, params.output_size).T @ top.reshape(-1, top.shape[-1])
    d_head_b = d_out.reshape(-1, params.output_size).sum(axis=0)
    dX = d_out @ params.head_W
    grads = []
    for layer, lc in zip(reversed(params.layers), reversed(cache.layers)):
        g, dX = _layer_backward(layer, lc, dX)
        grads.append(g)
    return GruNetParams(grads[::-1], d_head_W, d_head_b, params.tag)


# ---------------------------------------------------------------- file I/O

def write_params(params: GruNetParams, path) -> None:
    """Binary layout (little-endian): magic ``GRUN``, uint8 version, uint8
    layer count, uint16 tag length, uint32 input size, uint32 hidden size per
    layer, uint32 output size, tag bytes (ASCII mode name), float64 body in
    :meth:`GruNetParams.arrays` order, then uint32 CRC-32 of all prior bytes."""
    tag = params.tag.encode("ascii")
    head = _MAGIC + struct.pack("<BBH", _VERSION, len(params.layers), len(tag))
    head += struct.pack(f"<I{len(params.layers)}II", params.input_size, *params.hidden_sizes, params.output_size)
    blob = head + tag + params.to_vector().astype("<f8").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob + struct.pack("<I", zlib.crc32(blob)))
    tmp.replace(path)


def read_params(path) -> GruNetParams:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not a GRU weight file")
    if struct.unpack("<I", raw[-4:])[0] != zlib.crc32(raw[:-4]):
        raise FormatError(f"{path}: checksum mismatch")
    version, n_layers, tag_len = struct.unpack("<BBH", raw[4:8])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 8
    dims = struct.unpack(f"<I{n_layers}II", raw[pos:pos + 4 * (n_layers + 2)])
    pos += 4 * (n_layers + 2)
    tag = raw[pos:pos + tag_len].decode("ascii")
    pos += tag_len
    params = GruNetParams.zeros(dims[0], dims[1:-1], dims[-1], tag)
    body = np.frombuffer(raw[pos:-4], dtype="<f8")
    if body.size != params.num_parameters:
        raise FormatError(f"{path}: body holds {body.size} values, header implies {params.num_parameters}")
    params.load_vector(body.astype(np.float64))
    return params
