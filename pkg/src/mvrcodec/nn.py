"""Minimal deterministic convolution engine and the MVRW weight format.

Tensors are plain float32 numpy arrays shaped (C, H, W). There is no
autograd and no training here. Convolutions accumulate one kernel tap at
a time in a fixed loop order, so given identical inputs and weights the
outputs are bit-identical from run to run.

Weight files ("MVRW"):

    magic      4 bytes  b"MVRW"
    version    u32      1
    precision  u8       0 = float32 storage, 1 = float16 storage
    quality    u8       quality index the set was built for
    nsections  u16
    section:
        name_len u16, name utf-8 bytes
        kind     u8   0 = convolution stack, 1 = factorized prior
        kind 0: nlayers u16, then per layer
                mode u8 (0 down / 1 up), stride u8,
                activation u8 (0 none / 1 leaky_relu),
                out u16, in u16, kh u16, kw u16,
                weights out*in*kh*kw values, bias out values
        kind 1: channels u16, nknots u16, then per channel
                nknots float32 knot positions, nknots float32 CDF values

All integers and floats are little-endian. Layer payload width follows
the precision flag; prior knots are always float32 so entropy tables do
not depend on it. float16 payloads are widened back to float32 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .entropy import FactorizedPrior
from .errors import DomainError, FormatError, ShapeError, TruncatedError, VersionError

__all__ = [
    "LEAKY_SLOPE",
    "ConvLayer",
    "ModelWeights",
    "leaky_relu",
    "conv2d",
    "deconv2d",
    "apply_layer",
    "run_stack",
    "save_weights",
    "load_weights",
]

MAGIC = b"MVRW"
VERSION = 1
LEAKY_SLOPE = np.float32(0.2)

_MODES = ("down", "up")
_ACTIVATIONS = ("none", "leaky_relu")


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    """Identity for non-negative values, `slope * x` below zero."""
    x = np.asarray(x)
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def _as_chw(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {x.shape}")
    return x


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Strided cross-correlation with zero "same" padding of floor(k/2).

    Output spatial dims are ceil(H / stride). The bottom/right edge is
    zero-padded further when the last window would overrun.
    """
    x = _as_chw(x)
    cout, cin, kh, kw = weights.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    _, h, w = x.shape
    oh = -(-h // stride)
    ow = -(-w // stride)
    pt, pl = kh // 2, kw // 2
    pb = max(0, (oh - 1) * stride + kh - pt - h)
    pr = max(0, (ow - 1) * stride + kw - pl - w)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    # One im2col copy and a single GEMM; tap-by-tap accumulation is an
    # order of magnitude slower on these shapes.
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    col = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        cin * kh * kw, oh * ow
    )
    acc = weights.reshape(cout, cin * kh * kw) @ col
    acc += bias.astype(np.float32)[:, None]
    return acc.reshape(cout, oh, ow)


def deconv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Transposed counterpart of conv2d; output spatial dims are H * stride."""
    x = _as_chw(x)
    cout, cin, kh, kw = weights.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    if stride < 1:
        raise DomainError(f"stride must be >= 1, got {stride}")
    _, h, w = x.shape
    oh, ow = h * stride, w * stride
    pt, pl = kh // 2, kw // 2
    ah = max((h - 1) * stride + kh, pt + oh)
    aw = max((w - 1) * stride + kw, pl + ow)
    wmat = weights.transpose(2, 3, 0, 1).reshape(kh * kw * cout, cin)
    cols = (wmat @ x.reshape(cin, h * w)).reshape(kh, kw, cout, h, w)
    acc = np.zeros((cout, ah, aw), dtype=np.float32)
    hi = (h - 1) * stride + 1
    wi = (w - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            acc[:, i : i + hi : stride, j : j + wi : stride] += cols[i, j]
    out = acc[:, pt : pt + oh, pl : pl + ow]
    return out + bias.astype(np.float32)[:, None, None]


@dataclass
class ConvLayer:
    """One convolution with its weights.

    mode "down" is a strided convolution, "up" the transposed version.
    weights are (out, in, kh, kw) float32, bias is (out,) float32.
    """

    mode: str
    stride: int
    activation: str
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise DomainError(f"unknown layer mode {self.mode!r}")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.stride < 1:
            raise DomainError(f"stride must be >= 1, got {self.stride}")
        if self.weights.ndim != 4:
            raise ShapeError(f"weights must be (out, in, kh, kw), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} filters"
            )
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]


def apply_layer(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    if layer.mode == "down":
        out = conv2d(x, layer.weights, layer.bias, layer.stride)
    else:
        out = deconv2d(x, layer.weights, layer.bias, layer.stride)
    if layer.activation == "leaky_relu":
        out = leaky_relu(out)
    return out


def run_stack(layers: list[ConvLayer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = apply_layer(layer, x)
    return x


@dataclass
class ModelWeights:
    """Named convolution stacks plus the bottleneck prior for one quality."""

    subnets: dict[str, list[ConvLayer]] = field(default_factory=dict)
    quality: int = 0
    precision: str = "f32"
    z_prior: FactorizedPrior | None = None

    def __post_init__(self) -> None:
        if self.precision not in ("f32", "f16"):
            raise DomainError(f"precision must be f32 or f16, got {self.precision!r}")
        if not 0 <= self.quality <= 255:
            raise DomainError(f"quality index out of range: {self.quality}")
        self.validate_chain()

    def validate_chain(self) -> None:
        """Every layer must consume exactly the channels the previous one produced."""
        for name, layers in self.subnets.items():
            for prev, nxt in zip(layers, layers[1:]):
                if prev.out_channels != nxt.in_channels:
                    raise ShapeError(
                        f"{name}: layer producing {prev.out_channels} channels feeds "
                        f"a layer expecting {nxt.in_channels}"
                    )


def _pack_array(arr: np.ndarray, precision: str) -> bytes:
    if precision == "f16":
        return arr.astype("<f2").tobytes()
    return arr.astype("<f4").tobytes()


def save_weights(weights: ModelWeights, path: str) -> None:
    weights.validate_chain()
    precision = weights.precision
    out = bytearray()
    out += MAGIC
    out += struct.pack("<IBB", VERSION, 1 if precision == "f16" else 0, weights.quality)
    nsections = len(weights.subnets) + (1 if weights.z_prior is not None else 0)
    out += struct.pack("<H", nsections)
    for name, layers in weights.subnets.items():
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BH", 0, len(layers))
        for layer in layers:
            cout, cin, kh, kw = layer.weights.shape
            out += struct.pack(
                "<BBBHHHH",
                _MODES.index(layer.mode),
                layer.stride,
                _ACTIVATIONS.index(layer.activation),
                cout,
                cin,
                kh,
                kw,
            )
            out += _pack_array(layer.weights, precision)
            out += _pack_array(layer.bias, precision)
    if weights.z_prior is not None:
        raw = b"z_prior"
        prior = weights.z_prior
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BHH", 1, prior.channels, prior.xs.shape[1])
        for c in range(prior.channels):
            out += prior.xs[c].astype("<f4").tobytes()
            out += prior.fs[c].astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes, label: str):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(
                f"{self.label}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int, precision: str) -> np.ndarray:
        if precision == "f16":
            raw = np.frombuffer(self.take(count * 2), dtype="<f2")
            return raw.astype(np.float32)
        return np.frombuffer(self.take(count * 4), dtype="<f4").astype(np.float32)


def load_weights(path: str) -> ModelWeights:
    """Read an MVRW file, widening float16 payloads to float32."""
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)
    if rd.take(4) != MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    version, prec_flag, quality = rd.unpack("<IBB")
    if version != VERSION:
        raise VersionError(f"{path}: unsupported weight file version {version}")
    if prec_flag not in (0, 1):
        raise FormatError(f"{path}: unknown precision flag {prec_flag}")
    precision = "f16" if prec_flag else "f32"
    (nsections,) = rd.unpack("<H")
    subnets: dict[str, list[ConvLayer]] = {}
    z_prior = None
    for _ in range(nsections):
        (name_len,) = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        (kind,) = rd.unpack("<B")
        if kind == 0:
            (nlayers,) = rd.unpack("<H")
            layers = []
            for _ in range(nlayers):
                mode_i, stride, act_i, cout, cin, kh, kw = rd.unpack("<BBBHHHH")
                if mode_i >= len(_MODES) or act_i >= len(_ACTIVATIONS):
                    raise FormatError(f"{path}: bad layer header in section {name!r}")
                wts = rd.array(cout * cin * kh * kw, precision).reshape(cout, cin, kh, kw)
                bias = rd.array(cout, precision)
                layers.append(ConvLayer(_MODES[mode_i], stride, _ACTIVATIONS[act_i], wts, bias))
            subnets[name] = layers
        elif kind == 1:
            channels, nknots = rd.unpack("<HH")
            xs = np.empty((channels, nknots), dtype=np.float64)
            fs = np.empty((channels, nknots), dtype=np.float64)
            for c in range(channels):
                xs[c] = rd.array(nknots, "f32")
                fs[c] = rd.array(nknots, "f32")
            z_prior = FactorizedPrior(xs, fs)
        else:
            raise FormatError(f"{path}: unknown section kind {kind} for {name!r}")
    if rd.pos != len(rd.data):
        raise FormatError(f"{path}: {len(rd.data) - rd.pos} trailing bytes after last section")
    return ModelWeights(subnets=subnets, quality=quality, precision=precision, z_prior=z_prior)
