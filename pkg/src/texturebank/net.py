"""Minimal feed-forward runner: conv / ReLU / maxpool / fully-connected layers.

The runner turns a stack of convolutional layers into a dense local-descriptor
extractor: activations at a chosen tap layer become a FeatureField whose
stride and offset are derived from receptive-field arithmetic, so each grid
cell knows which input pixel its receptive field is centered on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    DegenerateImageError,
    DimensionError,
    TruncatedError,
    UnsupportedVersionError,
)
from .field import FeatureField
from .image import ImagePlane, atomic_write_bytes


@dataclass(frozen=True)
class Convolution:
    weights: np.ndarray  # (outC, inC, kH, kW)
    biases: np.ndarray  # (outC,)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        b = np.ascontiguousarray(self.biases, dtype=np.float32)
        if w.ndim != 4:
            raise DimensionError(f"conv weights must be (outC, inC, kH, kW), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimensionError("conv biases must match outC")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite conv parameters")
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ValueError("invalid conv stride/padding")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: tuple[int, int]
    stride: tuple[int, int]

    def __post_init__(self):
        if min(self.kernel) < 1 or min(self.stride) < 1:
            raise ValueError("invalid pool kernel/stride")


@dataclass(frozen=True)
class FullyConnected:
    weights: np.ndarray  # (outDim, inDim)
    biases: np.ndarray  # (outDim,)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float32)
        b = np.ascontiguousarray(self.biases, dtype=np.float32)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError("fc weights must be (outDim, inDim) with matching biases")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite fc parameters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)


Layer = Convolution | ReLU | MaxPool | FullyConnected


@dataclass(frozen=True)
class NetSpec:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError("empty network")
        channels = None
        fc_seen = False
        for i, layer in enumerate(layers):
            if fc_seen and not isinstance(layer, ReLU):
                raise DimensionError("fully-connected block must be the last stage")
            if isinstance(layer, Convolution):
                if channels is not None and layer.in_channels != channels:
                    raise DimensionError(
                        f"layer {i}: expects {layer.in_channels} channels, gets {channels}"
                    )
                channels = layer.out_channels
            elif isinstance(layer, FullyConnected):
                if fc_seen:
                    raise DimensionError("at most one fully-connected block")
                fc_seen = True
        object.__setattr__(self, "layers", layers)

    @property
    def in_channels(self) -> int:
        for layer in self.layers:
            if isinstance(layer, Convolution):
                return layer.in_channels
        raise DimensionError("network has no convolution layer")

    def conv_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if isinstance(l, Convolution)]


@dataclass(frozen=True)
class TapPoint:
    """Where to read activations: a convolution layer, before or after its ReLU."""

    layer_index: int
    after_relu: bool = False


def conv_forward(x: np.ndarray, layer: Convolution) -> np.ndarray:
    """Convolution (cross-correlation) of (C, H, W) input; accumulates in f64."""
    kh, kw = layer.kernel
    sh, sw = layer.stride
    ph, pw = layer.padding
    if x.shape[0] != layer.in_channels:
        raise DimensionError(f"conv expects {layer.in_channels} channels, got {x.shape[0]}")
    if ph or pw:
        x = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    if x.shape[1] < kh or x.shape[2] < kw:
        raise DegenerateImageError("input smaller than convolution kernel")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    out = np.tensordot(
        layer.weights.astype(np.float64),
        win.astype(np.float64),
        axes=([1, 2, 3], [0, 3, 4]),
    )
    out += layer.biases[:, None, None]
    return out.astype(np.float32)


def maxpool_forward(x: np.ndarray, layer: MaxPool) -> np.ndarray:
    kh, kw = layer.kernel
    sh, sw = layer.stride
    if x.shape[1] < kh or x.shape[2] < kw:
        raise DegenerateImageError("input smaller than pooling window")
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    return win.max(axis=(3, 4))


def fc_forward(x: np.ndarray, layer: FullyConnected) -> np.ndarray:
    flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if flat.size != layer.weights.shape[1]:
        raise DimensionError(
            f"fc expects {layer.weights.shape[1]} inputs, activation has {flat.size}"
        )
    out = layer.weights.astype(np.float64) @ flat + layer.biases
    return out.astype(np.float32)


def _apply(x: np.ndarray, layer: Layer) -> np.ndarray:
    if isinstance(layer, Convolution):
        return conv_forward(x, layer)
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPool):
        return maxpool_forward(x, layer)
    if isinstance(layer, FullyConnected):
        return fc_forward(x, layer)
    raise TypeError(f"unknown layer {layer!r}")


def receptive_field(net: NetSpec, upto_index: int) -> tuple[float, tuple[float, float]]:
    """Cumulative (stride, (offset_x, offset_y)) of the activation grid after
    running layers 0..upto_index, in input pixel-index coordinates.

    For each spatial layer with kernel k, stride s, padding p the center of
    output cell i sits at i*s - p + (k-1)/2 in its input grid; composing these
    yields an affine cell-to-pixel map. Anisotropic cumulative strides are
    rejected because descriptor fields carry a single stride.
    """
    sx = sy = 1.0
    ox = oy = 0.0
    for layer in net.layers[: upto_index + 1]:
        if isinstance(layer, Convolution):
            (kh, kw), (sh, sw), (ph, pw) = layer.kernel, layer.stride, layer.padding
        elif isinstance(layer, MaxPool):
            (kh, kw), (sh, sw), (ph, pw) = layer.kernel, layer.stride, (0, 0)
        else:
            continue
        ox += ((kw - 1) / 2.0 - pw) * sx
        oy += ((kh - 1) / 2.0 - ph) * sy
        sx *= sw
        sy *= sh
    if sx != sy:
        raise DimensionError(f"anisotropic cumulative stride ({sx}, {sy}) unsupported")
    return sx, (ox, oy)


def run_net(img: ImagePlane, net: NetSpec, tap: TapPoint) -> FeatureField:
    """Run the network up to `tap` and return the activations as a FeatureField.

    The tap must address a convolution layer; `after_relu` additionally applies
    the ReLU that immediately follows it.
    """
    if tap.layer_index < 0 or tap.layer_index >= len(net.layers):
        raise DimensionError(f"tap index {tap.layer_index} out of range")
    tapped = net.layers[tap.layer_index]
    if not isinstance(tapped, Convolution):
        raise DimensionError("tap must address a convolution layer")
    if img.channels != net.in_channels:
        raise DimensionError(
            f"network expects {net.in_channels} input channels, image has {img.channels}"
        )
    x = img.data
    for layer in net.layers[: tap.layer_index + 1]:
        x = _apply(x, layer)
        if min(x.shape[1:]) < 1:
            raise DegenerateImageError("zero-size activation before the tap")
    conv_ordinal = sum(
        isinstance(l, Convolution) for l in net.layers[: tap.layer_index + 1]
    )
    name = f"conv{conv_ordinal}"
    if tap.after_relu:
        nxt = net.layers[tap.layer_index + 1] if tap.layer_index + 1 < len(net.layers) else None
        if not isinstance(nxt, ReLU):
            raise DimensionError("after_relu tap requires a ReLU following the tapped layer")
        x = _apply(x, nxt)
        name += "+relu"
    stride, offset = receptive_field(net, tap.layer_index)
    return FeatureField(
        data=np.moveaxis(x, 0, 2), stride=stride, offset=offset, scale=1.0, name=name
    )


def run_full(img: ImagePlane, net: NetSpec) -> np.ndarray:
    """Run every layer, through the fully-connected head if present."""
    if img.channels != net.in_channels:
        raise DimensionError(
            f"network expects {net.in_channels} input channels, image has {img.channels}"
        )
    x = img.data
    for layer in net.layers:
        x = _apply(x, layer)
    return np.asarray(x, dtype=np.float32).reshape(-1)


# --- "FBNK" weights container -------------------------------------------------

WEIGHTS_MAGIC = b"FBNK"
WEIGHTS_VERSION = 1
_TAG_CONV, _TAG_RELU, _TAG_POOL, _TAG_FC = 1, 2, 3, 4


def write_weights(net: NetSpec) -> bytes:
    """Serialize a NetSpec: per-layer type tag, u32 dims, then f32 weights+biases."""
    out = [struct.pack("<4sHH", WEIGHTS_MAGIC, WEIGHTS_VERSION, len(net.layers))]

    def record(tag: int, dims: tuple[int, ...], params: list[np.ndarray]):
        out.append(struct.pack("<BB", tag, len(dims)))
        out.append(struct.pack(f"<{len(dims)}I", *dims) if dims else b"")
        for p in params:
            out.append(np.ascontiguousarray(p, dtype="<f4").tobytes())

    for layer in net.layers:
        if isinstance(layer, Convolution):
            dims = (*layer.weights.shape, *layer.stride, *layer.padding)
            record(_TAG_CONV, dims, [layer.weights, layer.biases])
        elif isinstance(layer, ReLU):
            record(_TAG_RELU, (), [])
        elif isinstance(layer, MaxPool):
            record(_TAG_POOL, (*layer.kernel, *layer.stride), [])
        elif isinstance(layer, FullyConnected):
            record(_TAG_FC, layer.weights.shape, [layer.weights, layer.biases])
    return b"".join(out)


def read_weights(buf: bytes) -> NetSpec:
    if buf[:4] != WEIGHTS_MAGIC:
        raise BadMagicError(f"bad weights magic {buf[:4]!r}")
    if len(buf) < 8:
        raise TruncatedError("weights file shorter than its header")
    version, n_layers = struct.unpack_from("<HH", buf, 4)
    if version != WEIGHTS_VERSION:
        raise UnsupportedVersionError(f"weights version {version} not supported")
    pos = 8
    layers: list[Layer] = []

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise TruncatedError("weights file truncated")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    def floats(n: int) -> np.ndarray:
        return np.frombuffer(take(4 * n), dtype="<f4").copy()

    for _ in range(n_layers):
        tag, ndims = struct.unpack("<BB", take(2))
        dims = struct.unpack(f"<{ndims}I", take(4 * ndims)) if ndims else ()
        if tag == _TAG_CONV:
            oc, ic, kh, kw, sh, sw, ph, pw = dims
            w = floats(oc * ic * kh * kw).reshape(oc, ic, kh, kw)
            b = floats(oc)
            layers.append(Convolution(w, b, stride=(sh, sw), padding=(ph, pw)))
        elif tag == _TAG_RELU:
            layers.append(ReLU())
        elif tag == _TAG_POOL:
            kh, kw, sh, sw = dims
            layers.append(MaxPool(kernel=(kh, kw), stride=(sh, sw)))
        elif tag == _TAG_FC:
            od, idim = dims
            layers.append(FullyConnected(floats(od * idim).reshape(od, idim), floats(od)))
        else:
            raise UnsupportedVersionError(f"unknown layer tag {tag}")
    return NetSpec(tuple(layers))


def write_weights_file(path, net: NetSpec) -> None:
    atomic_write_bytes(path, write_weights(net))


def read_weights_file(path) -> NetSpec:
    return read_weights(Path(path).read_bytes())
