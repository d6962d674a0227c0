"""Network data model: layer variants, validation and shape inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


@dataclass(frozen=True)
class FloatTensor:
    """Real-valued dense tensor, row-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("FloatTensor values must be finite")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


@dataclass(frozen=True)
class IntTensor:
    """Integer tensor with a declared per-element bit width.

    ``signed=False`` is used for quantization codes, which must lie in
    ``[0, 2**bits - 1]``.
    """

    data: np.ndarray
    bits: int
    signed: bool = False

    def __post_init__(self):
        if not 1 <= self.bits <= 64:
            raise ValueError(f"bits must be in 1..64, got {self.bits}")
        arr = np.asarray(self.data)
        if arr.dtype.kind not in "iu" and arr.size:
            raise TypeError(f"IntTensor needs integer data, got {arr.dtype}")
        arr = arr.astype(np.int64, copy=False)
        if arr.size:
            lo, hi = int(arr.min()), int(arr.max())
            if self.signed:
                lim = 1 << (self.bits - 1)
                ok = -lim <= lo and hi < lim
            else:
                ok = lo >= 0 and hi < (1 << self.bits)
            if not ok:
                raise ValueError(
                    f"values [{lo}, {hi}] not representable in {self.bits} "
                    f"{'signed' if self.signed else 'unsigned'} bits")
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def _f64(values) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64)).reshape(-1)


@dataclass(eq=False)
class QConv:
    """Convolution with binary weights ``alpha_c * sign`` over k-bit codes."""

    name: str
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    alpha: np.ndarray
    weights_sign: np.ndarray
    bias: np.ndarray
    act_bits: int = 2

    def __post_init__(self):
        self.alpha = _f64(self.alpha)
        self.bias = _f64(self.bias)
        self.weights_sign = np.asarray(self.weights_sign, dtype=np.int8).reshape(
            self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w


@dataclass(eq=False)
class QFC:
    """Fully connected layer with binary weights; input is flattened."""

    name: str
    out_features: int
    in_features: int
    alpha: np.ndarray
    weights_sign: np.ndarray
    bias: np.ndarray
    act_bits: int = 2

    def __post_init__(self):
        self.alpha = _f64(self.alpha)
        self.bias = _f64(self.bias)
        self.weights_sign = np.asarray(self.weights_sign, dtype=np.int8).reshape(
            self.out_features, self.in_features)

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(eq=False)
class Conv:
    """Full-precision convolution."""

    name: str
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    weight: np.ndarray
    bias: np.ndarray
    weight_bits: int = 32

    def __post_init__(self):
        self.bias = _f64(self.bias)
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64).reshape(
            self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w


@dataclass(eq=False)
class FC:
    """Full-precision fully connected layer; input is flattened."""

    name: str
    out_features: int
    in_features: int
    weight: np.ndarray
    bias: np.ndarray
    weight_bits: int = 32

    def __post_init__(self):
        self.bias = _f64(self.bias)
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64).reshape(
            self.out_features, self.in_features)

    @property
    def fan_in(self) -> int:
        return self.in_features


@dataclass(eq=False)
class BN:
    """Inference batch norm ``(y - theta) / sigma`` per channel."""

    name: str
    theta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.theta = _f64(self.theta)
        self.sigma = _f64(self.sigma)

    @property
    def channels(self) -> int:
        return self.theta.size


@dataclass(eq=False)
class MaxPool:
    name: str
    window: int
    stride: int


@dataclass(eq=False)
class Quant:
    """Uniform k-bit quantizer with thresholds ``i * base + offset``."""

    name: str
    k: int
    base: float
    offset: float
    beta_out: float

    def __post_init__(self):
        self.base = float(self.base)
        self.offset = float(self.offset)
        self.beta_out = float(self.beta_out)

    @property
    def levels(self) -> int:
        return (1 << self.k) - 1

    def thresholds(self) -> np.ndarray:
        i = np.arange(1, self.levels + 1, dtype=np.float64)
        return i * self.base + self.offset


@dataclass(eq=False)
class ReLU:
    name: str


LayerDef = Union[QConv, QFC, Conv, FC, BN, MaxPool, Quant, ReLU]

LAYER_TYPES = {cls.__name__: cls for cls in (QConv, QFC, Conv, FC, BN, MaxPool, Quant, ReLU)}

BINARY_LINEAR = (QConv, QFC)
LINEAR = (QConv, QFC, Conv, FC)


@dataclass(eq=False)
class NetworkDef:
    """A chain of layers consuming an integer image of ``input_shape`` (C, H, W)."""

    name: str
    input_shape: tuple[int, int, int]
    layers: list = field(default_factory=list)
    input_bits: int = 8
    input_scale: float = 1.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.input_scale = float(self.input_scale)


@dataclass(frozen=True)
class Violation:
    layer: int
    field: str
    message: str

    def __str__(self):
        where = "network" if self.layer < 0 else f"layer {self.layer}"
        return f"{where}: {self.field}: {self.message}"


class ModelError(ValueError):
    """Raised when a network is structurally unusable."""


def _check_positive(out, idx, fname, values, what):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    for c in np.flatnonzero(~(values > 0)):
        out.append(Violation(idx, f"{fname}[{c}]", f"{what} must be positive"))


def _check_finite(out, idx, fname, values):
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        out.append(Violation(idx, fname, f"non-finite value at {int(bad[0])}"))


def _layer_violations(idx: int, layer) -> list[Violation]:
    out: list[Violation] = []
    if isinstance(layer, (QConv, Conv)):
        for attr in ("out_channels", "in_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(layer, attr) < 1:
                out.append(Violation(idx, attr, "must be >= 1"))
        if layer.pad < 0:
            out.append(Violation(idx, "pad", "must be >= 0"))
    if isinstance(layer, (QFC, FC)):
        for attr in ("out_features", "in_features"):
            if getattr(layer, attr) < 1:
                out.append(Violation(idx, attr, "must be >= 1"))
    if isinstance(layer, BINARY_LINEAR):
        nout = layer.weights_sign.shape[0]
        if layer.alpha.size != nout:
            out.append(Violation(idx, "alpha", f"expected {nout} entries, got {layer.alpha.size}"))
        if layer.bias.size != nout:
            out.append(Violation(idx, "bias", f"expected {nout} entries, got {layer.bias.size}"))
        _check_finite(out, idx, "alpha", layer.alpha)
        _check_finite(out, idx, "bias", layer.bias)
        _check_positive(out, idx, "alpha", layer.alpha, "alpha")
        w = layer.weights_sign
        if w.size and not np.all((w == 1) | (w == -1)):
            out.append(Violation(idx, "weights_sign", "weights_sign not in {-1,+1}"))
        if not 1 <= layer.act_bits <= 8:
            out.append(Violation(idx, "act_bits", "must be in 1..8"))
        elif layer.fan_in * ((1 << layer.act_bits) - 1) >= 1 << 31:
            out.append(Violation(idx, "fan_in", "accumulator bound n*(2^k-1) exceeds 31 bits"))
    if isinstance(layer, (Conv, FC)):
        nout = layer.weight.shape[0]
        if layer.bias.size != nout:
            out.append(Violation(idx, "bias", f"expected {nout} entries, got {layer.bias.size}"))
        _check_finite(out, idx, "weight", layer.weight)
        _check_finite(out, idx, "bias", layer.bias)
        if not 1 <= layer.weight_bits <= 64:
            out.append(Violation(idx, "weight_bits", "must be in 1..64"))
    if isinstance(layer, BN):
        if layer.theta.size != layer.sigma.size:
            out.append(Violation(idx, "theta", "theta and sigma lengths differ"))
        _check_finite(out, idx, "theta", layer.theta)
        _check_finite(out, idx, "sigma", layer.sigma)
        _check_positive(out, idx, "sigma", layer.sigma, "sigma")
    if isinstance(layer, MaxPool):
        if layer.window < 1:
            out.append(Violation(idx, "window", "must be >= 1"))
        if layer.stride < 1:
            out.append(Violation(idx, "stride", "must be >= 1"))
    if isinstance(layer, Quant):
        if not 1 <= layer.k <= 8:
            out.append(Violation(idx, "k", "must be in 1..8"))
        for fname in ("base", "offset", "beta_out"):
            _check_finite(out, idx, fname, getattr(layer, fname))
        _check_positive(out, idx, "base", layer.base, "base")
        _check_positive(out, idx, "beta_out", layer.beta_out, "beta_out")
    return out


def _structure_violations(net: NetworkDef) -> list[Violation]:
    """Chain-level rules: activation bit agreement and substructure ordering."""
    out: list[Violation] = []
    layers = net.layers
    code_bits = net.input_bits  # width of codes currently flowing, None once real-valued
    conv_since_quant = False
    for idx, layer in enumerate(layers):
        if isinstance(layer, BINARY_LINEAR):
            if code_bits is None:
                out.append(Violation(idx, "act_bits",
                                     "binary layer must consume quantization codes"))
            elif layer.act_bits != code_bits:
                out.append(Violation(idx, "act_bits",
                                     f"declared {layer.act_bits} bits but input codes have {code_bits}"))
            code_bits = None
            conv_since_quant = True
        elif isinstance(layer, (Conv, FC, BN)):
            code_bits = None
            conv_since_quant = conv_since_quant or isinstance(layer, (Conv, FC))
        elif isinstance(layer, Quant):
            if not conv_since_quant:
                out.append(Violation(idx, "k", "quantization layer without a preceding convolution"))
            code_bits = layer.k
            conv_since_quant = False
        # MaxPool and ReLU keep codes codes

    # {binary conv, BN, pool, quant} is not a recognised ordering
    for idx in range(len(layers) - 3):
        a, b, c, d = layers[idx:idx + 4]
        if (isinstance(a, BINARY_LINEAR) and isinstance(b, BN)
                and isinstance(c, MaxPool) and isinstance(d, Quant)):
            out.append(Violation(idx + 2, "order",
                                 "max pool must sit between convolution and BN"))
    return out


def _shape_step(idx: int, layer, shape: tuple[int, ...]) -> tuple[int, ...]:
    if isinstance(layer, (QConv, Conv)):
        c, h, w = shape
        if c != layer.in_channels:
            raise ModelError(f"layer {idx}: expects {layer.in_channels} input channels, got {c}")
        ho = (h + 2 * layer.pad - layer.kernel_h) // layer.stride + 1
        wo = (w + 2 * layer.pad - layer.kernel_w) // layer.stride + 1
        if h + 2 * layer.pad < layer.kernel_h or w + 2 * layer.pad < layer.kernel_w:
            raise ModelError(f"layer {idx}: layer does not fit input")
        return (layer.out_channels, ho, wo)
    if isinstance(layer, (QFC, FC)):
        n = int(np.prod(shape))
        if n != layer.in_features:
            raise ModelError(f"layer {idx}: expects {layer.in_features} inputs, got {n}")
        return (layer.out_features, 1, 1)
    if isinstance(layer, MaxPool):
        c, h, w = shape
        if h < layer.window or w < layer.window:
            raise ModelError(f"layer {idx}: layer does not fit input")
        return (c, (h - layer.window) // layer.stride + 1, (w - layer.window) // layer.stride + 1)
    if isinstance(layer, BN):
        if shape[0] != layer.channels:
            raise ModelError(f"layer {idx}: BN has {layer.channels} channels, input has {shape[0]}")
    return shape


def infer_shapes(net: NetworkDef) -> list[tuple[int, int, int]]:
    """Output shape (C, H, W) of every layer."""
    shape = tuple(net.input_shape)
    shapes = []
    for idx, layer in enumerate(net.layers):
        shape = _shape_step(idx, layer, shape)
        shapes.append(shape)
    return shapes


def validate_model(net: NetworkDef) -> list[Violation]:
    """All invariant violations, in layer order. Empty means valid."""
    out: list[Violation] = []
    if len(net.input_shape) != 3 or min(net.input_shape) < 1:
        out.append(Violation(-1, "input_shape", "must be three positive extents (C, H, W)"))
    if not 1 <= net.input_bits <= 32:
        out.append(Violation(-1, "input_bits", "must be in 1..32"))
    if not (np.isfinite(net.input_scale) and net.input_scale > 0):
        out.append(Violation(-1, "input_scale", "input_scale must be positive"))
    if not net.layers:
        out.append(Violation(-1, "layers", "network has no layers"))
    for idx, layer in enumerate(net.layers):
        if type(layer).__name__ not in LAYER_TYPES:
            out.append(Violation(idx, "type", f"unknown layer variant {type(layer).__name__}"))
            continue
        out.extend(_layer_violations(idx, layer))
    if out:
        return out
    out.extend(_structure_violations(net))
    if len(net.input_shape) == 3:
        shape = tuple(net.input_shape)
        for idx, layer in enumerate(net.layers):
            try:
                shape = _shape_step(idx, layer, shape)
            except ModelError as exc:
                out.append(Violation(idx, "shape", str(exc).split(": ", 1)[1]))
                break
    return out


def ensure_valid(net: NetworkDef) -> None:
    problems = validate_model(net)
    if problems:
        raise ModelError("; ".join(str(p) for p in problems))


def layer_kind(layer) -> str:
    return type(layer).__name__
