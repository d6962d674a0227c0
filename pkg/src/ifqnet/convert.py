"""Fixed-point conversion.

Quantized substructures are converted by folding conv scale, bias, batch norm
and the quantizer into per-channel integer thresholds on the raw binary
convolution sum. Everything else is converted by scaling each real parameter
by ``2^m`` and flooring.

Scale bookkeeping for the scaled-and-floored route, with ``Q = 2^m``:

* weights, ``alpha``, ``sigma`` and the incoming activation scale use ``Q``;
* bias, ``theta`` and quantizer thresholds use ``Q^2`` so they line up with
  ``floor(alpha Q) floor(beta Q) (W_b * x)``;
* a second linear layer inside the same span sees ``Q^2``-scaled inputs, so
  its bias uses ``Q^3`` and its output is shifted right by ``m``;
* batch norm is ``trunc((v - theta_q) * Q / sigma_q)``, which keeps ``Q^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import model as M
from .divide import Substructure, divide_substructures
from .layout import pack_rows

INTEGRATED = "integrated"
SEPARATED = "separated"

DEFAULT_M_FIRST = 9
DEFAULT_M_LAST = 14
DEFAULT_M_SEPARATED = 12

INT32_MIN, INT32_MAX = -(1 << 31), (1 << 31) - 1
COMPACT_LIMIT = 1 << 47  # compact base/offset must fit 48 signed bits
SCALE_LIMIT = 1 << 62


class ConversionError(ValueError):
    pass


class FixedPointOverflow(ConversionError, OverflowError):
    pass


# -- scalar conversions ----------------------------------------------------

def separated_scale(x: float, m: int) -> int:
    """floor(x * 2^m), exact for any float input."""
    if not math.isfinite(x):
        raise ValueError(f"cannot scale non-finite value {x}")
    v = math.floor(Fraction(x) * (1 << m)) if m >= 0 else math.floor(Fraction(x) / (1 << -m))
    if abs(v) >= SCALE_LIMIT:
        raise FixedPointOverflow(f"floor({x} * 2^{m}) exceeds 62 bits")
    return v


def scale_floor(values, m: int) -> np.ndarray:
    """Elementwise floor(x * 2^m) as int64."""
    arr = np.asarray(values, dtype=np.float64)
    scaled = np.floor(np.ldexp(arr, m))
    if scaled.size and np.max(np.abs(scaled)) >= SCALE_LIMIT:
        raise FixedPointOverflow(f"value scaled by 2^{m} exceeds 62 bits")
    return scaled.astype(np.int64)


# -- threshold folding -----------------------------------------------------

@dataclass(eq=False)
class QuantizedParams:
    """Parameters of one quantized substructure, BN defaulted to identity."""

    conv: object
    pool: M.MaxPool | None
    bn: M.BN | None
    quant: M.Quant

    @property
    def channels(self) -> int:
        return self.conv.alpha.size

    @property
    def theta(self) -> np.ndarray:
        return self.bn.theta if self.bn is not None else np.zeros(self.channels)

    @property
    def sigma(self) -> np.ndarray:
        return self.bn.sigma if self.bn is not None else np.ones(self.channels)


def quantized_params(net: M.NetworkDef, sub: Substructure) -> QuantizedParams:
    if not sub.quantized:
        raise ConversionError(f"layers {sub.first}..{sub.last} are not a quantized substructure")
    layers = [net.layers[i] for i in sub.span]
    pool = next((l for l in layers if isinstance(l, M.MaxPool)), None)
    bn = next((l for l in layers if isinstance(l, M.BN)), None)
    return QuantizedParams(layers[0], pool, bn, layers[-1])


@dataclass(eq=False)
class FoldedThresholds:
    """Integer thresholds on the binary conv sum, shape (channels, 2^k - 1)."""

    thresholds: np.ndarray
    k: int
    base_fixed: np.ndarray | None = None
    offset_fixed: np.ndarray | None = None
    frac_bits: int | None = None

    @property
    def compact(self) -> bool:
        return self.frac_bits is not None


def _linear_form(params: QuantizedParams, beta_in: float):
    """Per channel, integers (a, b, d) with d > 0 and thr'_i = (i*a + b) / d exactly.

    Folded threshold i is (thr_i sigma + theta - bias) / (alpha beta) with
    thr_i = i base + offset, i.e. i * sigma base / (alpha beta) plus
    (theta - bias + sigma offset) / (alpha beta).
    """
    alpha, bias = params.conv.alpha, params.conv.bias
    theta, sigma = params.theta, params.sigma
    if beta_in <= 0 or not math.isfinite(beta_in):
        raise ConversionError("incoming activation scale must be positive")
    if np.any(~(alpha > 0)):
        raise ConversionError("alpha must be positive")
    if np.any(~(sigma > 0)):
        raise ConversionError("sigma must be positive")
    base, offset = Fraction(params.quant.base), Fraction(params.quant.offset)
    beta = Fraction(beta_in)
    forms = []
    for c in range(params.channels):
        s = Fraction(sigma[c])
        slope = s * base
        icpt = Fraction(theta[c]) - Fraction(bias[c]) + s * offset
        scale = Fraction(alpha[c]) * beta
        slope, icpt = slope / scale, icpt / scale
        den = math.lcm(slope.denominator, icpt.denominator)
        forms.append((slope.numerator * (den // slope.denominator),
                      icpt.numerator * (den // icpt.denominator), den))
    return forms


def compose_thresholds(params: QuantizedParams, beta_in: float) -> FoldedThresholds:
    """Fold conv scale, bias, BN and quantizer into floored integer thresholds."""
    levels = params.quant.levels
    rows = []
    for a, b, d in _linear_form(params, beta_in):
        rows.append([(i * a + b) // d for i in range(1, levels + 1)])
    flat = [v for row in rows for v in row]
    if flat and (min(flat) < INT32_MIN or max(flat) > INT32_MAX):
        raise FixedPointOverflow("folded threshold exceeds 32 signed bits")
    thr = np.array(rows, dtype=np.int64).reshape(params.channels, levels)
    return FoldedThresholds(thr, params.quant.k)


def _round_half_up(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


def compose_base_offset(params: QuantizedParams, beta_in: float, f: int):
    """Per-channel (base', offset') rounded to ``f`` fractional bits."""
    if not 0 <= f <= 30:
        raise ValueError("fractional bits must be in 0..30")
    base_fx, off_fx = [], []
    for a, b, d in _linear_form(params, beta_in):
        base_fx.append(_round_half_up(a << f, d))
        off_fx.append(_round_half_up(b << f, d))
    for v in base_fx + off_fx:
        if abs(v) >= COMPACT_LIMIT:
            raise FixedPointOverflow(f"compact threshold parameter exceeds 48 bits at f={f}")
    return np.array(base_fx, dtype=np.int64), np.array(off_fx, dtype=np.int64)


def reconstruct_thresholds(base_fixed, offset_fixed, f: int, levels: int) -> np.ndarray:
    """thr'_i = floor((i * base' + offset') / 2^f)."""
    i = np.arange(1, levels + 1, dtype=np.int64)
    base_fixed = np.asarray(base_fixed, dtype=np.int64)[:, None]
    offset_fixed = np.asarray(offset_fixed, dtype=np.int64)[:, None]
    return (i * base_fixed + offset_fixed) >> f


def sufficient_fraction_bits(params: QuantizedParams, beta_in: float,
                             max_f: int = 30) -> int | None:
    """Smallest f whose compact form reproduces the explicit thresholds, or None."""
    explicit = compose_thresholds(params, beta_in).thresholds
    for f in range(max_f + 1):
        try:
            b, o = compose_base_offset(params, beta_in, f)
        except FixedPointOverflow:
            return None
        if np.array_equal(reconstruct_thresholds(b, o, f, params.quant.levels), explicit):
            return f
    return None


def compose_compact(params: QuantizedParams, beta_in: float) -> FoldedThresholds | None:
    f = sufficient_fraction_bits(params, beta_in)
    if f is None:
        return None
    folded = compose_thresholds(params, beta_in)
    folded.base_fixed, folded.offset_fixed = compose_base_offset(params, beta_in, f)
    folded.frac_bits = f
    return folded


# -- fixed-point program ---------------------------------------------------

@dataclass(eq=False)
class BinaryConvOp:
    """Binary conv sum over codes; with ``alpha_fixed`` set it becomes the
    scaled form ``alpha_q * scale_q * sum + bias_q``."""

    layer: int
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    fc: bool
    signs: np.ndarray
    act_bits: int
    alpha_fixed: np.ndarray | None = None
    input_scale_fixed: int | None = None
    bias_fixed: np.ndarray | None = None
    _words: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8).reshape(self.out_channels, -1)

    @property
    def words(self) -> np.ndarray:
        if self._words is None:
            self._words = pack_rows(self.signs > 0)
        return self._words

    @property
    def fan_in(self) -> int:
        return self.signs.shape[1]


@dataclass(eq=False)
class IntLinearOp:
    """Integer conv/FC with floor-scaled weights.

    ``shift == 0``: input is unscaled ints, ``v = (W_q * x) * scale_q + bias_q``.
    ``shift == m``: input already carries ``Q^2``, ``v = (W_q * x + bias_q) >> m``.
    """

    layer: int
    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    pad: int
    fc: bool
    weight_fixed: np.ndarray
    bias_fixed: np.ndarray
    input_scale_fixed: int | None
    shift: int

    def __post_init__(self):
        self.weight_fixed = np.asarray(self.weight_fixed, dtype=np.int64).reshape(self.out_channels, -1)


@dataclass(eq=False)
class MaxPoolOp:
    layer: int
    window: int
    stride: int


@dataclass(eq=False)
class ReLUOp:
    layer: int


@dataclass(eq=False)
class LiftOp:
    """Bring unscaled ints with scale ``s`` to the ``Q^2`` grid: ``x * floor(s Q) * Q``."""

    layer: int
    scale_fixed: int
    m: int


@dataclass(eq=False)
class IntBNOp:
    layer: int
    theta_fixed: np.ndarray
    sigma_fixed: np.ndarray
    m: int


@dataclass(eq=False)
class ThresholdOp:
    """Codes from integer inputs: largest i with x > thr_i, else 0."""

    layer: int
    folded: FoldedThresholds
    beta_out: float


@dataclass(eq=False)
class ConvertedSub:
    sub_id: int
    kind: str
    mode: str
    m: int
    first: int
    last: int
    ops: list
    in_scale: float
    out_scale: float
    out_codes: bool


@dataclass(eq=False)
class ConvertedNetwork:
    name: str
    input_shape: tuple[int, int, int]
    input_bits: int
    input_scale: float
    mode: str
    subs: list

    @property
    def scale_chain(self) -> list[float]:
        return [s.in_scale for s in self.subs]

    @property
    def output_descale(self) -> float:
        return self.subs[-1].out_scale if self.subs else self.input_scale

    def ops(self):
        for sub in self.subs:
            yield from sub.ops


def _geometry(layer) -> dict:
    if isinstance(layer, (M.QConv, M.Conv)):
        return dict(out_channels=layer.out_channels, in_channels=layer.in_channels,
                    kernel_h=layer.kernel_h, kernel_w=layer.kernel_w,
                    stride=layer.stride, pad=layer.pad, fc=False)
    return dict(out_channels=layer.out_features, in_channels=layer.in_features,
                kernel_h=1, kernel_w=1, stride=1, pad=0, fc=True)


def _convert_integrated(net, sub, sub_id, beta_in, compact) -> ConvertedSub:
    params = quantized_params(net, sub)
    folded = None
    if compact:
        folded = compose_compact(params, beta_in)
    if folded is None:
        folded = compose_thresholds(params, beta_in)
    conv = params.conv
    ops = [BinaryConvOp(sub.first, signs=conv.weights_sign, act_bits=conv.act_bits, **_geometry(conv))]
    if params.pool is not None:
        ops.append(MaxPoolOp(sub.first + 1, params.pool.window, params.pool.stride))
    ops.append(ThresholdOp(sub.last, folded, params.quant.beta_out))
    return ConvertedSub(sub_id, sub.kind, INTEGRATED, 0, sub.first, sub.last, ops,
                        beta_in, params.quant.beta_out, True)


def _convert_scaled(net, sub, sub_id, beta_in, m, shapes) -> ConvertedSub:
    """Scaled-and-floored conversion of an arbitrary span."""
    ops = []
    lifted = False
    scale = beta_in
    q2 = 2 * m
    for idx in sub.span:
        layer = net.layers[idx]
        if isinstance(layer, M.BINARY_LINEAR):
            if lifted:
                raise ConversionError(f"layer {idx}: binary layer needs quantized input")
            ops.append(BinaryConvOp(
                idx, signs=layer.weights_sign, act_bits=layer.act_bits,
                alpha_fixed=scale_floor(layer.alpha, m),
                input_scale_fixed=separated_scale(scale, m),
                bias_fixed=scale_floor(layer.bias, q2), **_geometry(layer)))
            lifted = True
        elif isinstance(layer, (M.Conv, M.FC)):
            w = scale_floor(layer.weight, m)
            if lifted:
                ops.append(IntLinearOp(idx, weight_fixed=w, bias_fixed=scale_floor(layer.bias, 3 * m),
                                       input_scale_fixed=None, shift=m, **_geometry(layer)))
            else:
                ops.append(IntLinearOp(idx, weight_fixed=w, bias_fixed=scale_floor(layer.bias, q2),
                                       input_scale_fixed=separated_scale(scale, m), shift=0,
                                       **_geometry(layer)))
            lifted = True
        elif isinstance(layer, M.MaxPool):
            ops.append(MaxPoolOp(idx, layer.window, layer.stride))
        elif isinstance(layer, M.ReLU):
            ops.append(ReLUOp(idx))
        elif isinstance(layer, (M.BN, M.Quant)):
            if not lifted:
                ops.append(LiftOp(idx, separated_scale(scale, m), m))
                lifted = True
            if isinstance(layer, M.BN):
                sigma_q = scale_floor(layer.sigma, m)
                if np.any(sigma_q <= 0):
                    raise ConversionError(f"layer {idx}: sigma underflows to zero at m={m}")
                ops.append(IntBNOp(idx, scale_floor(layer.theta, q2), sigma_q, m))
            else:
                channels = shapes[idx][0]
                thr = np.tile(scale_floor(layer.thresholds(), q2), (channels, 1))
                ops.append(ThresholdOp(idx, FoldedThresholds(thr, layer.k), layer.beta_out))
                lifted = False
                scale = layer.beta_out
    out_scale = math.ldexp(1.0, -q2) if lifted else scale
    return ConvertedSub(sub_id, sub.kind, SEPARATED, m, sub.first, sub.last, ops,
                        beta_in, out_scale, not lifted)


def default_m(subs: list[Substructure], sub_id: int, mode: str) -> int:
    if mode == SEPARATED:
        return DEFAULT_M_SEPARATED
    return DEFAULT_M_LAST if sub_id == len(subs) else DEFAULT_M_FIRST


def resolve_m_map(subs, mode: str, m_map: dict | None) -> dict[int, int]:
    """Per-substructure exponents (1-based ids); key ``"all"`` sets every entry."""
    m_map = dict(m_map or {})
    everything = m_map.pop("all", None)
    out = {}
    for sid in range(1, len(subs) + 1):
        if sid in m_map:
            out[sid] = int(m_map[sid])
        elif everything is not None:
            out[sid] = int(everything)
        else:
            out[sid] = default_m(subs, sid, mode)
    unknown = set(m_map) - set(out)
    if unknown:
        raise ConversionError(f"m given for unknown substructure(s) {sorted(unknown)}")
    for sid, m in out.items():
        if not 0 <= m <= 30:
            raise ConversionError(f"substructure {sid}: m must be in 0..30")
    return out


def convert_network(net: M.NetworkDef, mode: str = INTEGRATED, m_map: dict | None = None,
                    compact: bool = False) -> ConvertedNetwork:
    """Convert every substructure, threading the activation scale forward.

    ``integrated`` folds quantized substructures into thresholds and scales the
    rest by ``m_map``; ``separated`` scales every substructure.
    """
    if mode not in (INTEGRATED, SEPARATED):
        raise ValueError(f"unknown mode {mode!r}")
    M.ensure_valid(net)
    shapes = M.infer_shapes(net)
    subs = divide_substructures(net)
    ms = resolve_m_map(subs, mode, m_map)
    beta = net.input_scale
    out = []
    for sid, sub in enumerate(subs, start=1):
        if mode == INTEGRATED and sub.quantized:
            csub = _convert_integrated(net, sub, sid, beta, compact)
        else:
            csub = _convert_scaled(net, sub, sid, beta, ms[sid], shapes)
        out.append(csub)
        beta = csub.out_scale
    return ConvertedNetwork(net.name, tuple(net.input_shape), net.input_bits,
                            net.input_scale, mode, out)


def summarize(cn: ConvertedNetwork) -> list[dict]:
    rows = []
    for sub in cn.subs:
        thr_ops = [op for op in sub.ops if isinstance(op, ThresholdOp)]
        storage = "-"
        k = "-"
        if thr_ops:
            folded = thr_ops[-1].folded
            k = folded.k
            if sub.mode == INTEGRATED:
                storage = f"compact(f={folded.frac_bits})" if folded.compact else "explicit"
            else:
                storage = "scaled"
        rows.append({"sub": sub.sub_id, "kind": sub.kind, "mode": sub.mode, "layers": f"{sub.first}-{sub.last}",
                     "k": k, "m": sub.m, "thresholds": storage})
    return rows
