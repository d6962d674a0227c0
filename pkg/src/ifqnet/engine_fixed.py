"""Integer-only inference over a ConvertedNetwork."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import convert as C
from .layout import im2col, max_pool, pack_planes, pack_rows, trunc_div

LIMIT = 1 << 62
FLOAT_EXACT = 1 << 53


@dataclass(frozen=True)
class PackedBinaryWeights:
    """Rows of +/-1 as uint64 bit rows (1 = +1); padding bits are zero."""

    words: np.ndarray
    n: int

    @classmethod
    def from_signs(cls, signs) -> "PackedBinaryWeights":
        signs = np.asarray(signs)
        rows = signs.reshape(signs.shape[0], -1) if signs.ndim > 1 else signs.reshape(1, -1)
        return cls(pack_rows(rows > 0), rows.shape[1])

    def unpack(self) -> np.ndarray:
        raw = self.words.view(np.uint8).reshape(self.words.shape[0], -1)
        bits = np.unpackbits(raw, axis=1, count=self.n, bitorder="big")
        return bits.astype(np.int8) * 2 - 1


def binary_dot(w: PackedBinaryWeights, x, k: int) -> int:
    """sum_j w_j x_j for codes x in [0, 2^k) via bit-plane popcounts."""
    x = np.asarray(x, dtype=np.int64).reshape(1, -1)
    if x.shape[1] != w.n:
        raise ValueError(f"length mismatch: weights {w.n}, codes {x.shape[1]}")
    planes = pack_planes(x, k)
    return int(kernels.binary_conv(np.ascontiguousarray(w.words[:1]), planes)[0, 0])


def binary_conv_codes(words: np.ndarray, x: np.ndarray, op) -> np.ndarray:
    """Integer binary convolution of codes (C, H, W) -> (O, Ho, Wo)."""
    if op.fc:
        patches, (ho, wo) = x.reshape(1, -1), (1, 1)
    else:
        patches, (ho, wo) = im2col(x, op.kernel_h, op.kernel_w, op.stride, op.pad)
    planes = pack_planes(patches, op.act_bits)
    s = kernels.binary_conv(words, planes)
    return s.reshape(-1, ho, wo)


def _abs_max(x) -> int:
    return int(np.max(np.abs(x))) if np.size(x) else 0


def _check(bound: int, what: str):
    if bound >= LIMIT:
        raise C.FixedPointOverflow(f"{what}: intermediate may exceed 62 bits")


def _int_linear(x: np.ndarray, op: C.IntLinearOp) -> np.ndarray:
    if op.fc:
        patches, (ho, wo) = x.reshape(1, -1), (1, 1)
    else:
        patches, (ho, wo) = im2col(x, op.kernel_h, op.kernel_w, op.stride, op.pad)
    w = op.weight_fixed
    bound = int(np.abs(w).sum(axis=1).max(initial=0)) * _abs_max(patches)
    _check(bound, f"layer {op.layer}")
    if bound < FLOAT_EXACT:
        acc = np.rint(w.astype(np.float64) @ patches.T.astype(np.float64)).astype(np.int64)
    else:
        acc = w @ patches.T
    acc = acc.reshape(-1, ho, wo)
    bias = op.bias_fixed[:, None, None]
    if op.shift:
        _check(bound + _abs_max(op.bias_fixed), f"layer {op.layer}")
        return (acc + bias) >> op.shift
    _check(bound * abs(op.input_scale_fixed) + _abs_max(op.bias_fixed), f"layer {op.layer}")
    return acc * op.input_scale_fixed + bias


def apply_op(op, x: np.ndarray) -> np.ndarray:
    if isinstance(op, C.BinaryConvOp):
        lim = 1 << op.act_bits
        if x.size and (x.min() < 0 or x.max() >= lim):
            raise ValueError(f"layer {op.layer}: codes outside [0, {lim})")
        s = binary_conv_codes(op.words, x, op)
        if op.alpha_fixed is None:
            return s
        _check(_abs_max(op.alpha_fixed) * abs(op.input_scale_fixed) * op.fan_in * (lim - 1)
               + _abs_max(op.bias_fixed), f"layer {op.layer}")
        gain = op.alpha_fixed * op.input_scale_fixed
        return gain[:, None, None] * s + op.bias_fixed[:, None, None]
    if isinstance(op, C.IntLinearOp):
        return _int_linear(x, op)
    if isinstance(op, C.MaxPoolOp):
        return max_pool(x, op.window, op.stride)
    if isinstance(op, C.ReLUOp):
        return np.maximum(x, 0)
    if isinstance(op, C.LiftOp):
        factor = op.scale_fixed << op.m
        _check(_abs_max(x) * abs(factor), f"layer {op.layer}")
        return x * factor
    if isinstance(op, C.IntBNOp):
        _check((_abs_max(x) + _abs_max(op.theta_fixed)) << op.m, f"layer {op.layer}")
        num = (x - op.theta_fixed[:, None, None]) << op.m
        return trunc_div(num, op.sigma_fixed[:, None, None])
    if isinstance(op, C.ThresholdOp):
        c = x.shape[0]
        thr = np.ascontiguousarray(op.folded.thresholds, dtype=np.int64)
        if thr.shape[0] != c:
            raise ValueError(f"layer {op.layer}: {thr.shape[0]} threshold rows for {c} channels")
        flat = np.ascontiguousarray(x.reshape(c, -1), dtype=np.int64)
        return kernels.threshold_codes(flat, thr).reshape(x.shape)
    raise TypeError(f"unknown op {type(op).__name__}")


def run_sub(sub: C.ConvertedSub, x: np.ndarray, trace: dict | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    for op in sub.ops:
        x = apply_op(op, x)
        if trace is not None:
            trace[op.layer] = x
    return x


def eval_quantized_sub_fixed(sub: C.ConvertedSub, x) -> np.ndarray:
    """Codes produced by an integrated-converted quantized substructure."""
    if sub.mode != C.INTEGRATED or not sub.out_codes:
        raise ValueError("not an integrated quantized substructure")
    return run_sub(sub, x)


def eval_nonquantized_sub_fixed(sub: C.ConvertedSub, x):
    """Integer output and the real step of one output unit."""
    return run_sub(sub, x), sub.out_scale


def run_fixed(cn: C.ConvertedNetwork, x, trace: bool = False):
    """Integer outputs and ``output_descale``; with ``trace`` also a dict of
    per-layer integer outputs keyed by source layer index."""
    data = np.asarray(getattr(x, "data", x)).reshape(cn.input_shape)
    if data.dtype.kind not in "iu":
        raise TypeError("network input must be integer")
    if data.size and (data.min() < 0 or data.max() >= (1 << cn.input_bits)):
        raise ValueError(f"input outside [0, 2^{cn.input_bits})")
    record = {} if trace else None
    out = data.astype(np.int64)
    for sub in cn.subs:
        out = run_sub(sub, out, record)
    if trace:
        return out, cn.output_descale, record
    return out, cn.output_descale
