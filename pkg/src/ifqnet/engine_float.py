"""Floating-point reference inference (binary conv, BN, threshold quantizer)."""

from __future__ import annotations

import numpy as np

from . import model as M
from .layout import im2col, max_pool


def _as_input(x, net: M.NetworkDef) -> np.ndarray:
    data = x.data if isinstance(x, (M.IntTensor, M.FloatTensor)) else np.asarray(x)
    data = np.asarray(data).reshape(net.input_shape)
    if data.dtype.kind not in "iu":
        raise TypeError("network input must be integer")
    if data.size and (data.min() < 0 or data.max() >= (1 << net.input_bits)):
        raise ValueError(f"input outside [0, 2^{net.input_bits})")
    return data.astype(np.int64)


_BLOCK = 1 << 22  # weight elements converted per matmul block


def linear(x: np.ndarray, weight: np.ndarray, layer, dtype=np.float64) -> np.ndarray:
    """Conv or FC of (C, H, W) input with a (O, ...) weight, no bias."""
    w = weight.reshape(weight.shape[0], -1)
    if isinstance(layer, (M.QFC, M.FC)):
        cols, (ho, wo) = x.reshape(-1, 1).astype(dtype), (1, 1)
    else:
        patches, (ho, wo) = im2col(x, layer.kernel_h, layer.kernel_w, layer.stride, layer.pad)
        cols = patches.T.astype(dtype)
    out = np.empty((w.shape[0], cols.shape[1]), dtype=np.float64)
    step = max(1, _BLOCK // max(1, w.shape[1]))
    for r in range(0, w.shape[0], step):
        out[r:r + step] = w[r:r + step].astype(dtype) @ cols
    return out.reshape(-1, ho, wo)


def binary_sum(codes: np.ndarray, layer) -> np.ndarray:
    """Integer W_b (x) X_q via BLAS; float32 is exact while |sum| < 2^24."""
    exact32 = layer.fan_in * ((1 << layer.act_bits) - 1) < (1 << 24)
    return linear(codes, layer.weights_sign, layer, np.float32 if exact32 else np.float64)


def quantize(y: np.ndarray, quant: M.Quant) -> np.ndarray:
    """Code i where thr_i < y <= thr_{i+1}; 0 below thr_1."""
    thr = quant.thresholds()
    return (y[..., None] > thr).sum(axis=-1).astype(np.int64)


def _step(layer, arr: np.ndarray, scale: float | None):
    """One layer. ``scale`` is the real step of integer codes, None for reals."""
    if isinstance(layer, M.BINARY_LINEAR):
        if scale is None:
            raise ValueError(f"{layer.name}: binary layer needs quantized input")
        s = binary_sum(arr, layer)
        gain = layer.alpha * scale
        return gain[:, None, None] * s + layer.bias[:, None, None], None
    real = arr if scale is None else arr * scale
    if isinstance(layer, (M.Conv, M.FC)):
        return linear(real, layer.weight, layer) + layer.bias[:, None, None], None
    if isinstance(layer, M.MaxPool):
        return max_pool(arr, layer.window, layer.stride), scale
    if isinstance(layer, M.ReLU):
        return (arr if scale is not None else np.maximum(arr, 0.0)), scale
    if isinstance(layer, M.BN):
        return (real - layer.theta[:, None, None]) / layer.sigma[:, None, None], None
    if isinstance(layer, M.Quant):
        return quantize(real, layer), layer.beta_out
    raise TypeError(f"unsupported layer {type(layer).__name__}")


def forward_layers(layers, arr, scale, start: int = 0, trace: dict | None = None):
    for offset, layer in enumerate(layers):
        arr, scale = _step(layer, arr, scale)
        if trace is not None:
            trace[start + offset] = arr
    return arr, scale


def eval_quantized_sub_float(params, x: np.ndarray, beta_in: float):
    """Codes of a quantized substructure and its pre-quantizer feature map."""
    x = np.asarray(x, dtype=np.int64)
    y, _ = _step(params.conv, x, beta_in)
    if params.pool is not None:
        y = max_pool(y, params.pool.window, params.pool.stride)
    if params.bn is not None:
        y, _ = _step(params.bn, y, None)
    return quantize(y, params.quant), y


def eval_nonquantized_sub_float(layers, x: np.ndarray, scale: float | None = None):
    """Evaluate ``layers`` in order; returns (array, scale) as for the layer walker."""
    return forward_layers(layers, np.asarray(x), scale)


def run_float(net: M.NetworkDef, x, trace: bool = False):
    """Real outputs of the whole chain; with ``trace`` also every layer output
    (codes for Quant layers) keyed by layer index."""
    arr = _as_input(x, net)
    record = {} if trace else None
    arr, scale = forward_layers(net.layers, arr, net.input_scale, trace=record)
    out = arr.astype(np.float64) if scale is None else arr * scale
    if trace:
        return out, record
    return out


def quant_codes(net: M.NetworkDef, record: dict) -> dict[int, np.ndarray]:
    return {i: record[i] for i, l in enumerate(net.layers) if isinstance(l, M.Quant)}
