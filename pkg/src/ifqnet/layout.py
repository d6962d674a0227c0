"""Tensor layout helpers shared by both engines: im2col, pooling, bit planes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(C, H, W) -> patches (Ho*Wo, C*kh*kw) in (C, kh, kw) order, plus (Ho, Wo)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    patches = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    return patches, (ho, wo)


def max_pool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    return win.max(axis=(3, 4))


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Boolean rows (R, n) -> uint64 words (R, ceil(n/64)); padding bits are zero."""
    bits = np.asarray(bits, dtype=np.uint8)
    rows, n = bits.shape
    nbytes = (n + 7) // 8
    words = (nbytes + 7) // 8
    packed = np.zeros((rows, words * 8), dtype=np.uint8)
    packed[:, :nbytes] = np.packbits(bits, axis=1, bitorder="big")
    return packed.view(np.uint64)


def pack_planes(codes: np.ndarray, k: int) -> np.ndarray:
    """Codes (P, n) in [0, 2^k) -> bit planes (k, P, words), plane t holds bit t."""
    codes = np.asarray(codes, dtype=np.int64)
    return np.stack([pack_rows((codes >> t) & 1) for t in range(k)])


def floor_shift(x: np.ndarray, m: int) -> np.ndarray:
    """floor(x / 2^m) for signed integers."""
    return np.right_shift(x, m)


def trunc_div(a: np.ndarray, b) -> np.ndarray:
    """Integer division rounding toward zero; b must be positive."""
    q = np.abs(a) // b
    return np.where(a < 0, -q, q)
