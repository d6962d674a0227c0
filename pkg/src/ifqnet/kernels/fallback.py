"""Pure numpy versions of the popcount kernels."""

from __future__ import annotations

import numpy as np

# bound on the (channels x positions x words) temporary, in elements
_CHUNK = 1 << 22


def binary_conv(w: np.ndarray, planes: np.ndarray) -> np.ndarray:
    w = np.ascontiguousarray(w, dtype=np.uint64)
    planes = np.ascontiguousarray(planes, dtype=np.uint64)
    nc, nw = w.shape
    k, npos, pw = planes.shape
    if pw != nw:
        raise ValueError("weight and activation word counts differ")
    out = np.zeros((nc, npos), dtype=np.int64)
    step = max(1, _CHUNK // max(1, npos * nw))
    for t in range(k):
        x = planes[t]
        xc = np.bitwise_count(x).sum(axis=1, dtype=np.int64)
        for c0 in range(0, nc, step):
            both = np.bitwise_count(w[c0:c0 + step, None, :] & x[None, :, :])
            out[c0:c0 + step] += (2 * both.sum(axis=2, dtype=np.int64) - xc) << t
    return out


def threshold_codes(s: np.ndarray, thr: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    thr = np.asarray(thr, dtype=np.int64)
    if thr.shape[0] != s.shape[0]:
        raise ValueError("threshold rows must match channels")
    return (s[:, :, None] > thr[:, None, :]).sum(axis=2, dtype=np.int64)
