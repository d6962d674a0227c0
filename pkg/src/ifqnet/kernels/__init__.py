"""Hot kernels. The compiled extension is used when present; setting
``IFQ_PURE_PYTHON=1`` forces the numpy fallback."""

import os

from . import fallback

BACKEND = "python"
binary_conv = fallback.binary_conv
threshold_codes = fallback.threshold_codes

if os.environ.get("IFQ_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _popcount
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        binary_conv = _popcount.binary_conv
        threshold_codes = _popcount.threshold_codes

__all__ = ["BACKEND", "binary_conv", "threshold_codes", "fallback"]
