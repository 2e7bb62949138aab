"""Hot numeric kernels with a compiled core and a NumPy fallback.

The backend is chosen once at import time. Set ``ALSIM_KERNELS`` to
``native`` (require the compiled extension), ``fallback`` (force NumPy)
or ``auto`` (default: compiled if available).
"""

import os

from alsim.kernels import _fallback

_requested = os.environ.get("ALSIM_KERNELS", "auto").lower()

if _requested not in ("auto", "native", "fallback"):
    raise RuntimeError(f"ALSIM_KERNELS must be auto|native|fallback, got {_requested!r}")

if _requested == "fallback":
    _impl = _fallback
else:
    try:
        from alsim.kernels import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "native":
            raise RuntimeError(
                "ALSIM_KERNELS=native but the compiled extension is not built"
            ) from None
        _impl = _fallback

BACKEND = "fallback" if _impl is _fallback else "native"

pairwise_iou = _impl.pairwise_iou
bib_pairs = _impl.bib_pairs
min_dist = _impl.min_dist

__all__ = ["BACKEND", "pairwise_iou", "bib_pairs", "min_dist"]
