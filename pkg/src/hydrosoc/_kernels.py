"""Pick the segment-transport kernel at import time.

The compiled extension is used when it was built; otherwise the pure-Python
module is loaded.  Set ``HYDROSOC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _segments_py

if os.environ.get("HYDROSOC_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _segments_ext as _ext
    except ImportError:
        _ext = None

if _ext is not None:
    SegmentKernel = _ext.SegmentKernel
    BACKEND = "compiled"
else:
    SegmentKernel = _segments_py.SegmentKernel
    BACKEND = "python"

PySegmentKernel = _segments_py.SegmentKernel


def available_backends() -> dict:
    """Every kernel implementation that can be imported here."""
    out = {"python": _segments_py.SegmentKernel}
    try:
        from . import _segments_ext
    except ImportError:
        return out
    out["compiled"] = _segments_ext.SegmentKernel
    return out
