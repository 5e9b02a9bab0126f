"""Hot numeric kernels with a compiled fast path.

The Cython extension is preferred when built; otherwise the numpy
fallback loads. Set MODCASCADE_PURE_PYTHON=1 to force the fallback.
Both backends are bit-identical (the extension is compiled with FP
contraction off), so evaluation results never depend on which one is
active.
"""

import os

from . import _pykernels

if os.environ.get("MODCASCADE_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

iou_matrix = _impl.iou_matrix
greedy_match = _impl.greedy_match
BACKEND = _impl.BACKEND


def backend_name() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
