"""Backend selection for the gaze-processing hot loops.

The compiled extension is used when it was built; otherwise, or when
``GAZEFOCAL_PURE_PYTHON=1`` is set, the numpy/pure-Python fallback is used.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    if os.environ.get("GAZEFOCAL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_impl = _compiled if _compiled is not None else _kernels_py
BACKEND = "cython" if _compiled is not None else "python"

correlate_rows = _impl.correlate_rows
label_components = _impl.label_components


def available_backends() -> dict:
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends
