"""Kernel backend selection.

The compiled extension is used when it imports; set ``FACEMAP_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("FACEMAP_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

rasterize = _impl.rasterize
bilinear_masked = _impl.bilinear_masked
