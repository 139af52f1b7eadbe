"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``LOCUSTBREED_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("LOCUSTBREED_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "python" if _impl is _pykernels else "cython"

fnv1a64 = _impl.fnv1a64
im2col = _impl.im2col
col2im = _impl.col2im
buffer_clear = _impl.buffer_clear
EARTH_RADIUS_KM = _pykernels.EARTH_RADIUS_KM


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    backends = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        backends["cython"] = _ckernels
    return backends
