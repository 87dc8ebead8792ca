"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; setting
``VONEBENCH_PURE_PYTHON=1`` forces the numpy fallback.  Both backends share
one contract: float64 in, float64 out, bit-reproducible across runs.
"""

import os

from . import numpy_backend

if os.environ.get("VONEBENCH_PURE_PYTHON") == "1":
    _impl = numpy_backend
    _BACKEND = "numpy"
else:
    try:
        from . import _ext as _impl
        _BACKEND = "ext"
    except ImportError:
        _impl = numpy_backend
        _BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_grad_weights = _impl.conv2d_grad_weights
conv2d_grad_input = _impl.conv2d_grad_input
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward


def backend_name():
    """Which kernel implementation is active: 'ext' or 'numpy'."""
    return _BACKEND
