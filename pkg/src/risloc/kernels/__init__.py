"""Steering-vector kernels with a compiled core and a numpy fallback.

The compiled extension ``_fast`` is used when it imports; otherwise, or when
the environment variable ``RISLOC_PURE_PYTHON`` is set to a non-empty value,
the numpy implementations in ``_reference`` are used. ``BACKEND`` names the
active choice.
"""

import os

from . import _reference as reference

if os.environ.get("RISLOC_PURE_PYTHON"):
    _impl = reference
    BACKEND = "numpy"
else:
    try:
        from . import _fast as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = reference
        BACKEND = "numpy"

static_steering = _impl.static_steering
planar_steering = _impl.planar_steering
mobile_response = _impl.mobile_response

__all__ = ["BACKEND", "static_steering", "planar_steering", "mobile_response", "reference"]
