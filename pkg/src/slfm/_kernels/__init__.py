"""Hot numeric kernels with two interchangeable backends.

The jitted backend (numba @njit) is the default. Setting the environment
variable ``SLFM_NO_NUMBA=1`` before import, or running without numba
installed, selects the pure-numpy fallback. Both backends are kept in the
test matrix and compared by ``benchmarks/bench_kernels.py``.
"""

import os

_disabled = os.environ.get("SLFM_NO_NUMBA", "").strip() in ("1", "true", "yes")

if not _disabled:
    try:
        from . import jit as _backend

        BACKEND = "numba"
    except ImportError:
        from . import ref as _backend

        BACKEND = "numpy"
else:
    from . import ref as _backend

    BACKEND = "numpy"

conv2d_forward = _backend.conv2d_forward
conv2d_backward = _backend.conv2d_backward
add_sinc_taps = _backend.add_sinc_taps

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "add_sinc_taps"]
