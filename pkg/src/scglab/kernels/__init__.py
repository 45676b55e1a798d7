"""Hot numeric kernels with two interchangeable backends.

The numba backend is used when importable; set SCGLAB_NO_NUMBA=1 to force
the pure-numpy path (useful for debugging and as the reference in the
benchmark, see benchmarks/bench_kernels.py). Both backends are deterministic;
float results agree to rounding, integer results (pool argmax, SLIC labels)
agree exactly.
"""

from __future__ import annotations

from ..util import env_flag
from . import _numpy_impl

BACKEND = "numpy"

if not env_flag("SCGLAB_NO_NUMBA"):
    try:
        from . import _numba_impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - exercised only without numba
        _numba_impl = None
else:
    _numba_impl = None

_impl = _numba_impl if BACKEND == "numba" else _numpy_impl

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
slic_assign = _impl.slic_assign


def warmup() -> None:
    if BACKEND == "numba":
        _numba_impl.warmup()
