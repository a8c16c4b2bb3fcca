"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set EVSPLAT_PURE_PYTHON=1 to force the numpy lane (used by the benchmark
and the lane-parity tests).
"""

import os

from . import _ref

_force_ref = os.environ.get("EVSPLAT_PURE_PYTHON", "") not in ("", "0")

if _force_ref:
    _impl = _ref
    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _ref
        BACKEND = "numpy"

bilinear_vote = _impl.bilinear_vote
splat_backward = _impl.splat_backward
bilinear_vote_backward = _impl.bilinear_vote_backward
splat_records = _impl.splat_records

__all__ = [
    "BACKEND",
    "bilinear_vote",
    "bilinear_vote_backward",
    "splat_records",
    "splat_backward",
]
