"""Hot-loop kernels with a compiled core and a numpy fallback.

The compiled extension is selected at import time; set DRIFTLENS_NO_EXT=1
to force the fallback (used by tests and the benchmark). ``BACKEND`` reports
which implementation is live so reports can record it.
"""

import os

import numpy as np

from . import _pairdist_np

if os.environ.get("DRIFTLENS_NO_EXT"):
    _impl = _pairdist_np
    BACKEND = "numpy"
else:
    try:
        from . import _pairdist as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pairdist_np
        BACKEND = "numpy"


def _c64(arr) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype=np.float64)


def pair_absdiff_mean(before_w, after_w, idx_i, idx_j) -> float:
    """Mean |pair distance change| over an explicit pair list."""
    return float(
        _impl.pair_absdiff_mean(
            _c64(before_w),
            _c64(after_w),
            np.ascontiguousarray(idx_i, dtype=np.int64),
            np.ascontiguousarray(idx_j, dtype=np.int64),
        )
    )


def pair_absdiff_mean_full(before_w, after_w) -> float:
    """Mean |pair distance change| over all i < j."""
    return float(_impl.pair_absdiff_mean_full(_c64(before_w), _c64(after_w)))
