"""Backend selection for the DP Bellman backup.

The compiled extension is used when it was built; set ``ECOACC_PURE_PYTHON=1``
to force the NumPy implementation.
"""

from __future__ import annotations

import os

import numpy as np

from . import _dp_py

try:
    if os.environ.get("ECOACC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _dpcore as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"


def _as_u8(a):
    return None if a is None else np.ascontiguousarray(a, dtype=np.bool_).view(np.uint8)


def bellman_stage(V_next, iv0, wv, joff, wt, valid, stage, cross_ok, j_lo, j_hi=None,
                  backend=None):
    backend = backend or BACKEND
    if j_hi is None:
        j_hi = V_next.shape[1] - 1
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled DP kernel is not available")
        return _compiled.bellman_stage(
            np.ascontiguousarray(V_next, dtype=np.float64),
            np.ascontiguousarray(iv0, dtype=np.int64),
            np.ascontiguousarray(wv, dtype=np.float64),
            np.ascontiguousarray(joff, dtype=np.int64),
            np.ascontiguousarray(wt, dtype=np.float64),
            _as_u8(valid),
            np.ascontiguousarray(stage, dtype=np.float64),
            _as_u8(cross_ok),
            int(j_lo),
            int(j_hi),
        )
    if backend == "numpy":
        return _dp_py.bellman_stage(V_next, iv0, wv, joff, wt, valid, stage, cross_ok, int(j_lo),
                                     int(j_hi))
    raise ValueError(f"unknown backend {backend!r}")


def available_backends() -> list[str]:
    return ["numpy"] + (["cython"] if _compiled is not None else [])
