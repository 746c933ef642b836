"""Kernel dispatch: compiled extension when available, numpy otherwise.

The environment variable SUBMERGE_KERNELS forces a backend ("compiled" or
"numpy"); by default the compiled extension is used when it imported cleanly.
All entry points validate shapes/dtypes here so both backends can assume
well-formed contiguous inputs.
"""

import os

import numpy as np

from . import _numpy as _numpy_backend

try:
    from . import _core as _compiled_backend
except ImportError:
    _compiled_backend = None

SPECIAL_ID = _numpy_backend.SPECIAL_ID

_requested = os.environ.get("SUBMERGE_KERNELS", "").strip().lower()
if _requested == "numpy":
    _impl = _numpy_backend
elif _requested == "compiled":
    if _compiled_backend is None:
        raise ImportError(
            "SUBMERGE_KERNELS=compiled but the compiled extension is not built"
        )
    _impl = _compiled_backend
elif _requested == "":
    _impl = _compiled_backend if _compiled_backend is not None else _numpy_backend
else:
    raise ValueError(f"unknown SUBMERGE_KERNELS value: {_requested!r}")


def backend_name():
    """Name of the active backend: 'compiled' or 'numpy'."""
    return "compiled" if _impl is _compiled_backend else "numpy"


def available_backends():
    """Mapping of backend name -> module, for tests and benchmarks."""
    out = {"numpy": _numpy_backend}
    if _compiled_backend is not None:
        out["compiled"] = _compiled_backend
    return out


def _as_int64_2d(a, name):
    a = np.ascontiguousarray(a, dtype=np.int64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_segments(segments, num_segments, n_expected, b_expected):
    if segments.shape != (b_expected, n_expected):
        raise ValueError(
            f"segments shape {segments.shape} does not match values "
            f"({b_expected}, {n_expected})"
        )
    if num_segments < 0:
        raise ValueError(f"num_segments must be >= 0, got {num_segments}")
    if segments.size:
        lo, hi = segments.min(), segments.max()
        if lo < 0 or hi >= num_segments:
            raise ValueError(
                f"segment ids must lie in [0, {num_segments}), got [{lo}, {hi}]"
            )


def group_ids(word_rows, impl=None):
    """Group index per position; see _numpy.group_ids for the semantics."""
    word_rows = _as_int64_2d(word_rows, "word_rows")
    return (impl or _impl).group_ids(word_rows)


def segment_sum(values, segments, num_segments, impl=None):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ValueError(f"values must be 3-D, got shape {values.shape}")
    segments = _as_int64_2d(segments, "segments")
    _check_segments(segments, num_segments, values.shape[1], values.shape[0])
    return (impl or _impl).segment_sum(values, segments, num_segments)


def segment_max(values, segments, num_segments, impl=None):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 3:
        raise ValueError(f"values must be 3-D, got shape {values.shape}")
    segments = _as_int64_2d(segments, "segments")
    _check_segments(segments, num_segments, values.shape[1], values.shape[0])
    return (impl or _impl).segment_max(values, segments, num_segments)


def segment_counts(segments, num_segments, impl=None):
    segments = _as_int64_2d(segments, "segments")
    _check_segments(segments, num_segments, segments.shape[1], segments.shape[0])
    return (impl or _impl).segment_counts(segments, num_segments)
