"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Set ``AVDUB_PURE_PYTHON=1`` to force the fallback.
"""
import os
import typing as tp

import numpy as np

from . import _pykernels

_impl: tp.Any = _pykernels
BACKEND = "python"

if not os.environ.get("AVDUB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


def backends() -> tp.Dict[str, tp.Any]:
    """All importable backends by name, for benchmarks and parity tests."""
    out: tp.Dict[str, tp.Any] = {"python": _pykernels}
    try:
        from . import _kernels as compiled  # type: ignore[attr-defined]
        out["cython"] = compiled
    except ImportError:  # pragma: no cover
        pass
    return out


def nearest_centroid(x: np.ndarray, centroids: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
    return _impl.nearest_centroid(np.ascontiguousarray(x, dtype=np.float64),
                                  np.ascontiguousarray(centroids, dtype=np.float64))


def rvq_encode(x: np.ndarray, books: np.ndarray) -> np.ndarray:
    return _impl.rvq_encode(np.ascontiguousarray(x, dtype=np.float64),
                            np.ascontiguousarray(books, dtype=np.float64))


def accumulate_means(x: np.ndarray, labels: np.ndarray, num_clusters: int):
    return _impl.accumulate_means(np.ascontiguousarray(x, dtype=np.float64),
                                  np.ascontiguousarray(labels, dtype=np.int64), int(num_clusters))


def levenshtein(ref: tp.Sequence[int], hyp: tp.Sequence[int]) -> int:
    return int(_impl.levenshtein(np.ascontiguousarray(ref, dtype=np.int64),
                                 np.ascontiguousarray(hyp, dtype=np.int64)))
