"""Hot sampling kernels: numba-compiled with a pure-numpy fallback.

The backend is chosen at import time.  numba is used when importable unless
the environment variable ``RRLDP_NO_NUMBA`` is set to a non-empty value
other than ``0``.  Both paths consume the same uniforms and apply the same
inverse-CDF rule (smallest j with u < cdf[j], capped at the last column),
so sampled output is bit-for-bit identical either way.  See
``benchmarks/bench_kernels.py`` for a timing comparison.
"""

from __future__ import annotations

import os

import numpy as np

_FORCE_NUMPY = os.environ.get("RRLDP_NO_NUMBA", "").strip() not in ("", "0")

try:
    if _FORCE_NUMPY:
        raise ImportError("numba disabled via RRLDP_NO_NUMBA")
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:
    _HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _sample_flat_numpy(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, cdf.shape[0] - 1).astype(np.int64)


def _sample_indexed_numpy(cdf: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf[rows] <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1).astype(np.int64)


def _sample_rowwise_numpy(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf.shape[1] - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# numba implementations (compiled only when the backend is active)
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _sample_flat_numba(cdf, u):  # pragma: no cover - exercised via dispatch
        n = u.shape[0]
        m = cdf.shape[0]
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            j = 0
            while j < m - 1 and cdf[j] <= u[k]:
                j += 1
            out[k] = j
        return out

    @njit(cache=True)
    def _sample_indexed_numba(cdf, rows, u):  # pragma: no cover
        n = rows.shape[0]
        m = cdf.shape[1]
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            r = rows[k]
            j = 0
            while j < m - 1 and cdf[r, j] <= u[k]:
                j += 1
            out[k] = j
        return out

    @njit(cache=True)
    def _sample_rowwise_numba(cdf, u):  # pragma: no cover
        n = u.shape[0]
        m = cdf.shape[1]
        out = np.empty(n, dtype=np.int64)
        for k in range(n):
            j = 0
            while j < m - 1 and cdf[k, j] <= u[k]:
                j += 1
            out[k] = j
        return out


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return "numba" if _HAVE_NUMBA else "numpy"


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


def _i64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.int64))


def sample_flat(cdf, u) -> np.ndarray:
    """Sample category indices from one cumulative distribution.

    Args:
        cdf: 1-d ascending cumulative probabilities of length m.
        u: uniforms in [0, 1), one per sample.

    Returns:
        int64 indices in [0, m).
    """
    cdf, u = _f64(cdf), _f64(u)
    if _HAVE_NUMBA:
        return _sample_flat_numba(cdf, u)
    return _sample_flat_numpy(cdf, u)


def sample_indexed(cdf, rows, u) -> np.ndarray:
    """Sample through a shared matrix: sample k draws from row rows[k].

    Args:
        cdf: (r, m) row-wise cumulative probabilities.
        rows: int row index per sample.
        u: uniforms in [0, 1), one per sample.
    """
    cdf, rows, u = _f64(cdf), _i64(rows), _f64(u)
    if _HAVE_NUMBA:
        return _sample_indexed_numba(cdf, rows, u)
    return _sample_indexed_numpy(cdf, rows, u)


def sample_rowwise(cdf, u) -> np.ndarray:
    """Sample one category per row from per-sample cumulative rows.

    Args:
        cdf: (n, m) cumulative probabilities, one private row per sample.
        u: uniforms in [0, 1), one per row.
    """
    cdf, u = _f64(cdf), _f64(u)
    if _HAVE_NUMBA:
        return _sample_rowwise_numba(cdf, u)
    return _sample_rowwise_numpy(cdf, u)
