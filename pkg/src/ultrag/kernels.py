"""Hot numeric kernels, in two flavours: numba @njit and pure numpy.

Every kernel here has a numpy implementation (suffix ``_np``) and a numba
implementation (suffix ``_nb``).  The active backend is chosen once at import
time: numba when importable, unless the ``ULTRAG_BACKEND`` environment
variable is set to ``numpy``.

``diffuse``, ``project_max`` and ``adc_scan`` accumulate in the same order on
both backends, so their outputs are bit-identical.  ``kmeans_assign`` uses
BLAS on the numpy path and a sequential loop under numba; assignments can
differ only on rounding-induced distance ties.

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_ENV = os.environ.get("ULTRAG_BACKEND", "").strip().lower()
if _ENV not in ("", "numba", "numpy"):
    raise ValueError(f"ULTRAG_BACKEND must be 'numba' or 'numpy', got {_ENV!r}")
if _ENV == "numba" and numba is None:
    raise ImportError("ULTRAG_BACKEND=numba but numba is not installed")

USE_NUMBA = (numba is not None) and _ENV != "numpy"
ACTIVE_BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(func):
    if numba is None:
        return func
    return numba.njit(cache=True)(func)


# ---------------------------------------------------------------------------
# PPR diffusion step: xp[v] = sum over edges (u, v) of x[u] / deg[u]
# ---------------------------------------------------------------------------

def diffuse_np(src, dst, deg, x, n):
    contrib = x[src] / deg[src]
    return np.bincount(dst, weights=contrib, minlength=n)


def _diffuse_loop(src, dst, deg, x, n):
    out = np.zeros(n, dtype=np.float64)
    for e in range(src.shape[0]):
        u = src[e]
        out[dst[e]] += x[u] / deg[u]
    return out


diffuse_nb = _njit(_diffuse_loop)


# ---------------------------------------------------------------------------
# Max-projection into a dense accumulator.  `keys` are the CSR source ids
# (sorted unique); each source id found in `keys` propagates its value to its
# `targets` slice, keeping the per-target maximum.  `out` is a dense float64
# vector the caller allocates.
# ---------------------------------------------------------------------------

def project_max_np(keys, indptr, targets, src_ids, src_vals, out):
    nk = len(keys)
    if nk == 0 or len(src_ids) == 0:
        return out
    pos = np.searchsorted(keys, src_ids)
    hit = pos < nk
    hit &= keys[np.where(hit, pos, 0)] == src_ids
    for i in np.nonzero(hit)[0]:
        seg = targets[indptr[pos[i]]:indptr[pos[i] + 1]]
        # scalar max per source: duplicate targets in seg are harmless
        out[seg] = np.maximum(out[seg], src_vals[i])
    return out


def _project_max_loop(keys, indptr, targets, src_ids, src_vals, out):
    nk = keys.shape[0]
    if nk == 0:
        return out
    for i in range(src_ids.shape[0]):
        u = src_ids[i]
        lo = np.searchsorted(keys, u)
        if lo >= nk or keys[lo] != u:
            continue
        v = src_vals[i]
        for j in range(indptr[lo], indptr[lo + 1]):
            t = targets[j]
            if v > out[t]:
                out[t] = v
    return out


project_max_nb = _njit(_project_max_loop)


# ---------------------------------------------------------------------------
# PQ asymmetric-distance scan: approximate squared distances of one query to
# every encoded vector in an inverted list.  lut has shape (m, 256); codes has
# shape (n, m).  Subspace terms accumulate in subspace order on both backends.
# ---------------------------------------------------------------------------

def adc_scan_np(lut, codes):
    n, m = codes.shape
    dist = np.zeros(n, dtype=np.float64)
    for sub in range(m):
        dist += lut[sub][codes[:, sub]]
    return dist


def _adc_scan_loop(lut, codes):
    n, m = codes.shape
    dist = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for sub in range(m):
            acc += lut[sub, codes[i, sub]]
        dist[i] = acc
    return dist


adc_scan_nb = _njit(_adc_scan_loop)


# ---------------------------------------------------------------------------
# k-means assignment: index of the nearest centroid per row, ties broken by
# the lowest centroid index.  Squared distances expanded as
# ||x||^2 - 2 x.c + ||c||^2; the ||x||^2 term is rank-invariant and skipped.
# ---------------------------------------------------------------------------

def kmeans_assign_np(points, centroids):
    cnorm = np.einsum("ij,ij->i", centroids, centroids)
    scores = points @ centroids.T
    scores *= -2.0
    scores += cnorm[None, :]
    return np.argmin(scores, axis=1)


def _kmeans_assign_loop(points, centroids, cnorm):
    n = points.shape[0]
    k = centroids.shape[0]
    d = points.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        best_j = 0
        for j in range(k):
            acc = 0.0
            for c in range(d):
                acc += points[i, c] * centroids[j, c]
            score = cnorm[j] - 2.0 * acc
            if score < best:
                best = score
                best_j = j
        out[i] = best_j
    return out


_kmeans_assign_nb_inner = _njit(_kmeans_assign_loop)


def kmeans_assign_nb(points, centroids):
    cnorm = np.einsum("ij,ij->i", centroids, centroids)
    return _kmeans_assign_nb_inner(points, centroids, cnorm)


# ---------------------------------------------------------------------------
# Backend dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    diffuse = diffuse_nb
    project_max = project_max_nb
    adc_scan = adc_scan_nb
    kmeans_assign = kmeans_assign_nb
else:
    diffuse = diffuse_np
    project_max = project_max_np
    adc_scan = adc_scan_np
    kmeans_assign = kmeans_assign_np

_warmed = False


def warmup():
    """Trigger JIT compilation of all kernels on tiny inputs.

    No-op on the numpy backend and on repeat calls.  Call before timing
    anything that dispatches into the kernels.
    """
    global _warmed
    if _warmed or not USE_NUMBA:
        _warmed = True
        return
    src = np.array([0, 1], dtype=np.int32)
    dst = np.array([1, 0], dtype=np.int32)
    deg = np.array([1.0, 1.0])
    diffuse(src, dst, deg, np.array([1.0, 0.0]), 2)
    keys = np.array([0], dtype=np.int32)
    indptr = np.array([0, 1], dtype=np.int64)
    project_max(keys, indptr, np.array([1], dtype=np.int32),
                np.array([0], dtype=np.int32), np.array([1.0]), np.zeros(2))
    adc_scan(np.zeros((2, 256)), np.zeros((3, 2), dtype=np.uint8))
    kmeans_assign(np.zeros((2, 4)), np.zeros((2, 4)))
    _warmed = True
