"""Numba and numpy kernel paths agree; the env flag selects between them."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from ultrag import kernels


def random_csr(rng, n_keys, n_targets, universe):
    keys = np.sort(rng.choice(universe, size=n_keys, replace=False)).astype(np.int32)
    counts = rng.integers(1, 5, size=n_keys)
    indptr = np.zeros(n_keys + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    targets = rng.integers(0, universe, size=int(indptr[-1])).astype(np.int32)
    return keys, indptr, targets


def test_active_backend_is_coherent():
    assert kernels.ACTIVE_BACKEND in ("numba", "numpy")
    assert kernels.USE_NUMBA == (kernels.ACTIVE_BACKEND == "numba")
    # this sandbox installs numba, so the default import path uses it
    if not os.environ.get("ULTRAG_BACKEND"):
        assert kernels.ACTIVE_BACKEND == "numba"


def test_warmup_idempotent():
    kernels.warmup()
    kernels.warmup()


def test_diffuse_paths_bit_identical():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(2, 200))
        e = int(rng.integers(1, 600))
        src = rng.integers(0, n, size=e).astype(np.int32)
        dst = rng.integers(0, n, size=e).astype(np.int32)
        deg = np.bincount(src, minlength=n).astype(np.float64)
        deg[deg == 0] = 1.0
        x = rng.random(n)
        a = kernels.diffuse_np(src, dst, deg, x, n)
        b = kernels.diffuse_nb(src, dst, deg, x, n)
        assert a.tobytes() == b.tobytes()


def test_project_max_paths_bit_identical():
    rng = np.random.default_rng(2)
    for _ in range(10):
        universe = int(rng.integers(5, 150))
        nk = int(rng.integers(1, universe))
        keys, indptr, targets = random_csr(rng, nk, 4, universe)
        ns = int(rng.integers(1, universe))
        src_ids = np.sort(rng.choice(universe, size=ns, replace=False)).astype(np.int32)
        src_vals = rng.random(ns)
        a = kernels.project_max_np(keys, indptr, targets, src_ids, src_vals,
                                   np.zeros(universe))
        b = kernels.project_max_nb(keys, indptr, targets, src_ids, src_vals,
                                   np.zeros(universe))
        assert a.tobytes() == b.tobytes()


def test_project_max_empty_inputs():
    out = kernels.project_max_np(np.empty(0, dtype=np.int32),
                                 np.zeros(1, dtype=np.int64),
                                 np.empty(0, dtype=np.int32),
                                 np.array([3], dtype=np.int32),
                                 np.array([1.0]), np.zeros(5))
    assert not out.any()
    out = kernels.project_max_nb(np.empty(0, dtype=np.int32),
                                 np.zeros(1, dtype=np.int64),
                                 np.empty(0, dtype=np.int32),
                                 np.array([3], dtype=np.int32),
                                 np.array([1.0]), np.zeros(5))
    assert not out.any()


def test_adc_scan_paths_bit_identical():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m = int(rng.integers(1, 9))
        n = int(rng.integers(1, 400))
        lut = rng.random((m, 256))
        codes = rng.integers(0, 256, size=(n, m)).astype(np.uint8)
        a = kernels.adc_scan_np(lut, codes)
        b = kernels.adc_scan_nb(lut, codes)
        assert a.tobytes() == b.tobytes()


def test_kmeans_assign_paths_agree():
    # ties are measure-zero with continuous data, so argmins coincide
    rng = np.random.default_rng(4)
    for _ in range(10):
        n, k, d = int(rng.integers(2, 300)), int(rng.integers(1, 20)), 8
        points = rng.standard_normal((n, d))
        centroids = rng.standard_normal((k, d))
        a = kernels.kmeans_assign_np(points, centroids)
        b = kernels.kmeans_assign_nb(points, centroids)
        assert np.array_equal(a, b)


def test_kmeans_assign_tie_breaks_low_index():
    points = np.zeros((3, 2))
    centroids = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert kernels.kmeans_assign_np(points, centroids).tolist() == [0, 0, 0]
    assert kernels.kmeans_assign_nb(points, centroids).tolist() == [0, 0, 0]


def run_python(code, env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("ULTRAG_BACKEND", None)
    else:
        env["ULTRAG_BACKEND"] = env_value
    return subprocess.run([sys.executable, "-c", code],
                          capture_output=True, text=True, env=env)


def test_env_flag_selects_backend():
    code = "import ultrag.kernels as k; print(k.ACTIVE_BACKEND)"
    assert run_python(code, "numpy").stdout.strip() == "numpy"
    assert run_python(code, "numba").stdout.strip() == "numba"
    assert run_python(code, None).stdout.strip() in ("numba", "numpy")


def test_env_flag_rejects_unknown_value():
    res = run_python("import ultrag.kernels", "cuda")
    assert res.returncode != 0
    assert "ULTRAG_BACKEND" in res.stderr


def test_numpy_backend_runs_pipeline_end_to_end():
    # the fallback path must hold up the same public behavior
    code = """
import ultrag
from ultrag.fuzzy import FuzzySet
from ultrag.kg import KnowledgeGraph
from ultrag.seppr import SeedSpec, SepprConfig, seppr

ents = [f"Q{i}" for i in range(4)]
g = KnowledgeGraph(ents, ["P1"], [0, 1, 2], [0, 0, 0], [1, 2, 3])
ranked = seppr(g, SeedSpec.from_crisp([0]), SepprConfig(k=4))
q = ultrag.parse_dsl("Q0 -> P1 -> P1")
res = ultrag.execute(g, q, [FuzzySet.crisp([0], 4)])
print(ranked[0][0], [int(i) for i in res.scores.ids])
"""
    res = run_python(code, "numpy")
    assert res.returncode == 0, res.stderr
    assert res.stdout.strip() == "1 [2]"
