"""Entity linking: embedding search (exact and IVF-PQ) plus the
distance-to-probability mapping.

A mention vector is matched against the entity embedding matrix; the top-k
candidates get probabilities softmax(-d^2 / (2 sigma^2)) with sigma = 0.1 by
default, normalized over the retrieved set only (the tail beyond top-k is
numerically zero at that sigma, and normalizing over the full vocabulary
would not be reproducible across index backends).

The approximate path is a classical inverted-file product quantizer: a
seeded k-means coarse quantizer, 256-codeword codebooks per subspace over
residuals, asymmetric-distance scans over the probed lists.  Training is
deterministic for a fixed seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dsl import Mention, leaves
from .fuzzy import FuzzySet

_MAGIC = b"UEMB"
_VERSION = 1

# probabilities below this are indistinguishable from zero at sigma ~ 0.1
# and are dropped from link results
PROB_FLOOR = 1e-15


class LinkerError(ValueError):
    pass


def _as_id_array(ids, n):
    if ids is None:
        return np.arange(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    for i, v in enumerate(ids):
        if isinstance(v, str):
            if not v.startswith("Q") or not v[1:].isdigit():
                raise LinkerError(f"bad external entity id {v!r}")
            out[i] = int(v[1:])
        else:
            out[i] = int(v)
    return out


class EmbeddingStore:
    """Float32 embedding matrix with one row per entity."""

    def __init__(self, vectors, ids=None):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0 or vectors.shape[1] == 0:
            raise LinkerError("need a non-empty 2-d embedding matrix")
        self.vectors = vectors
        self.ids = _as_id_array(ids, vectors.shape[0])
        if len(self.ids) != vectors.shape[0]:
            raise LinkerError("id count does not match row count")

    @property
    def dim(self):
        return self.vectors.shape[1]

    def external(self, row):
        return f"Q{self.ids[row]}"

    def search(self, query, k, nprobe=None):
        """Exact scan: k nearest rows by true L2 distance, ties by id."""
        query = np.asarray(query, dtype=np.float64).ravel()
        if len(query) != self.dim:
            raise LinkerError(f"query dim {len(query)} != store dim {self.dim}")
        if k <= 0:
            return []
        diff = self.vectors.astype(np.float64) - query[None, :]
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((self.ids, d2))[:k]
        return [(self.external(r), float(np.sqrt(d2[r]))) for r in order]

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IQI", _VERSION, self.vectors.shape[0], self.dim))
            fh.write(self.vectors.astype("<f4").tobytes())
            fh.write(self.ids.astype("<i8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != _MAGIC:
            raise LinkerError("not an embedding file (bad magic)")
        version, count, dim = struct.unpack("<IQI", data[4:20])
        if version != _VERSION:
            raise LinkerError(f"unsupported embedding file version {version}")
        off = 20
        vecs = np.frombuffer(data, dtype="<f4", count=count * dim, offset=off)
        off += 4 * count * dim
        ids = np.frombuffer(data, dtype="<i8", count=count, offset=off)
        return cls(vecs.reshape(count, dim).copy(), ids.copy())


def build_exact(vectors, ids=None):
    return EmbeddingStore(vectors, ids)


def _kmeans(points, k, rng, iters=25):
    """Seeded k-means with k-means++ init; empty clusters respawn on the
    point currently farthest from its centroid."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    # k-means++ seeding
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
        else:
            pick = np.searchsorted(np.cumsum(d2 / total), rng.random())
            centroids[j] = points[min(pick, n - 1)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))

    assign = None
    for _ in range(iters):
        new_assign = kernels.kmeans_assign(points, centroids)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centroids)
        for c in range(points.shape[1]):
            sums[:, c] = np.bincount(assign, weights=points[:, c], minlength=k)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            gathered = centroids[assign]
            dist = np.sum((points - gathered) ** 2, axis=1)
            for j in np.nonzero(~nonempty)[0]:
                far = int(np.argmax(dist))
                centroids[j] = points[far]
                dist[far] = 0.0
    return centroids, kernels.kmeans_assign(points, centroids)


@dataclass(frozen=True)
class IvfPqIndex:
    n_centroids: int
    n_subquantizers: int
    bits_per_code: int
    coarse_centroids: np.ndarray          # (n_centroids, dim)
    codebooks: np.ndarray                 # (n_subquantizers, 256, dim/nsq)
    list_rows: tuple                      # per centroid: int64 row indices
    list_codes: tuple                     # per centroid: (len, nsq) uint8
    ids: np.ndarray                       # row -> external numeric id

    @property
    def dim(self):
        return self.coarse_centroids.shape[1]

    def external(self, row):
        return f"Q{self.ids[row]}"

    def search(self, query, k, nprobe=16):
        """ADC scan over the nprobe nearest inverted lists.

        Distances are approximate; results ascend by (distance, id).
        """
        query = np.asarray(query, dtype=np.float64).ravel()
        if len(query) != self.dim:
            raise LinkerError(f"query dim {len(query)} != index dim {self.dim}")
        if k <= 0:
            return []
        nprobe = max(1, min(int(nprobe), self.n_centroids))
        cd = np.sum((self.coarse_centroids - query[None, :]) ** 2, axis=1)
        probe = np.argsort(cd, kind="stable")[:nprobe]

        dsub = self.dim // self.n_subquantizers
        all_d2, all_rows = [], []
        for c in probe:
            rows = self.list_rows[c]
            if not len(rows):
                continue
            residual = query - self.coarse_centroids[c]
            sub = residual.reshape(self.n_subquantizers, dsub)
            # lut[s, j] = squared distance of residual subvector s to codeword j
            diff = self.codebooks - sub[:, None, :]
            lut = np.einsum("sjc,sjc->sj", diff, diff)
            all_d2.append(kernels.adc_scan(lut, self.list_codes[c]))
            all_rows.append(rows)
        if not all_rows:
            return []
        d2 = np.concatenate(all_d2)
        rows = np.concatenate(all_rows)
        order = np.lexsort((self.ids[rows], d2))[:k]
        return [(self.external(rows[i]), float(np.sqrt(max(d2[i], 0.0))))
                for i in order]


def train_ivfpq(store, n_centroids, n_subquantizers, seed=0, iters=25):
    """Coarse k-means + per-subspace residual codebooks, all from one seed."""
    n, dim = store.vectors.shape
    if n_centroids < 1:
        raise LinkerError("need at least one coarse centroid")
    if n < n_centroids:
        raise LinkerError(f"{n} vectors cannot fill {n_centroids} centroids")
    if n_subquantizers < 1 or dim % n_subquantizers != 0:
        raise LinkerError(f"dim {dim} not divisible by {n_subquantizers} subquantizers")

    rng = np.random.default_rng(seed)
    points = store.vectors.astype(np.float64)
    coarse, assign = _kmeans(points, n_centroids, rng, iters=iters)

    residuals = points - coarse[assign]
    dsub = dim // n_subquantizers
    codebooks = np.empty((n_subquantizers, 256, dsub))
    codes = np.empty((n, n_subquantizers), dtype=np.uint8)
    for s in range(n_subquantizers):
        sub = residuals[:, s * dsub:(s + 1) * dsub]
        if n >= 256:
            cb, sub_assign = _kmeans(sub, 256, rng, iters=iters)
        else:
            # degenerate but valid: every point is its own codeword
            cb = np.zeros((256, dsub))
            cb[:n] = sub
            sub_assign = np.arange(n)
        codebooks[s] = cb
        codes[:, s] = sub_assign

    order = np.argsort(assign, kind="stable")
    bounds = np.searchsorted(assign[order], np.arange(n_centroids + 1))
    list_rows, list_codes = [], []
    for c in range(n_centroids):
        sel = order[bounds[c]:bounds[c + 1]]
        list_rows.append(sel.astype(np.int64))
        list_codes.append(codes[sel])
    return IvfPqIndex(n_centroids=n_centroids, n_subquantizers=n_subquantizers,
                      bits_per_code=8, coarse_centroids=coarse, codebooks=codebooks,
                      list_rows=tuple(list_rows), list_codes=tuple(list_codes),
                      ids=store.ids)


def search(backend, query, k, nprobe=16):
    """Dispatch to the exact store or the IVF-PQ index."""
    if isinstance(backend, IvfPqIndex):
        return backend.search(query, k, nprobe=nprobe)
    return backend.search(query, k)


@dataclass(frozen=True)
class LinkResult:
    mention: Mention
    candidates: tuple  # (external id, distance, probability), by ascending distance


def link(backend, mention, mention_vec, k, sigma=0.1, nprobe=16):
    """Top-k candidates with probabilities softmax(-d^2 / (2 sigma^2)).

    Probabilities that underflow below PROB_FLOOR are dropped; the rest sum
    to 1 within 1e-9.
    """
    if k <= 0:
        raise LinkerError("k must be positive to normalize probabilities")
    if sigma <= 0.0:
        raise LinkerError("sigma must be positive")
    if isinstance(mention, str):
        mention = Mention(mention, 0)
    hits = search(backend, mention_vec, k, nprobe=nprobe)
    if not hits:
        return LinkResult(mention=mention, candidates=())
    d = np.array([h[1] for h in hits])
    logits = -(d * d) / (2.0 * sigma * sigma)
    logits -= logits.max()
    p = np.exp(logits)
    p /= p.sum()
    cands = tuple((ext, float(dist), float(prob))
                  for (ext, dist), prob in zip(hits, p) if prob >= PROB_FLOOR)
    return LinkResult(mention=mention, candidates=cands)


def link_query_leaves(q, g, backend, mention_vecs, k=10, sigma=0.1, nprobe=16):
    """One fuzzy set per leaf, left-to-right.

    Resolved leaves become crisp singletons without touching the index;
    mention leaves take their link probabilities.  `mention_vecs` maps
    mention text to its embedding.  Unknown entities and candidates missing
    from the graph produce diagnostics, not exceptions.
    """
    sets, results, diagnostics = [], [], []
    for leaf in leaves(q):
        ref = leaf.entity
        if isinstance(ref, Mention):
            vec = mention_vecs.get(ref.text)
            if vec is None:
                diagnostics.append(f"no embedding for mention {ref.text!r}")
                sets.append(FuzzySet.empty(g.num_entities))
                continue
            res = link(backend, ref, vec, k, sigma=sigma, nprobe=nprobe)
            results.append(res)
            memberships = {}
            for ext, _, prob in res.candidates:
                if g.has_entity(ext):
                    memberships[g.entity_index(ext)] = prob
                else:
                    diagnostics.append(f"candidate {ext} not in graph")
            sets.append(FuzzySet.from_dict(memberships, g.num_entities))
        else:
            if g.has_entity(ref):
                sets.append(FuzzySet.crisp([g.entity_index(ref)], g.num_entities))
            else:
                diagnostics.append(f"unknown seed entity {ref}")
                sets.append(FuzzySet.empty(g.num_entities))
    return sets, results, diagnostics
