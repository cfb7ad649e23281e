"""Seed-entity personalized PageRank and subgraph extraction.

Diffusion runs on an edge list derived from the graph's triples, by default
symmetrized (each triple walked both ways): forward-only diffusion can
strand nodes that are only reachable against edge direction, which is
exactly where inverse-relation answers live.  `directed=True` restores
one-way diffusion.

Per step: x'[v] = sum over edges (u, v) of x[u] / deg[u], then
x <- alpha * x' + (1 - alpha) * x0.  Dangling nodes leak their mass, so
sum(x) <= 1 throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .fuzzy import FuzzySet
from .kg import induce_subgraph


class SepprError(ValueError):
    pass


@dataclass(frozen=True)
class SepprConfig:
    alpha: float = 0.85
    steps: int = 5
    k: int = 30000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise SepprError("alpha must lie strictly between 0 and 1")
        if self.steps < 0:
            raise SepprError("steps must be non-negative")
        if self.k < 1:
            raise SepprError("k must be at least 1")


@dataclass(frozen=True)
class SeedSpec:
    """Either a crisp entity set or one fuzzy set per query leaf."""
    crisp: tuple = None
    fuzzy: tuple = None

    def __post_init__(self):
        if (self.crisp is None) == (self.fuzzy is None):
            raise SepprError("seeds are either crisp or fuzzy, exactly one")

    @classmethod
    def from_crisp(cls, ids):
        return cls(crisp=tuple(sorted({int(i) for i in ids})))

    @classmethod
    def from_fuzzy(cls, sets):
        return cls(fuzzy=tuple(sets))


def _edge_arrays(g, directed):
    h, t = g.heads, g.tails
    if directed:
        src, dst = h, t
    else:
        src = np.concatenate([h, t])
        dst = np.concatenate([t, h])
    deg = np.bincount(src, minlength=g.num_entities).astype(np.float64)
    return src, dst, deg


def _initial_vector(g, seeds):
    n = g.num_entities
    x0 = np.zeros(n)
    if seeds.crisp is not None:
        if not seeds.crisp:
            raise SepprError("empty crisp seed set")
        ids = np.asarray(seeds.crisp, dtype=np.int64)
        if ids.min() < 0 or ids.max() >= n:
            raise SepprError("seed id outside graph")
        x0[ids] = 1.0 / len(ids)
        return x0
    for fs in seeds.fuzzy:
        if fs.universe_size != n:
            raise SepprError("fuzzy seed universe does not match graph")
        x0[fs.ids] += fs.vals
    total = x0.sum()
    if total <= 0.0:
        raise SepprError("fuzzy seeds carry no mass")
    x0 /= total
    return x0


def seppr(g, seeds, cfg=None, directed=False):
    """Ranked (entity id, score) list over all nodes, truncated to cfg.k.

    Descending score, ties by ascending id; zero-score nodes participate in
    the ordering, so k >= |V| returns every node.
    """
    cfg = cfg or SepprConfig()
    x0 = _initial_vector(g, seeds)
    src, dst, deg = _edge_arrays(g, directed)
    src = src.astype(np.int32)
    dst = dst.astype(np.int32)
    x = x0
    for _ in range(cfg.steps):
        xp = kernels.diffuse(src, dst, deg, x, g.num_entities)
        x = cfg.alpha * xp + (1.0 - cfg.alpha) * x0
    order = np.lexsort((np.arange(g.num_entities), -x))[:cfg.k]
    return [(int(i), float(x[i])) for i in order]


def extract_subgraph(g, seeds, cfg=None, edge_cap=None, directed=False):
    """Induce the subgraph on the top-k SEPPR nodes, pruned to edge_cap."""
    ranked = seppr(g, seeds, cfg, directed=directed)
    nodes = [i for i, _ in ranked]
    scores = [s for _, s in ranked]
    return induce_subgraph(g, nodes, edge_cap=edge_cap, scores=scores)


def load_seed_file(path, g):
    """Read seeds: a JSON fuzzy-seed file from the linker, or plain Q-ids.

    The JSON form is {"mentions": [{"text": ..., "candidates": [["Q1", p],
    ...]}, ...]}; anything else is treated as one external entity id per
    line.
    """
    with open(path, encoding="utf-8") as fh:
        blob = fh.read()
    stripped = blob.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(blob)
        sets = []
        for m in doc.get("mentions", []):
            memberships = {}
            for ext, p in m.get("candidates", []):
                memberships[g.entity_index(ext)] = float(p)
            sets.append(FuzzySet.from_dict(memberships, g.num_entities))
        if not sets:
            raise SepprError("fuzzy-seed file lists no mentions")
        return SeedSpec.from_fuzzy(sets)
    ids = []
    for line in blob.splitlines():
        line = line.strip()
        if line:
            ids.append(g.entity_index(line))
    if not ids:
        raise SepprError("seed file lists no entities")
    return SeedSpec.from_crisp(ids)
