"""Fuzzy-set algebra and the local symbolic query executor.

A FuzzySet stores only its support: parallel arrays of entity ids (sorted
ascending) and membership values in (0, 1].  Absent ids have membership 0;
exact zeros are never stored.

Execution follows the classical fuzzy reading of a query tree: relation
projection aggregates source memberships over adjacency, intersection
combines children elementwise.  Two semantics are available: "godel"
(max projection / min intersection, the default; crisp 0/1 inputs reproduce
plain set semantics) and "product" (probabilistic-sum projection / product
intersection, for fusing soft scores).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

SEMANTICS = ("godel", "product")


class FuzzyError(ValueError):
    pass


class FuzzySet:
    """Sparse membership assignment over a fixed entity universe."""

    __slots__ = ("ids", "vals", "universe_size")

    def __init__(self, ids, vals, universe_size, _sorted=False):
        ids = np.asarray(ids, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if ids.shape != vals.shape or ids.ndim != 1:
            raise FuzzyError("ids and values must be parallel 1-d arrays")
        if not _sorted:
            order = np.argsort(ids, kind="stable")
            ids, vals = ids[order], vals[order]
        if len(ids):
            if ids[0] < 0 or ids[-1] >= universe_size:
                raise FuzzyError("entity id outside universe")
            if np.any(ids[1:] == ids[:-1]):
                raise FuzzyError("duplicate entity id")
            if vals.min() < 0.0 or vals.max() > 1.0:
                raise FuzzyError("membership outside [0, 1]")
            keep = vals > 0.0
            if not keep.all():
                ids, vals = ids[keep], vals[keep]
        self.ids = ids
        self.vals = vals
        self.universe_size = int(universe_size)

    @classmethod
    def from_dict(cls, memberships, universe_size):
        ids = np.fromiter(memberships.keys(), dtype=np.int64, count=len(memberships))
        vals = np.fromiter(memberships.values(), dtype=np.float64, count=len(memberships))
        return cls(ids, vals, universe_size)

    @classmethod
    def empty(cls, universe_size):
        return cls(np.empty(0, dtype=np.int64), np.empty(0), universe_size, _sorted=True)

    @classmethod
    def crisp(cls, ids, universe_size):
        ids = np.unique(np.asarray(list(ids), dtype=np.int64))
        return cls(ids, np.ones(len(ids)), universe_size, _sorted=True)

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        return (isinstance(other, FuzzySet)
                and self.universe_size == other.universe_size
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.vals, other.vals))

    def __repr__(self):
        return f"FuzzySet({len(self.ids)} of {self.universe_size})"

    def get(self, entity_id):
        i = np.searchsorted(self.ids, entity_id)
        if i < len(self.ids) and self.ids[i] == entity_id:
            return float(self.vals[i])
        return 0.0

    def to_dict(self):
        return {int(i): float(v) for i, v in zip(self.ids, self.vals)}

    def dense(self):
        out = np.zeros(self.universe_size)
        out[self.ids] = self.vals
        return out

    def scaled(self, factor):
        return FuzzySet(self.ids, np.clip(self.vals * factor, 0.0, 1.0),
                        self.universe_size, _sorted=True)


@dataclass(frozen=True)
class ExecutionResult:
    scores: FuzzySet
    per_leaf_inputs: tuple
    executor_tag: str
    diagnostics: tuple = field(default=())


def _resolve_relation(g, rel_external):
    inverse = rel_external.endswith("_inv")
    base = rel_external[:-4] if inverse else rel_external
    if not g.has_relation(base):
        return None, inverse
    return g.relation_index(base), inverse


def project(g, x, rel_external, semantics="godel", diagnostics=None):
    """Image of x under one relation step.

    godel: result[v] = max over triples (u, r, v) of x[u]; "_inv" walks the
    inverse adjacency.  product: probabilistic sum instead of max.  Unknown
    relations yield an empty set plus a diagnostic entry, never an exception:
    generated queries may name relations the graph lacks.
    """
    if semantics not in SEMANTICS:
        raise FuzzyError(f"unknown semantics {semantics!r}")
    if x.universe_size != g.num_entities:
        raise FuzzyError("fuzzy set universe does not match graph")
    rel_index, inverse = _resolve_relation(g, rel_external)
    if rel_index is None:
        if diagnostics is not None:
            diagnostics.append(f"unknown relation {rel_external!r}: empty projection")
        return FuzzySet.empty(g.num_entities)
    if not len(x.ids):
        return FuzzySet.empty(g.num_entities)

    keys, indptr, targets = g.relation_csr(rel_index, inverse=inverse)
    if semantics == "godel":
        out = np.zeros(g.num_entities)
        kernels.project_max(keys, indptr, targets,
                            x.ids.astype(np.int32), x.vals, out)
    else:
        miss = np.ones(g.num_entities)
        pos = np.searchsorted(keys, x.ids)
        for i in range(len(x.ids)):
            p = pos[i]
            if p < len(keys) and keys[p] == x.ids[i]:
                seg = targets[indptr[p]:indptr[p + 1]]
                np.multiply.at(miss, seg, 1.0 - x.vals[i])
        out = 1.0 - miss
    support = np.nonzero(out > 0.0)[0]
    return FuzzySet(support, out[support], g.num_entities, _sorted=True)


def intersect(sets, semantics="godel"):
    """Elementwise combination of two or more fuzzy sets over one universe."""
    if semantics not in SEMANTICS:
        raise FuzzyError(f"unknown semantics {semantics!r}")
    sets = list(sets)
    if len(sets) < 2:
        raise FuzzyError("intersection needs at least 2 sets")
    universe = sets[0].universe_size
    for s in sets[1:]:
        if s.universe_size != universe:
            raise FuzzyError("mismatched universes")
    acc = sets[0]
    for s in sets[1:]:
        ids, ia, ib = np.intersect1d(acc.ids, s.ids, assume_unique=True,
                                     return_indices=True)
        if semantics == "godel":
            vals = np.minimum(acc.vals[ia], s.vals[ib])
        else:
            vals = acc.vals[ia] * s.vals[ib]
        acc = FuzzySet(ids, vals, universe, _sorted=True)
    return acc


def execute(g, q, leaf_inputs, semantics="godel", executor_tag="symbolic"):
    """Bottom-up evaluation of a query tree.

    leaf_inputs bind to leaves left-to-right and replace the leaves' own
    entity references (seeds are produced upstream, by linking or directly).
    """
    from . import dsl

    leaf_nodes = dsl.leaves(q)
    if len(leaf_inputs) != len(leaf_nodes):
        raise FuzzyError(f"query has {len(leaf_nodes)} leaves, got {len(leaf_inputs)} inputs")
    for x in leaf_inputs:
        if x.universe_size != g.num_entities:
            raise FuzzyError("leaf input universe does not match graph")
    diagnostics = []
    cursor = [0]

    def ev(node):
        if isinstance(node, dsl.LeafProjection):
            x = leaf_inputs[cursor[0]]
            cursor[0] += 1
            for r in node.relations:
                x = project(g, x, r, semantics=semantics, diagnostics=diagnostics)
            return x
        if isinstance(node, dsl.Intersection):
            return intersect([ev(c) for c in node.children], semantics=semantics)
        x = ev(node.child)
        for r in node.relations:
            x = project(g, x, r, semantics=semantics, diagnostics=diagnostics)
        return x

    scores = ev(q)
    return ExecutionResult(scores=scores, per_leaf_inputs=tuple(leaf_inputs),
                           executor_tag=executor_tag, diagnostics=tuple(diagnostics))


def top_k(x, k):
    """k highest memberships, descending, ties by ascending id."""
    if k < 0:
        raise FuzzyError("k must be non-negative")
    order = np.lexsort((x.ids, -x.vals))[:k]
    return [(int(x.ids[i]), float(x.vals[i])) for i in order]


def rank_metric_input(x, answers):
    """1-based rank of each answer id under descending-value, ascending-id order.

    Entities outside the support count as membership 0 and rank after all
    positive ones, ordered among themselves by id.
    """
    n_support = len(x.ids)
    ranks = {}
    for a in answers:
        a = int(a)
        if a < 0 or a >= x.universe_size:
            raise FuzzyError(f"answer id {a} outside universe")
        i = np.searchsorted(x.ids, a)
        if i < n_support and x.ids[i] == a:
            va = x.vals[i]
            before = int(np.sum(x.vals > va)) + int(np.sum((x.vals == va) & (x.ids < a)))
        else:
            # zero-membership block: all of the support, then lower zero ids
            before = n_support + (a - i)
        ranks[a] = before + 1
    return ranks
