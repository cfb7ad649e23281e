"""Knowledge-graph store.

Triples live in three parallel int32 arrays sorted by (relation, head, tail)
and deduplicated at build time.  Each relation gets a compact forward CSR
(head -> tails) and inverse CSR (tail -> heads) so projection never touches
triples of other relations.  Graphs are immutable once built and safe to
share across threads.

External ids are strings: entities "Q<digits>", relations "P<digits>".
Internal ids are dense integers assigned in first-appearance order.
"""

from __future__ import annotations

import io
import re
import struct

import numpy as np


class KgError(ValueError):
    pass


class IngestError(KgError):
    pass


_ENTITY_RE = re.compile(r"^Q\d+$")
_RELATION_RE = re.compile(r"^P\d+$")

UNLABELED = "[unlabeled]"

_MAGIC = b"UKG1"
_VERSION = 1


class LabelTable:
    """Display strings for entities and relations, keyed by external id."""

    def __init__(self, entity_labels=None, relation_labels=None):
        self.entity_labels = dict(entity_labels or {})
        self.relation_labels = dict(relation_labels or {})

    def lookup(self, external_id):
        if external_id in self.entity_labels:
            return self.entity_labels[external_id]
        if external_id in self.relation_labels:
            return self.relation_labels[external_id]
        return UNLABELED

    @classmethod
    def load(cls, path):
        """Read a UTF-8 file of `id \\t label` lines."""
        entities = {}
        relations = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise IngestError(f"line {lineno}: expected `id\\tlabel`, got {len(parts)} fields")
                ext, label = parts
                if _ENTITY_RE.match(ext):
                    entities[ext] = label
                elif _RELATION_RE.match(ext):
                    relations[ext] = label
                else:
                    raise IngestError(f"line {lineno}: id {ext!r} is neither Q<digits> nor P<digits>")
        return cls(entities, relations)


def lookup_label(table, external_id):
    return table.lookup(external_id)


def _compact_csr(keys_sorted, targets_sorted):
    """Collapse a (key, target)-sorted pair of arrays into unique keys + indptr."""
    keys, counts = np.unique(keys_sorted, return_counts=True)
    indptr = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return keys.astype(np.int32), indptr, targets_sorted.astype(np.int32)


class KnowledgeGraph:
    """Immutable directed multigraph of (head, relation, tail) triples."""

    def __init__(self, entity_ids, relation_ids, heads, rels, tails, labels=None,
                 parent_index=None):
        self.entity_ids = list(entity_ids)
        self.relation_ids = list(relation_ids)
        self._entity_index = {e: i for i, e in enumerate(self.entity_ids)}
        self._relation_index = {r: i for i, r in enumerate(self.relation_ids)}
        if len(self._entity_index) != len(self.entity_ids):
            raise KgError("duplicate external entity id")
        if len(self._relation_index) != len(self.relation_ids):
            raise KgError("duplicate external relation id")
        self.labels = labels
        # mapping to the parent graph's internal ids when this is an induced
        # subgraph; None for graphs built straight from data
        self.parent_index = parent_index

        heads = np.asarray(heads, dtype=np.int64)
        rels = np.asarray(rels, dtype=np.int64)
        tails = np.asarray(tails, dtype=np.int64)
        n, m = len(self.entity_ids), len(self.relation_ids)
        if len(heads):
            if heads.max() >= n or tails.max() >= n or heads.min() < 0 or tails.min() < 0:
                raise KgError("triple references entity outside id table")
            if rels.max() >= m or rels.min() < 0:
                raise KgError("triple references relation outside id table")

        # sort by (relation, head, tail) and drop exact duplicates
        order = np.lexsort((tails, heads, rels))
        heads, rels, tails = heads[order], rels[order], tails[order]
        if len(heads):
            keep = np.ones(len(heads), dtype=bool)
            keep[1:] = (heads[1:] != heads[:-1]) | (rels[1:] != rels[:-1]) | (tails[1:] != tails[:-1])
            heads, rels, tails = heads[keep], rels[keep], tails[keep]
        self.heads = heads.astype(np.int32)
        self.rels = rels.astype(np.int32)
        self.tails = tails.astype(np.int32)

        self.num_entities = n
        self.num_relations = m
        self.out_degree = np.bincount(self.heads, minlength=n).astype(np.int64)

        # per-relation slices of the sorted triple arrays
        rel_bounds = np.searchsorted(self.rels, np.arange(m + 1))
        self._fwd = []
        self._inv = []
        for r in range(m):
            lo, hi = rel_bounds[r], rel_bounds[r + 1]
            h, t = self.heads[lo:hi], self.tails[lo:hi]
            self._fwd.append(_compact_csr(h, t))  # already (h, t)-sorted
            o = np.lexsort((h, t))
            self._inv.append(_compact_csr(t[o], h[o]))

    # -- id mapping ---------------------------------------------------------

    @property
    def num_triples(self):
        return len(self.heads)

    def entity_index(self, external):
        try:
            return self._entity_index[external]
        except KeyError:
            raise KgError(f"unknown entity {external!r}") from None

    def has_entity(self, external):
        return external in self._entity_index

    def entity_external(self, index):
        return self.entity_ids[index]

    def relation_index(self, external):
        try:
            return self._relation_index[external]
        except KeyError:
            raise KgError(f"unknown relation {external!r}") from None

    def has_relation(self, external):
        return external in self._relation_index

    def relation_external(self, index):
        return self.relation_ids[index]

    # -- traversal ----------------------------------------------------------

    def relation_csr(self, rel_index, inverse=False):
        """(keys, indptr, targets) adjacency for one relation.

        Forward maps head -> tails; inverse maps tail -> heads.  `keys` is
        sorted unique, `targets[indptr[i]:indptr[i+1]]` belongs to keys[i].
        """
        return (self._inv if inverse else self._fwd)[rel_index]

    def triple_arrays(self):
        return self.heads, self.rels, self.tails

    def external_triples(self):
        for h, r, t in zip(self.heads, self.rels, self.tails):
            yield self.entity_ids[h], self.relation_ids[r], self.entity_ids[t]

    # -- persistence --------------------------------------------------------

    def save(self, path):
        """Write the binary snapshot (little-endian, bit-exact across platforms)."""
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IQQQ", _VERSION, self.num_entities,
                                 self.num_relations, self.num_triples))
            for table in (self.entity_ids, self.relation_ids):
                for ext in table:
                    raw = ext.encode("utf-8")
                    fh.write(struct.pack("<I", len(raw)))
                    fh.write(raw)
            for arr in (self.heads, self.rels, self.tails):
                fh.write(arr.astype("<u4").tobytes())

    @classmethod
    def load(cls, path, labels=None):
        with open(path, "rb") as fh:
            data = fh.read()
        buf = io.BytesIO(data)
        if buf.read(4) != _MAGIC:
            raise KgError("not a graph snapshot (bad magic)")
        version, n, m, nt = struct.unpack("<IQQQ", buf.read(28))
        if version != _VERSION:
            raise KgError(f"unsupported snapshot version {version}")

        def read_table(count):
            out = []
            for _ in range(count):
                (ln,) = struct.unpack("<I", buf.read(4))
                out.append(buf.read(ln).decode("utf-8"))
            return out

        entity_ids = read_table(n)
        relation_ids = read_table(m)
        arrs = []
        for _ in range(3):
            arrs.append(np.frombuffer(buf.read(4 * nt), dtype="<u4").astype(np.int64))
        return cls(entity_ids, relation_ids, *arrs, labels=labels)


def ingest_triples(path, id_scheme="qp", labels=None):
    """Build a graph from a UTF-8 file of `head \\t relation \\t tail` lines.

    id_scheme "qp" expects Q<digits> / P<digits> tokens; "int" expects raw
    non-negative integers and synthesizes the external strings.  Duplicate
    triples collapse; internal ids follow first appearance.
    """
    if id_scheme not in ("qp", "int"):
        raise IngestError(f"unknown id scheme {id_scheme!r}")

    entity_ids, entity_index = [], {}
    relation_ids, relation_index = [], {}

    def intern_entity(tok):
        i = entity_index.get(tok)
        if i is None:
            i = len(entity_ids)
            entity_index[tok] = i
            entity_ids.append(tok)
        return i

    def intern_relation(tok):
        i = relation_index.get(tok)
        if i is None:
            i = len(relation_ids)
            relation_index[tok] = i
            relation_ids.append(tok)
        return i

    heads, rels, tails = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise IngestError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            if id_scheme == "qp":
                if not _ENTITY_RE.match(h):
                    raise IngestError(f"line {lineno}: bad head entity {h!r}")
                if not _RELATION_RE.match(r):
                    raise IngestError(f"line {lineno}: bad relation {r!r}")
                if not _ENTITY_RE.match(t):
                    raise IngestError(f"line {lineno}: bad tail entity {t!r}")
            else:
                try:
                    hi, ri, ti = int(h), int(r), int(t)
                except ValueError:
                    raise IngestError(f"line {lineno}: non-integer field under int scheme") from None
                if hi < 0 or ri < 0 or ti < 0:
                    raise IngestError(f"line {lineno}: negative id")
                h, r, t = f"Q{hi}", f"P{ri}", f"Q{ti}"
            heads.append(intern_entity(h))
            rels.append(intern_relation(r))
            tails.append(intern_entity(t))

    return KnowledgeGraph(entity_ids, relation_ids, heads, rels, tails, labels=labels)


def induce_subgraph(g, nodes, edge_cap=None, scores=None):
    """Subgraph on `nodes` with every triple whose endpoints both survive.

    When the induced edge count exceeds `edge_cap`, nodes are dropped in
    ascending (score, internal id) order until it holds; `scores` aligns
    with `nodes` and defaults to all-equal.  Kept entities are re-indexed
    densely in ascending parent-id order; the result's `parent_index` maps
    back.  The relation table is shared with the parent unchanged.
    """
    node_list = list(nodes)
    if scores is not None and len(scores) != len(node_list):
        raise KgError("scores length does not match nodes")
    if edge_cap is not None:
        if edge_cap < 0:
            raise KgError("edge_cap must be non-negative")
        if edge_cap == 0 and node_list:
            raise KgError("edge_cap of 0 with nonempty node set")

    # first occurrence wins for duplicated nodes
    seen = {}
    for i, v in enumerate(node_list):
        v = int(v)
        if v < 0 or v >= g.num_entities:
            raise KgError(f"node {v} outside parent graph")
        if v not in seen:
            seen[v] = float(scores[i]) if scores is not None else 0.0
    ids = np.fromiter(seen.keys(), dtype=np.int64, count=len(seen))
    vals = np.fromiter(seen.values(), dtype=np.float64, count=len(seen))

    member = np.zeros(g.num_entities, dtype=bool)
    member[ids] = True
    alive_idx = np.nonzero(member[g.heads] & member[g.tails])[0]
    kept_mask = np.ones(len(ids), dtype=bool)

    if edge_cap is not None and len(alive_idx) > edge_cap:
        pos_of = {int(v): i for i, v in enumerate(ids)}
        # incident alive-triple lists per local node
        loc_h = np.fromiter((pos_of[int(h)] for h in g.heads[alive_idx]),
                            dtype=np.int64, count=len(alive_idx))
        loc_t = np.fromiter((pos_of[int(t)] for t in g.tails[alive_idx]),
                            dtype=np.int64, count=len(alive_idx))
        incident = [[] for _ in range(len(ids))]
        for j in range(len(alive_idx)):
            incident[loc_h[j]].append(j)
            if loc_t[j] != loc_h[j]:
                incident[loc_t[j]].append(j)
        alive = np.ones(len(alive_idx), dtype=bool)
        alive_count = len(alive_idx)
        for i in np.lexsort((ids, vals)):
            if alive_count <= edge_cap:
                break
            kept_mask[i] = False
            for j in incident[i]:
                if alive[j]:
                    alive[j] = False
                    alive_count -= 1
        alive_idx = alive_idx[alive]

    kept = np.sort(ids[kept_mask])
    remap = np.full(g.num_entities, -1, dtype=np.int64)
    remap[kept] = np.arange(len(kept))
    sub = KnowledgeGraph(
        [g.entity_ids[v] for v in kept],
        list(g.relation_ids),
        remap[g.heads[alive_idx]],
        g.rels[alive_idx],
        remap[g.tails[alive_idx]],
        labels=g.labels,
        parent_index=kept,
    )
    return sub
