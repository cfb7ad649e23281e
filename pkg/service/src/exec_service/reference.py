"""Reference query executor over an inline subgraph.

A deliberately separate implementation of the min/max query semantics: the
service must be able to answer without the main engine installed, and the
two implementations check each other.  Everything is plain dicts; requests
are bounded by the subgraph cap upstream, so no vectorization is needed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_ENTITY_TOKEN = re.compile(r"^Q\d+$")
_RELATION_TOKEN = re.compile(r"^P\d+(_inv)?$")


class SchemaError(ValueError):
    """The query AST or subgraph violates the wire schema."""


class SeedError(ValueError):
    """Seeds are inconsistent with the query or the subgraph."""


# ---------------------------------------------------------------------------
# Query AST: leaf / and / chain nodes, mirroring the wire JSON schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    relations: tuple


@dataclass(frozen=True)
class And:
    children: tuple


@dataclass(frozen=True)
class Chain:
    child: object
    relations: tuple


def _check_relations(rels, where):
    if (not isinstance(rels, list) or not rels
            or not all(isinstance(r, str) and _RELATION_TOKEN.match(r) for r in rels)):
        raise SchemaError(f"{where} needs a non-empty list of P<digits>[_inv] relations")
    return tuple(rels)


def parse_query(doc):
    """Validate and load a query AST from its JSON form.

    Leaves may carry an entity id or an unresolved mention; either way the
    executor binds them to the per-leaf seed lists, so only the relation
    chain matters here.
    """
    if not isinstance(doc, dict):
        raise SchemaError("AST node must be an object")
    kind = doc.get("kind")
    if kind == "leaf":
        rels = _check_relations(doc.get("relations"), "leaf")
        if "entity" in doc:
            if not isinstance(doc["entity"], str) or not _ENTITY_TOKEN.match(doc["entity"]):
                raise SchemaError(f"bad entity {doc.get('entity')!r}")
        else:
            m = doc.get("mention")
            if not isinstance(m, dict) or not isinstance(m.get("text"), str) \
                    or not isinstance(m.get("leaf_index"), int):
                raise SchemaError("leaf needs an entity or a mention")
        return Leaf(rels)
    if kind == "and":
        children = doc.get("children")
        if not isinstance(children, list) or len(children) < 2:
            raise SchemaError("and node needs at least 2 children")
        return And(tuple(parse_query(c) for c in children))
    if kind == "chain":
        rels = _check_relations(doc.get("relations"), "chain")
        return Chain(parse_query(doc.get("child")), rels)
    raise SchemaError(f"unknown node kind {kind!r}")


def count_leaves(q):
    if isinstance(q, Leaf):
        return 1
    if isinstance(q, And):
        return sum(count_leaves(c) for c in q.children)
    return count_leaves(q.child)


# ---------------------------------------------------------------------------
# Subgraph adjacency
# ---------------------------------------------------------------------------

class SubgraphIndex:
    """Per-relation adjacency built from the request's inline triples."""

    def __init__(self, entities, triples):
        self.entities = set(entities)
        self.fwd = {}
        self.rev = {}
        for item in triples:
            h, r, t = item
            if h not in self.entities or t not in self.entities:
                raise SeedError(f"triple endpoint {h!r} or {t!r} not in the entity list")
            self.fwd.setdefault(r, {}).setdefault(h, []).append(t)
            self.rev.setdefault(r, {}).setdefault(t, []).append(h)


# ---------------------------------------------------------------------------
# Evaluation: max over incoming edges for projection, min for intersection
# ---------------------------------------------------------------------------

def _project(index, memberships, rel):
    inverse = rel.endswith("_inv")
    base = rel[:-4] if inverse else rel
    adj = (index.rev if inverse else index.fwd).get(base)
    out = {}
    if adj is None:
        return out
    for u, w in memberships.items():
        if w <= 0.0:
            continue
        for t in adj.get(u, ()):
            if w > out.get(t, 0.0):
                out[t] = w
    return out


def _intersect(sets):
    first = min(sets, key=len)
    out = {}
    for ent, w in first.items():
        for other in sets:
            if other is first:
                continue
            ow = other.get(ent, 0.0)
            if ow < w:
                w = ow
            if w <= 0.0:
                break
        if w > 0.0:
            out[ent] = w
    return out


def evaluate(index, q, leaf_sets):
    """Bottom-up min/max evaluation; leaf_sets bind to leaves left to right."""
    if len(leaf_sets) != count_leaves(q):
        raise SeedError(f"query has {count_leaves(q)} leaves, got {len(leaf_sets)} seed lists")
    cursor = [0]

    def ev(node):
        if isinstance(node, Leaf):
            x = leaf_sets[cursor[0]]
            cursor[0] += 1
            for r in node.relations:
                x = _project(index, x, r)
            return x
        if isinstance(node, And):
            return _intersect([ev(c) for c in node.children])
        x = ev(node.child)
        for r in node.relations:
            x = _project(index, x, r)
        return x

    return ev(q)


def _id_key(ext):
    """Order ids numerically when they look numeric, else lexically."""
    digits = ext[1:] if ext[:1] == "Q" else ext
    if digits.isdigit():
        return (0, int(digits), "")
    return (1, 0, ext)


def rank(memberships, top_n):
    """Positive scores as [id, score] pairs, descending, ties by id."""
    rows = [(ent, w) for ent, w in memberships.items() if w > 0.0]
    rows.sort(key=lambda row: (-row[1], _id_key(row[0])))
    return [[ent, w] for ent, w in rows[:top_n]]
