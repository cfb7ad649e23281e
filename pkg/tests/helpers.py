"""Shared test builders: the toy graph and random-instance generators."""

from __future__ import annotations

from ultrag.dsl import Intersection, LeafProjection, chain_query
from ultrag.fuzzy import FuzzySet
from ultrag.kg import KnowledgeGraph

# the 9-entity, 10-edge demo graph used across the suite; the P3 edge is a
# single stored triple even though the relationship reads as mutual
TOY_TRIPLES = [
    ("Q119", "P1", "Q189"),
    ("Q998", "P1", "Q189"),
    ("Q998", "P2", "Q192"),
    ("Q854", "P2", "Q192"),
    ("Q244", "P6", "Q854"),
    ("Q119", "P4", "Q1009"),
    ("Q998", "P4", "Q1009"),
    ("Q998", "P4", "Q5446"),
    ("Q854", "P5", "Q7611"),
    ("Q119", "P3", "Q998"),
]

TOY_ENTITY_LABELS = {
    "Q119": "Y. Martin",
    "Q998": "G. Olsen",
    "Q854": "R. Vance",
    "Q244": "Computer Vision",
    "Q189": "Turing Award",
    "Q192": "Deep Learning",
    "Q1009": "University of Montreal",
    "Q5446": "University of Toronto",
    "Q7611": "RI School of Design",
}

TOY_RELATION_LABELS = {
    "P1": "award received",
    "P2": "field of work",
    "P3": "collaborated with",
    "P4": "employer",
    "P5": "educated at",
    "P6": "subfield of",
}


def build_graph(triples, labels=None):
    entity_ids, relation_ids = [], []
    e_index, r_index = {}, {}
    h, r, t = [], [], []
    for head, rel, tail in triples:
        for tok in (head, tail):
            if tok not in e_index:
                e_index[tok] = len(entity_ids)
                entity_ids.append(tok)
        if rel not in r_index:
            r_index[rel] = len(relation_ids)
            relation_ids.append(rel)
        h.append(e_index[head])
        r.append(r_index[rel])
        t.append(e_index[tail])
    return KnowledgeGraph(entity_ids, relation_ids, h, r, t, labels=labels)


def random_graph(rng, n_nodes, n_rels, n_edges):
    triples = set()
    for _ in range(n_edges):
        triples.add((f"Q{rng.integers(n_nodes)}",
                     f"P{rng.integers(n_rels)}",
                     f"Q{rng.integers(n_nodes)}"))
    return build_graph(sorted(triples))


def random_query(rng, g, max_depth=3, max_and=3):
    """Random AND/projection tree over g's vocabulary, in canonical shape."""
    rels = [g.relation_external(i) + ("_inv" if rng.random() < 0.4 else "")
            for i in range(g.num_relations)]

    def rand_chain():
        return tuple(rels[rng.integers(len(rels))]
                     for _ in range(rng.integers(1, 3)))

    def build(depth):
        if depth <= 0 or rng.random() < 0.45:
            ent = g.entity_external(rng.integers(g.num_entities))
            return LeafProjection(ent, rand_chain())
        arity = rng.integers(2, max_and + 1)
        node = Intersection(tuple(build(depth - 1) for _ in range(arity)))
        if rng.random() < 0.6:
            node = chain_query(node, rand_chain())
        return node

    return build(max_depth)


def crisp_seeds_for(rng, g, q):
    """One crisp singleton per leaf, on random entities."""
    from ultrag.dsl import leaves

    return [FuzzySet.crisp([int(rng.integers(g.num_entities))], g.num_entities)
            for _ in leaves(q)]
