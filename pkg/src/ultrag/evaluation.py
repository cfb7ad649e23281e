"""Metrics, the ground-truth query oracle, and the FLOPs estimator.

Two metric families, named apart on purpose because the word "hits" is
overloaded in the wild: ranking metrics (mrr, hit@k) consume the 1-based
rank of the best gold answer per question; set metrics (hits_exact, recall,
f1) compare predicted answer sets against gold sets.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass

from .dsl import Intersection, LeafProjection, chain_query
from .kg import KgError


# -- ranking metrics ---------------------------------------------------------

def mrr(ranks):
    """Mean reciprocal rank; None means the gold answer was never retrieved."""
    ranks = list(ranks)
    if not ranks:
        return 0.0
    return sum(1.0 / r for r in ranks if r) / len(ranks)


def hit_at_k(ranks, k):
    ranks = list(ranks)
    if not ranks:
        return 0.0
    return sum(1 for r in ranks if r and r <= k) / len(ranks)


def rank_report(ranks):
    ranks = list(ranks)
    return {"mrr": mrr(ranks),
            "hit@1": hit_at_k(ranks, 1),
            "hit@3": hit_at_k(ranks, 3),
            "hit@10": hit_at_k(ranks, 10)}


# -- set metrics -------------------------------------------------------------

def _paired(preds, golds):
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ValueError("prediction and gold lists differ in length")
    pairs = []
    for i, (p, g) in enumerate(zip(preds, golds)):
        if not g:
            warnings.warn(f"question {i} has empty gold set, excluded")
            continue
        pairs.append((set(p), set(g)))
    return pairs


def hits_exact(preds, golds):
    """Fraction of questions with at least one correct answer."""
    pairs = _paired(preds, golds)
    if not pairs:
        return 0.0
    return sum(1 for p, g in pairs if p & g) / len(pairs)


def recall(preds, golds):
    pairs = _paired(preds, golds)
    if not pairs:
        return 0.0
    return sum(len(p & g) / len(g) for p, g in pairs) / len(pairs)


def f1(preds, golds):
    pairs = _paired(preds, golds)
    if not pairs:
        return 0.0
    total = 0.0
    for p, g in pairs:
        tp = len(p & g)
        if tp == 0:
            continue
        prec = tp / len(p)
        rec = tp / len(g)
        total += 2 * prec * rec / (prec + rec)
    return total / len(pairs)


def set_report(preds, golds):
    return {"hits": hits_exact(preds, golds),
            "recall": recall(preds, golds),
            "f1": f1(preds, golds)}


def per_class_rank_report(labeled_ranks):
    """labeled_ranks: (class label, rank) pairs -> per-class report + "Avg"."""
    groups = defaultdict(list)
    for label, rank in labeled_ranks:
        groups[label].append(rank)
    out = {label: rank_report(rs) for label, rs in sorted(groups.items())}
    out["Avg"] = rank_report([r for _, r in labeled_ranks])
    return out


def per_class_set_report(labeled_sets):
    """labeled_sets: (class label, pred set, gold set) triples."""
    groups = defaultdict(lambda: ([], []))
    for label, pred, gold in labeled_sets:
        groups[label][0].append(pred)
        groups[label][1].append(gold)
    out = {label: set_report(p, g) for label, (p, g) in sorted(groups.items())}
    out["Avg"] = set_report([p for _, p, _ in labeled_sets],
                            [g for _, _, g in labeled_sets])
    return out


def report_table(report):
    """Aligned-column text rendering of a (possibly per-class) report dict."""
    if not report:
        return "(empty report)"
    if all(isinstance(v, dict) for v in report.values()):
        rows = list(report.items())
        metrics = list(rows[0][1].keys())
        width = max(len(str(k)) for k, _ in rows)
        head = " ".join(f"{m:>8}" for m in metrics)
        lines = [f"{'class':<{width}} {head}"]
        for label, vals in rows:
            body = " ".join(f"{vals[m]:>8.4f}" for m in metrics)
            lines.append(f"{label:<{width}} {body}")
        return "\n".join(lines)
    return "\n".join(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}"
                     for k, v in report.items())


# -- ground-truth query oracle ------------------------------------------------

def gt_query_from_subgraph(g, answer_root):
    """Recover a query that a proof subgraph certifies for its answer node.

    Breadth-first traversal from the answer over edges in both directions;
    the discovery tree's leaves become leaf projections on their entities,
    single-child nodes extend the relation chain, and multi-child nodes
    become intersections.  Edges pointing toward the root contribute their
    relation as-is, edges pointing away contribute the _inv form.
    """
    if answer_root < 0 or answer_root >= g.num_entities:
        raise KgError(f"answer root {answer_root} outside graph")
    adj = defaultdict(list)
    heads, rels, tails = g.triple_arrays()
    for h, r, t in zip(heads, rels, tails):
        # (neighbor, relation, toward_me): does the triple point at this node
        adj[int(t)].append((int(h), int(r), True))
        adj[int(h)].append((int(t), int(r), False))

    children = defaultdict(list)
    edge_up = {}
    visited = {int(answer_root)}
    frontier = [int(answer_root)]
    while frontier:
        nxt = []
        for v in frontier:
            for u, r, toward in sorted(adj[v], key=lambda e: (e[0], not e[2], e[1])):
                if u in visited:
                    continue
                visited.add(u)
                children[v].append(u)
                edge_up[u] = (r, toward)
                nxt.append(u)
        frontier = nxt
    if not children[int(answer_root)]:
        raise KgError("answer root is unreachable from any leaf")

    def build(v):
        parts = []
        for u in children[v]:
            r, toward = edge_up[u]
            rel_ext = g.relation_external(r) + ("" if toward else "_inv")
            below = build(u)
            if below is None:
                parts.append(LeafProjection(g.entity_external(u), (rel_ext,)))
            else:
                parts.append(chain_query(below, (rel_ext,)))
        if not parts:
            return None
        if len(parts) == 1:
            return parts[0]
        return Intersection(tuple(parts))

    return build(int(answer_root))


# -- FLOPs model ---------------------------------------------------------------

@dataclass(frozen=True)
class FlopsModel:
    layers: int = 6
    hidden: int = 64
    p_active: float = 5.1e9

    def gnn(self, n_nodes, n_edges):
        return gnn_flops(n_nodes, n_edges, self.layers, self.hidden)

    def llm(self, n_nodes, n_edges):
        return llm_flops(n_nodes, n_edges, self.p_active)


def gnn_flops(n_nodes, n_edges, layers=6, hidden=64):
    """Message-passing cost: layers * (2*E*d + 4*d^2*N), exact integer."""
    return layers * (2 * n_edges * hidden + 4 * hidden * hidden * n_nodes)


def llm_flops(n_nodes, n_edges, p_active=5.1e9):
    """Decoder cost of reading the subgraph: 2 * P_active * (N + E + 1)."""
    return 2.0 * p_active * (n_nodes + n_edges + 1)
