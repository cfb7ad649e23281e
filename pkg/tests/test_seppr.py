"""Seeded diffusion against a dense matrix-power reference."""

from __future__ import annotations

import json

import numpy as np
import pytest

from helpers import build_graph, random_graph
from ultrag.fuzzy import FuzzySet
from ultrag.seppr import (
    SeedSpec,
    SepprConfig,
    SepprError,
    extract_subgraph,
    load_seed_file,
    seppr,
)


def dense_reference(g, x0, alpha, steps, directed):
    """Same recurrence, but through an explicit dense transition matrix."""
    n = g.num_entities
    P = np.zeros((n, n))
    pairs = list(zip(g.heads.tolist(), g.tails.tolist()))
    if not directed:
        pairs = pairs + [(t, h) for h, t in pairs]
    deg = np.zeros(n)
    for u, _ in pairs:
        deg[u] += 1
    for u, v in pairs:
        P[v, u] += 1.0 / deg[u]
    x = x0.copy()
    for _ in range(steps):
        x = alpha * (P @ x) + (1.0 - alpha) * x0
    return x


def ranking_oracle(x):
    return sorted(range(len(x)), key=lambda i: (-x[i], i))


def crisp_x0(g, ids):
    x0 = np.zeros(g.num_entities)
    x0[list(ids)] = 1.0 / len(ids)
    return x0


def test_config_validation():
    with pytest.raises(SepprError):
        SepprConfig(alpha=0.0)
    with pytest.raises(SepprError):
        SepprConfig(alpha=1.0)
    with pytest.raises(SepprError):
        SepprConfig(steps=-1)
    with pytest.raises(SepprError):
        SepprConfig(k=0)
    cfg = SepprConfig()
    assert (cfg.alpha, cfg.steps, cfg.k) == (0.85, 5, 30000)


def test_seed_spec_exactly_one_kind():
    with pytest.raises(SepprError):
        SeedSpec()
    with pytest.raises(SepprError):
        SeedSpec(crisp=(1,), fuzzy=(FuzzySet.empty(3),))
    assert SeedSpec.from_crisp([3, 1, 3]).crisp == (1, 3)


def test_zero_steps_returns_normalized_seeds(toy_graph):
    g = toy_graph
    seeds = SeedSpec.from_crisp([0, 4])
    got = dict(seppr(g, seeds, SepprConfig(steps=0, k=g.num_entities)))
    assert got[0] == got[4] == 0.5
    assert sum(1 for v in got.values() if v > 0) == 2


def test_seed_bounds_checked(toy_graph):
    with pytest.raises(SepprError):
        seppr(toy_graph, SeedSpec.from_crisp([toy_graph.num_entities]))
    with pytest.raises(SepprError):
        seppr(toy_graph, SeedSpec.from_crisp([-1]))
    with pytest.raises(SepprError):
        seppr(toy_graph, SeedSpec(crisp=()))


def test_fuzzy_seeds_renormalized(toy_graph):
    g = toy_graph
    a = FuzzySet([0], [0.8], g.num_entities)
    b = FuzzySet([1], [0.2], g.num_entities)
    got = dict(seppr(g, SeedSpec.from_fuzzy([a, b]),
                     SepprConfig(steps=0, k=g.num_entities)))
    assert got[0] == pytest.approx(0.8)
    assert got[1] == pytest.approx(0.2)
    with pytest.raises(SepprError):
        seppr(g, SeedSpec.from_fuzzy([FuzzySet.empty(g.num_entities)]))


def test_mass_is_conserved_or_leaks(toy_graph):
    # symmetrized toy graph has no dangling nodes: mass stays at 1
    g = toy_graph
    vals = [v for _, v in seppr(g, SeedSpec.from_crisp([0]), SepprConfig(k=g.num_entities))]
    assert sum(vals) == pytest.approx(1.0)
    # a directed chain ends in a dangling node: mass strictly drops
    chain = build_graph([("Q1", "P1", "Q2"), ("Q2", "P1", "Q3")])
    vals = [v for _, v in seppr(chain, SeedSpec.from_crisp([0]),
                                SepprConfig(k=chain.num_entities), directed=True)]
    assert sum(vals) < 1.0


@pytest.mark.parametrize("directed", [False, True])
def test_matches_dense_reference(directed):
    rng = np.random.default_rng(41)
    for trial in range(12):
        size = int(rng.integers(5, 120))
        g = random_graph(rng, size, 3, int(rng.integers(size, 4 * size)))
        n = g.num_entities
        n_seeds = int(rng.integers(1, min(4, n) + 1))
        ids = [int(i) for i in rng.choice(n, size=n_seeds, replace=False)]
        cfg = SepprConfig(k=n)
        got = seppr(g, SeedSpec.from_crisp(ids), cfg, directed=directed)
        want = dense_reference(g, crisp_x0(g, ids), cfg.alpha, cfg.steps, directed)
        got_dense = np.zeros(n)
        for i, v in got:
            got_dense[i] = v
        assert np.max(np.abs(got_dense - want)) < 1e-9
        assert [i for i, _ in got] == ranking_oracle(want)


def test_truncation_to_k(toy_graph):
    g = toy_graph
    full = seppr(g, SeedSpec.from_crisp([0]), SepprConfig(k=g.num_entities))
    head = seppr(g, SeedSpec.from_crisp([0]), SepprConfig(k=3))
    assert head == full[:3]
    assert len(full) == g.num_entities


def test_tie_break_is_ascending_id():
    # two symmetric branches produce exact score ties
    g = build_graph([("Q1", "P1", "Q2"), ("Q1", "P1", "Q3")])
    ranked = seppr(g, SeedSpec.from_crisp([0]), SepprConfig(k=3))
    assert [i for i, _ in ranked] == [0, 1, 2]
    assert ranked[1][1] == ranked[2][1]


def test_extract_subgraph_caps_edges(toy_graph):
    g = toy_graph
    sub = extract_subgraph(g, SeedSpec.from_crisp([g.entity_index("Q998")]),
                           SepprConfig(k=5), edge_cap=4)
    assert sub.num_triples <= 4
    assert sub.num_entities <= 5
    parent_triples = set(g.external_triples())
    assert set(sub.external_triples()) <= parent_triples


def test_seed_file_crisp(tmp_path, toy_graph):
    p = tmp_path / "seeds.txt"
    p.write_text("Q189\nQ192\n", encoding="utf-8")
    spec = load_seed_file(p, toy_graph)
    assert spec.crisp == (toy_graph.entity_index("Q189"), toy_graph.entity_index("Q192"))


def test_seed_file_fuzzy(tmp_path, toy_graph):
    doc = {"mentions": [
        {"text": "turing prize", "candidates": [["Q189", 0.9], ["Q192", 0.1]]},
    ]}
    p = tmp_path / "seeds.json"
    p.write_text(json.dumps(doc), encoding="utf-8")
    spec = load_seed_file(p, toy_graph)
    assert spec.fuzzy is not None and len(spec.fuzzy) == 1
    fs = spec.fuzzy[0]
    assert fs.get(toy_graph.entity_index("Q189")) == pytest.approx(0.9)


def test_seed_file_empty_rejected(tmp_path, toy_graph):
    p = tmp_path / "seeds.txt"
    p.write_text("\n", encoding="utf-8")
    with pytest.raises(SepprError):
        load_seed_file(p, toy_graph)
    p2 = tmp_path / "seeds.json"
    p2.write_text("{\"mentions\": []}", encoding="utf-8")
    with pytest.raises(SepprError):
        load_seed_file(p2, toy_graph)
