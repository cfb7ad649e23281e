"""Command-line entry points.

`ultrag` carries the pipeline subcommands (run, eval, parse, flops);
`seppr` and `link` expose the subsampler and the entity linker standalone.
All graph, label, and embedding locations live in the config file's
`resources` section so invocations stay short.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
import yaml

from . import dsl, evaluation, kg, linker, orchestrator
from . import seppr as seppr_mod
from .llm import make_chat_client


def _load_graph(resources):
    path = resources.get("graph")
    if not path:
        raise SystemExit("config resources.graph is required")
    labels = None
    if resources.get("labels"):
        labels = kg.LabelTable.load(resources["labels"])
    if resources.get("graph_format", "tsv") == "snapshot":
        return kg.KnowledgeGraph.load(path, labels=labels)
    g = kg.ingest_triples(path, id_scheme=resources.get("id_scheme", "qp"),
                          labels=labels)
    return g


def _load_mention_vecs(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {m["text"]: np.asarray(m["vector"], dtype=np.float64)
            for m in doc.get("mentions", [])}


def _build_linker(resources):
    if not resources.get("embeddings"):
        return None, {}
    store = linker.EmbeddingStore.load(resources["embeddings"])
    backend = store
    ivf = resources.get("ivfpq")
    if ivf:
        backend = linker.train_ivfpq(store, ivf.get("centroids", 64),
                                     ivf.get("subquantizers", 8),
                                     seed=ivf.get("seed", 0))
    vecs = {}
    if resources.get("mentions"):
        vecs = _load_mention_vecs(resources["mentions"])
    return backend, vecs


def cmd_run(args):
    with open(args.config, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    resources = doc.get("resources", {})
    cfg = orchestrator.config_from_dict(doc)
    g = _load_graph(resources)
    backend, mention_vecs = _build_linker(resources)

    dataset = []
    with open(args.dataset, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                dataset.append(json.loads(line))
    if args.seeds == "link":
        for row in dataset:
            row.pop("seeds", None)

    endpoint = cfg.llm.endpoint

    def client_factory():
        return make_chat_client(endpoint, cfg.llm.model)

    pipe = orchestrator.Pipeline(cfg, g, chat_client_factory=client_factory,
                                 linker_backend=backend, mention_vecs=mention_vecs)
    transcripts, report = pipe.run_batch(dataset)
    if args.out:
        orchestrator.write_transcripts(transcripts, args.out)
    json.dump(report, sys.stdout, indent=2)
    print()
    return 0


def cmd_eval(args):
    rows = []
    with open(args.transcripts, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(orchestrator.Transcript.from_json(json.loads(line)))
    gold = []
    with open(args.gold, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                gold.append(json.loads(line))
    if len(rows) != len(gold):
        raise SystemExit(f"{len(rows)} transcripts vs {len(gold)} gold rows")

    preds = [set(t.answers) for t in rows]
    golds = [set(r.get("answers", [])) for r in gold]
    ranks = [orchestrator.best_gold_rank(t, g) for t, g in zip(rows, golds)]
    report = {"set": evaluation.set_report(preds, golds),
              "rank": evaluation.rank_report(ranks)}
    if args.per_class:
        labels = []
        for t, r in zip(rows, gold):
            qc = r.get("class")
            if qc is None:
                for rec in t.records:
                    if rec["kind"] == "query":
                        qc = rec.get("query_class")
                labels.append(qc or "?")
            else:
                labels.append(qc)
        report["per_class_set"] = evaluation.per_class_set_report(
            list(zip(labels, preds, golds)))
        report["per_class_rank"] = evaluation.per_class_rank_report(
            list(zip(labels, ranks)))
    json.dump(report, sys.stdout, indent=2)
    print()
    print(evaluation.report_table(report.get("per_class_set", report["set"])),
          file=sys.stderr)
    return 0


def cmd_parse(args):
    try:
        if args.format == "betae":
            ast = dsl.parse_betae(args.query)
        else:
            ast = dsl.parse_dsl(args.query)
    except dsl.QueryParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 1
    print(dsl.serialize_dsl(ast))
    print(f"class: {dsl.query_class(ast)}")
    print(f"depth: {dsl.max_nesting_depth(args.query, format=args.format)}")
    return 0


def cmd_flops(args):
    gnn = evaluation.gnn_flops(args.nodes, args.edges, args.layers, args.hidden)
    llm = evaluation.llm_flops(args.nodes, args.edges, args.p_active)
    print(f"gnn: {gnn}")
    print(f"llm: {llm:.6g}")
    print(f"ratio: {llm / gnn:.6g}")
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(prog="ultrag")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline over a dataset")
    r.add_argument("--config", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--seeds", choices=["gt", "link"], default="gt")
    r.add_argument("--out", default=None, help="transcript JSONL path")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score transcripts against gold answers")
    e.add_argument("--transcripts", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--per-class", action="store_true")
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("parse", help="parse a query and print its canonical form")
    q.add_argument("--query", required=True)
    q.add_argument("--format", choices=["dsl", "betae"], default="dsl")
    q.set_defaults(func=cmd_parse)

    f = sub.add_parser("flops", help="estimate executor vs LLM reading cost")
    f.add_argument("--nodes", type=int, required=True)
    f.add_argument("--edges", type=int, required=True)
    f.add_argument("--layers", type=int, default=6)
    f.add_argument("--hidden", type=int, default=64)
    f.add_argument("--p-active", type=float, default=5.1e9)
    f.set_defaults(func=cmd_flops)

    args = p.parse_args(argv)
    return args.func(args)


def seppr_entry(argv=None):
    p = argparse.ArgumentParser(prog="seppr")
    p.add_argument("--graph", required=True, help="triple TSV or snapshot")
    p.add_argument("--snapshot", action="store_true")
    p.add_argument("--id-scheme", choices=["qp", "int"], default="qp")
    p.add_argument("--seeds", required=True,
                   help="file of Q-ids, or linker fuzzy-seed JSON")
    p.add_argument("--alpha", type=float, default=0.85)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--topk", type=int, default=30000)
    p.add_argument("--edge-cap", type=int, default=None)
    p.add_argument("--directed-ppr", action="store_true")
    p.add_argument("--emit", choices=["ranking", "subgraph"], default="ranking")
    args = p.parse_args(argv)

    if args.snapshot:
        g = kg.KnowledgeGraph.load(args.graph)
    else:
        g = kg.ingest_triples(args.graph, id_scheme=args.id_scheme)
    seeds = seppr_mod.load_seed_file(args.seeds, g)
    cfg = seppr_mod.SepprConfig(alpha=args.alpha, steps=args.steps, k=args.topk)
    if args.emit == "subgraph":
        sub = seppr_mod.extract_subgraph(g, seeds, cfg, edge_cap=args.edge_cap,
                                         directed=args.directed_ppr)
        for h, r, t in sub.external_triples():
            print(f"{h}\t{r}\t{t}")
    else:
        for i, score in seppr_mod.seppr(g, seeds, cfg, directed=args.directed_ppr):
            print(f"{g.entity_external(i)}\t{score:.12g}")
    return 0


def link_entry(argv=None):
    p = argparse.ArgumentParser(prog="link")
    p.add_argument("--embeddings", required=True, help="embedding binary file")
    p.add_argument("--mentions", required=True,
                   help='JSON: {"mentions": [{"text": ..., "vector": [...]}]}')
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--nprobe", type=int, default=16)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--centroids", type=int, default=64)
    p.add_argument("--subquantizers", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    store = linker.EmbeddingStore.load(args.embeddings)
    backend = store if args.exact else linker.train_ivfpq(
        store, args.centroids, args.subquantizers, seed=args.seed)
    vecs = _load_mention_vecs(args.mentions)
    out = {"mentions": []}
    for text, vec in vecs.items():
        res = linker.link(backend, text, vec, args.k, sigma=args.sigma,
                          nprobe=args.nprobe)
        out["mentions"].append({
            "text": text,
            "candidates": [[ext, prob] for ext, _, prob in res.candidates]})
    json.dump(out, sys.stdout, indent=2)
    print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
