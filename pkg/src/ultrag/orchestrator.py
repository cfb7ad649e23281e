"""End-to-end pipeline: query generation, linking, subgraph extraction,
execution, sufficiency decision, arbitration.

The loop per question: ask the LLM for a query over the relation
vocabulary, bind leaf fuzzy sets (crisp singletons for resolved entities,
link results for mentions), extract a PPR subgraph seeded by those sets,
execute the query on it, let the decider judge sufficiency, repeat up to
max_iterations, then let the arbitrator turn top candidates into the final
answer set.

Prompts carry the relation vocabulary, the question, seed entities, and
candidate answers; graph connectivity itself never crosses the LLM
boundary.  Every LLM and executor-service exchange lands in the transcript
exactly once with its raw payload, which is what makes runs replayable.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import requests
import yaml

from . import fuzzy
from .dsl import QueryParseError, ast_to_json, parse_dsl, query_class, serialize_dsl
from .fuzzy import FuzzySet
from .kg import UNLABELED
from .linker import link_query_leaves
from .llm import ScriptedChatClient, TransportError, make_chat_client
from .seppr import SeedSpec, SepprConfig, SepprError, extract_subgraph


class PipelineFailure(RuntimeError):
    """Terminal for one question; the batch keeps going."""


@dataclass(frozen=True)
class LinkerParams:
    k: int = 10
    sigma: float = 0.1
    nprobe: int = 16


@dataclass(frozen=True)
class LlmParams:
    endpoint: str = "script:replies.json"
    model: str = "default"
    # full relation vocabulary goes into the prompt up to this many
    # relations; larger graphs get a frequency-ranked slice
    vocab_limit: int = 200


@dataclass(frozen=True)
class PipelineConfig:
    seppr: SepprConfig = field(default_factory=SepprConfig)
    linker: LinkerParams = field(default_factory=LinkerParams)
    llm: LlmParams = field(default_factory=LlmParams)
    arbitration_candidates: int = 50
    max_iterations: int = 1
    executor_backend: str = "local"
    semantics: str = "godel"
    edge_cap: int = None
    directed_ppr: bool = False
    concurrency: int = 4
    score_top_n: int = 100

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.arbitration_candidates < 1:
            raise ValueError("arbitration_candidates must be at least 1")


def config_from_file(path):
    """Load PipelineConfig from a YAML or JSON key-value file."""
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return config_from_dict(doc)


def config_from_dict(doc):
    kwargs = {}
    if "seppr" in doc:
        kwargs["seppr"] = SepprConfig(**doc["seppr"])
    if "linker" in doc:
        kwargs["linker"] = LinkerParams(**doc["linker"])
    if "llm" in doc:
        kwargs["llm"] = LlmParams(**doc["llm"])
    for key in ("arbitration_candidates", "max_iterations", "executor_backend",
                "semantics", "edge_cap", "directed_ppr", "concurrency",
                "score_top_n"):
        if key in doc:
            kwargs[key] = doc[key]
    return PipelineConfig(**kwargs)


GENERATION_TEMPLATE = """\
You translate questions into graph queries. Reply with exactly one query and nothing else.
Rules:
- a leaf is `Q<digits> -> P<digits>` or `<mention text> -> P<digits>`
- relations chain left to right: Q5 -> P1 -> P2
- AND(query, query, ...) intersects two or more queries and may itself be chained
- append _inv to walk a relation backwards
- use only relation ids from the list below

Relations:
{relations}
{seeds_block}{partials_block}Question: {question}
"""

ARBITRATION_TEMPLATE = """\
Question: {question}

Candidate answers, best first:
{candidates}

Reply with the entity ids of all correct answers, comma separated, ids only.
"""


class Transcript:
    """Append-only record of one question's run."""

    def __init__(self, question, seeds=None):
        self.question = question
        self.seeds = list(seeds) if seeds else []
        self.records = []
        self.answers = []
        self.flags = []
        self.failed = False
        self.error = None

    def add(self, kind, **payload):
        self.records.append({"kind": kind, **payload})

    def llm_replies(self):
        return [r["reply"] for r in self.records if r["kind"].startswith("llm_")]

    def count(self, kind):
        return sum(1 for r in self.records if r["kind"] == kind)

    def token_totals(self):
        p = sum(r.get("prompt_tokens", 0) for r in self.records)
        c = sum(r.get("completion_tokens", 0) for r in self.records)
        return p, c

    def to_json(self):
        return {"question": self.question, "seeds": self.seeds,
                "records": self.records, "answers": self.answers,
                "flags": self.flags, "failed": self.failed, "error": self.error}

    @classmethod
    def from_json(cls, doc):
        t = cls(doc["question"], doc.get("seeds"))
        t.records = list(doc.get("records", []))
        t.answers = list(doc.get("answers", []))
        t.flags = list(doc.get("flags", []))
        t.failed = bool(doc.get("failed", False))
        t.error = doc.get("error")
        return t


class AlwaysTrueDecider:
    """The off-the-shelf decider: one loop iteration, always sufficient."""

    def decide(self, x, question):
        return True


class ThresholdDecider:
    """Sufficient once the best membership clears tau."""

    def __init__(self, tau=0.5):
        self.tau = tau

    def decide(self, x, question):
        return len(x) > 0 and float(x.vals.max()) >= self.tau


class LocalExecutor:
    tag = "symbolic"

    def run(self, sub, q, leaf_sets, semantics, top_n):
        return fuzzy.execute(sub, q, leaf_sets, semantics=semantics), None


class RemoteExecutor:
    """Client for the executor wire protocol (POST /execute)."""

    tag = "remote"

    def __init__(self, endpoint, timeout=120.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()

    def run(self, sub, q, leaf_sets, semantics, top_n):
        request = {
            "query": ast_to_json(q),
            "leaf_seeds": [
                [[sub.entity_external(int(i)), float(v)]
                 for i, v in zip(x.ids, x.vals)]
                for x in leaf_sets
            ],
            "subgraph": {
                "entities": list(sub.entity_ids),
                "triples": [[h, r, t] for h, r, t in sub.external_triples()],
            },
            "top_n": top_n,
        }
        resp = self._session.post(self.endpoint + "/execute", json=request,
                                  timeout=self.timeout)
        if resp.status_code != 200:
            raise PipelineFailure(f"executor service returned {resp.status_code}: {resp.text[:200]}")
        doc = resp.json()
        memberships = {}
        for ext, score in doc["scores"]:
            if sub.has_entity(ext):
                memberships[sub.entity_index(ext)] = score
        scores = FuzzySet.from_dict(memberships, sub.num_entities)
        result = fuzzy.ExecutionResult(scores=scores, per_leaf_inputs=tuple(leaf_sets),
                                       executor_tag=doc.get("executor_tag", "remote"))
        return result, {"request": request, "response": doc}


class Pipeline:
    """Shared immutable resources plus the per-question loop."""

    def __init__(self, cfg, g, chat_client=None, chat_client_factory=None,
                 linker_backend=None, mention_vecs=None, decider=None,
                 executor=None):
        self.cfg = cfg
        self.g = g
        self.chat_client = chat_client
        self.chat_client_factory = chat_client_factory
        self.linker_backend = linker_backend
        self.mention_vecs = mention_vecs or {}
        self.decider = decider or AlwaysTrueDecider()
        if executor is not None:
            self.executor = executor
        elif cfg.executor_backend.startswith("http"):
            self.executor = RemoteExecutor(cfg.executor_backend)
        else:
            self.executor = LocalExecutor()
        self._relations_text = self._build_relations_text()

    # -- prompt assembly ----------------------------------------------------

    def _label(self, external):
        if self.g.labels is None:
            return UNLABELED
        return self.g.labels.lookup(external)

    def _build_relations_text(self):
        g = self.g
        if g.num_relations <= self.cfg.llm.vocab_limit:
            chosen = range(g.num_relations)
        else:
            freq = np.bincount(g.rels, minlength=g.num_relations)
            order = np.lexsort((np.arange(g.num_relations), -freq))
            chosen = order[:self.cfg.llm.vocab_limit]
        lines = [f"{g.relation_external(r)}: {self._label(g.relation_external(r))}"
                 for r in chosen]
        return "\n".join(lines)

    def _seeds_block(self, seeds):
        if not seeds:
            return ""
        lines = [f"{s} ({self._label(s)})" for s in seeds]
        return "Seed entities:\n" + "\n".join(lines) + "\n\n"

    def _partials_block(self, partials):
        if not partials:
            return ""
        lines = []
        for i, top_pairs in enumerate(partials, start=1):
            rendered = ", ".join(f"{ext} ({self._label(ext)}) {val:.4f}"
                                 for ext, val in top_pairs[:10])
            lines.append(f"Partial answer {i}: {rendered or '(empty)'}")
        return "Earlier partial answers:\n" + "\n".join(lines) + "\n\n"

    # -- pipeline steps -------------------------------------------------------

    def _complete(self, client, messages, transcript, kind):
        try:
            resp = client.complete(messages)
        except TransportError as e:
            transcript.add("transport_retry", error=str(e))
            try:
                resp = client.complete(messages)
            except TransportError as e2:
                raise PipelineFailure(f"LLM transport failed twice: {e2}") from e2
        transcript.add(kind, prompt=messages[-1]["content"], reply=resp.content,
                       prompt_tokens=resp.prompt_tokens,
                       completion_tokens=resp.completion_tokens)
        return resp.content

    @staticmethod
    def _clean_reply(reply):
        text = reply.strip()
        if text.startswith("```"):
            text = text.strip("`")
            if text.startswith(("dsl", "text", "query")):
                text = text.split("\n", 1)[1] if "\n" in text else text
        return text.strip()

    def generate_query(self, client, question, seeds, partials, transcript):
        prompt = GENERATION_TEMPLATE.format(
            relations=self._relations_text,
            seeds_block=self._seeds_block(seeds),
            partials_block=self._partials_block(partials),
            question=question)
        messages = [{"role": "user", "content": prompt}]
        reply = self._complete(client, messages, transcript, "llm_generation")
        try:
            return parse_dsl(self._clean_reply(reply))
        except QueryParseError as e:
            messages = messages + [
                {"role": "assistant", "content": reply},
                {"role": "user", "content": f"That query failed to parse: {e}. "
                                            "Reply with one corrected query, nothing else."}]
            retry = self._complete(client, messages, transcript, "llm_generation_retry")
            try:
                return parse_dsl(self._clean_reply(retry))
            except QueryParseError as e2:
                raise PipelineFailure(f"query failed to parse twice: {e2}") from e2

    def _seed_spec(self, leaf_sets):
        crisp_ids = []
        for x in leaf_sets:
            if len(x) == 1 and x.vals[0] == 1.0:
                crisp_ids.append(int(x.ids[0]))
            else:
                return SeedSpec.from_fuzzy(leaf_sets)
        return SeedSpec.from_crisp(crisp_ids)

    def arbitrate(self, client, question, candidates, transcript):
        """candidates: list of (external id, probability), best first."""
        if not candidates:
            transcript.flags.append("arbitration_fallback")
            transcript.add("arbitration_skipped", reason="no candidates")
            return []
        lines = [f"{self._label(ext)} ({ext}): {val:.4f}" for ext, val in candidates]
        prompt = ARBITRATION_TEMPLATE.format(question=question,
                                             candidates="\n".join(lines))
        reply = self._complete(client, [{"role": "user", "content": prompt}],
                               transcript, "llm_arbitration")
        picked = []
        for ext in re.findall(r"Q\d+", reply):
            if ext not in picked:
                picked.append(ext)
        known = {ext for ext, _ in candidates}
        for ext in picked:
            if ext not in known:
                transcript.flags.append(f"answer {ext} outside candidates")
        if not picked:
            transcript.flags.append("arbitration_fallback")
            picked = [candidates[0][0]]
        return picked

    def run(self, question, seeds=None):
        """One question through the loop; returns (answers, transcript)."""
        cfg = self.cfg
        transcript = Transcript(question, seeds)
        client = self.chat_client
        if client is None and self.chat_client_factory is not None:
            client = self.chat_client_factory()
        if client is None:
            raise ValueError("pipeline needs a chat client")
        try:
            partials_rendered = []
            sub = None
            x = None
            for _ in range(cfg.max_iterations):
                ast = self.generate_query(client, question, seeds,
                                          partials_rendered, transcript)
                transcript.add("query", dsl=serialize_dsl(ast),
                               query_class=query_class(ast))
                leaf_sets, link_results, diags = link_query_leaves(
                    ast, self.g, self.linker_backend, self.mention_vecs,
                    k=cfg.linker.k, sigma=cfg.linker.sigma, nprobe=cfg.linker.nprobe)
                transcript.add("linking",
                               leaves=[{"size": len(x), "mass": float(x.vals.sum())}
                                       for x in leaf_sets],
                               results=[{"text": r.mention.text,
                                         "candidates": [[e, p] for e, _, p in r.candidates]}
                                        for r in link_results],
                               diagnostics=diags)
                try:
                    seed_spec = self._seed_spec(leaf_sets)
                    sub = extract_subgraph(self.g, seed_spec, cfg.seppr,
                                           edge_cap=cfg.edge_cap,
                                           directed=cfg.directed_ppr)
                except SepprError as e:
                    raise PipelineFailure(f"subgraph extraction failed: {e}") from e
                transcript.add("subgraph", nodes=sub.num_entities,
                               triples=sub.num_triples)

                to_sub = np.full(self.g.num_entities, -1, dtype=np.int64)
                to_sub[sub.parent_index] = np.arange(sub.num_entities)
                leaf_sub = []
                for s in leaf_sets:
                    mapped = to_sub[s.ids]
                    keep = mapped >= 0
                    leaf_sub.append(FuzzySet(mapped[keep], s.vals[keep],
                                             sub.num_entities))

                result, raw = self.executor.run(sub, ast, leaf_sub,
                                                cfg.semantics, cfg.score_top_n)
                x = result.scores
                top_pairs = [(sub.entity_external(i), v)
                             for i, v in fuzzy.top_k(x, cfg.score_top_n)]
                record = {"executor_tag": result.executor_tag,
                          "scores": [[e, v] for e, v in top_pairs],
                          "diagnostics": list(result.diagnostics)}
                if raw is not None:
                    record["raw"] = raw
                transcript.add("execution", **record)

                verdict = bool(self.decider.decide(x, question))
                transcript.add("decision", sufficient=verdict)
                partials_rendered.append(top_pairs)
                if verdict:
                    break

            cands = [(sub.entity_external(i), v)
                     for i, v in fuzzy.top_k(x, cfg.arbitration_candidates)]
            answers = self.arbitrate(client, question, cands, transcript)
            transcript.answers = answers
            return answers, transcript
        except PipelineFailure as e:
            transcript.failed = True
            transcript.error = str(e)
            return [], transcript

    # -- batch --------------------------------------------------------------

    def run_batch(self, dataset):
        """dataset rows: {"question": ..., "seeds": [...]?, "answers": [...]?}.

        Questions run in parallel under cfg.concurrency; transcripts come
        back in dataset order.
        """
        from . import evaluation

        def one(i, row):
            try:
                answers, transcript = self.run(row["question"], row.get("seeds"))
            except Exception as e:  # per-question isolation
                transcript = Transcript(row["question"], row.get("seeds"))
                transcript.failed = True
                transcript.error = f"unexpected: {e}"
                answers = []
            return i, answers, transcript

        results = [None] * len(dataset)
        if dataset:
            with ThreadPoolExecutor(max_workers=max(1, self.cfg.concurrency)) as pool:
                futures = [pool.submit(one, i, row) for i, row in enumerate(dataset)]
                for f in futures:
                    i, answers, transcript = f.result()
                    results[i] = (answers, transcript)
        transcripts = [t for _, t in results]
        preds = [set(a) for a, _ in results]
        golds = [set(row.get("answers", [])) for row in dataset]
        report = {"questions": len(dataset),
                  "failed": sum(1 for t in transcripts if t.failed)}
        scored = [(p, g) for p, g in zip(preds, golds) if g]
        if scored:
            report["set"] = evaluation.set_report([p for p, _ in scored],
                                                  [g for _, g in scored])
            ranks = [best_gold_rank(t, g) for t, g in zip(transcripts, golds) if g]
            report["rank"] = evaluation.rank_report(ranks)
        return transcripts, report


def best_gold_rank(transcript, gold):
    """Rank of the best gold answer within the recorded score window.

    The transcript keeps the top score_top_n executor scores, already in
    (descending value, ascending id) order; a gold answer outside that
    window counts as unranked (None).
    """
    scores = None
    for r in transcript.records:
        if r["kind"] == "execution":
            scores = r["scores"]
    if not scores:
        return None
    for pos, (ext, _) in enumerate(scores, start=1):
        if ext in gold:
            return pos
    return None


def replay(pipeline, transcript):
    """Re-run one question feeding the transcript's own LLM replies back in."""
    client = ScriptedChatClient(transcript.llm_replies())
    rerun = Pipeline(pipeline.cfg, pipeline.g, chat_client=client,
                     linker_backend=pipeline.linker_backend,
                     mention_vecs=pipeline.mention_vecs,
                     decider=pipeline.decider, executor=pipeline.executor)
    return rerun.run(transcript.question, transcript.seeds or None)


def write_transcripts(transcripts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False) + "\n")


def _externalize_seeds(g, seeds):
    if seeds is None:
        return None
    if isinstance(seeds, SeedSpec):
        if seeds.crisp is None:
            raise ValueError("only crisp seed specs convert to prompt seeds")
        return [g.entity_external(i) for i in seeds.crisp]
    return list(seeds)


def run_pipeline(cfg, g, question, seeds=None, **pipeline_kw):
    """Build a one-shot Pipeline and answer a single question.

    seeds: external entity ids (or a crisp SeedSpec) to surface in the
    generation prompt; omit them to force the linking path.  Extra keyword
    arguments (chat_client, linker_backend, mention_vecs, decider,
    executor) pass through to Pipeline.
    """
    if "chat_client" not in pipeline_kw and "chat_client_factory" not in pipeline_kw:
        pipeline_kw["chat_client"] = make_chat_client(cfg.llm.endpoint, cfg.llm.model)
    pipe = Pipeline(cfg, g, **pipeline_kw)
    return pipe.run(question, _externalize_seeds(g, seeds))


def run_batch(cfg, g, dataset, **pipeline_kw):
    """Batch variant of run_pipeline; see Pipeline.run_batch for the report."""
    if "chat_client" not in pipeline_kw and "chat_client_factory" not in pipeline_kw:
        endpoint, model = cfg.llm.endpoint, cfg.llm.model
        pipeline_kw["chat_client_factory"] = lambda: make_chat_client(endpoint, model)
    pipe = Pipeline(cfg, g, **pipeline_kw)
    return pipe.run_batch(dataset)
