"""Knowledge-graph question answering: generated structured queries, fuzzy
execution over PPR-extracted subgraphs, embedding-based entity linking, and
an evaluation harness."""

__version__ = "0.1.0"

from .dsl import (
    ChainedProjection,
    Intersection,
    LeafProjection,
    Mention,
    QueryParseError,
    convert_betae,
    max_nesting_depth,
    parse_betae,
    parse_dsl,
    query_class,
    serialize_dsl,
)
from .fuzzy import ExecutionResult, FuzzySet, execute, intersect, project, rank_metric_input, top_k
from .kg import KnowledgeGraph, LabelTable, induce_subgraph, ingest_triples, lookup_label
from .linker import EmbeddingStore, IvfPqIndex, LinkResult, build_exact, link, link_query_leaves, search, train_ivfpq
from .orchestrator import (
    Pipeline,
    PipelineConfig,
    Transcript,
    config_from_file,
    replay,
    run_batch,
    run_pipeline,
)
# the seppr function itself stays under ultrag.seppr so the submodule name
# keeps resolving to the module
from .seppr import SeedSpec, SepprConfig, extract_subgraph

__all__ = [name for name in dir() if not name.startswith("_")]
