"""Pytest fixtures; shared builders live in helpers.py."""

from __future__ import annotations

import pytest

from helpers import TOY_ENTITY_LABELS, TOY_RELATION_LABELS, TOY_TRIPLES, build_graph
from ultrag import kernels
from ultrag.kg import LabelTable


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


@pytest.fixture(scope="session")
def toy_graph():
    labels = LabelTable(TOY_ENTITY_LABELS, TOY_RELATION_LABELS)
    return build_graph(TOY_TRIPLES, labels=labels)


@pytest.fixture(scope="session")
def toy_graph_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("toy") / "toy.tsv"
    path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in TOY_TRIPLES),
                    encoding="utf-8")
    return path
