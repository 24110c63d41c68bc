import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from hhgnn import cli
from hhgnn.hypergraph import Hypergraph, NodeType

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE_CONFIG = ROOT / "configs" / "example.yaml"

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_hypergraph(rng, max_nodes=20, max_edges=15, cover=True, attrs=False):
    """Random weighted hypergraph; with ``cover`` every node lies in some edge."""
    n = int(rng.integers(2, max_nodes + 1))
    m = int(rng.integers(1, max_edges + 1))
    edges = []
    for _ in range(m):
        k = int(rng.integers(2, min(n, 6) + 1))
        edges.append(tuple(rng.choice(n, size=k, replace=False)))
    if cover:
        seen = {v for e in edges for v in e}
        for v in range(n):
            if v not in seen:
                other = int((v + 1) % n)
                edges.append((v, other))
    types = [list(NodeType)[int(t)] for t in rng.integers(0, 3, size=n)]
    return Hypergraph(
        num_nodes=n,
        node_types=tuple(types),
        hyperedges=tuple(edges),
        edge_weights=rng.uniform(0.1, 5.0, size=len(edges)),
        edge_attrs=rng.normal(size=(len(edges), 3)) if attrs else None,
    )


@st.composite
def hypergraphs(draw, max_nodes=20, max_edges=15, cover=True, attrs=False):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_hypergraph(np.random.default_rng(seed), max_nodes, max_edges, cover, attrs)


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def synthetic_run(tmp_path_factory):
    """Full default pipeline (synth -> evaluate) with the shipped example config."""
    out = tmp_path_factory.mktemp("synthetic_run")
    start = time.perf_counter()
    for cmd in ("synth", "preprocess", "build-graph", "train", "evaluate"):
        code = run_cli(cmd, "--config", EXAMPLE_CONFIG, "--out", out)
        assert code == 0, cmd
    return {"out": out, "seconds": time.perf_counter() - start}
