"""Build the heterogeneous CHAR hypergraph from a labeled training table.

Nodes are users, phone placements and activities seen positive in training,
ordered [users | placements | activities] and sorted by name inside each
block. Every distinct set {user, positive placement, positive activities}
of size >= 2 becomes one hyperedge weighted by its frequency.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hypergraph as hg
from .data import POS, InstanceTable, LabeledInstance, Schema
from .errors import EmptyGraph, ParseError
from .hypergraph import Hypergraph, NodeType

log = logging.getLogger(__name__)

NodeKey = tuple[NodeType, str]


def _fsum_mean(rows: np.ndarray) -> np.ndarray:
    # correctly rounded sums make the mean independent of row order
    return np.array([math.fsum(col) for col in rows.T]) / len(rows)


def label_combo(inst: LabeledInstance, schema: Schema) -> frozenset[NodeKey]:
    """Named node set an instance touches; empty when it has no positive label."""
    labels = [(NodeType.PHONE_PLACEMENT, n) for n, y in zip(schema.pp_names, inst.pp_labels) if y == POS]
    labels += [(NodeType.ACTIVITY, n) for n, y in zip(schema.act_names, inst.act_labels) if y == POS]
    if not labels:
        return frozenset()
    return frozenset([(NodeType.USER, inst.user_id)] + labels)


@dataclass(eq=False)
class GraphBundle:
    graph: Hypergraph
    node_init: np.ndarray
    combo_index: dict[tuple[int, ...], int]
    node_index: dict[NodeKey, int]
    schema: Schema
    absent_labels: tuple[str, ...] = field(default=())

    @property
    def user_nodes(self) -> np.ndarray:
        return self.graph.nodes_of_type(NodeType.USER)

    @property
    def pp_nodes(self) -> np.ndarray:
        return self.graph.nodes_of_type(NodeType.PHONE_PLACEMENT)

    @property
    def act_nodes(self) -> np.ndarray:
        return self.graph.nodes_of_type(NodeType.ACTIVITY)

    def type_slices(self) -> list[slice]:
        """Contiguous row ranges for the three node blocks, in node order."""
        nu, npp, na = len(self.user_nodes), len(self.pp_nodes), len(self.act_nodes)
        return [slice(0, nu), slice(nu, nu + npp), slice(nu + npp, nu + npp + na)]

    def label_columns(self) -> tuple[np.ndarray, np.ndarray]:
        """Schema column of each PP node and each ACT node, in node order."""
        names = self.graph.node_names
        pp_col = {n: j for j, n in enumerate(self.schema.pp_names)}
        act_col = {n: j for j, n in enumerate(self.schema.act_names)}
        return (
            np.array([pp_col[names[v]] for v in self.pp_nodes], dtype=np.int64),
            np.array([act_col[names[v]] for v in self.act_nodes], dtype=np.int64),
        )

    def combo_key(self, inst: LabeledInstance) -> frozenset[int]:
        """Node ids of an instance's combo; labels or users without a node are left out."""
        return frozenset(
            self.node_index[k] for k in label_combo(inst, self.schema) if k in self.node_index
        )


def build_graph(train: InstanceTable, min_frequency: int = 1) -> GraphBundle:
    """One hyperedge per distinct combo seen at least ``min_frequency`` times.

    Edge weight is the combo's count, edge attributes the mean feature vector
    of its instances, and each node's initial embedding the mean features of
    every instance whose kept combo contains it.
    """
    if len(train) == 0:
        raise EmptyGraph("training table is empty")
    rows_by_combo: dict[frozenset, list[int]] = defaultdict(list)
    for i, inst in enumerate(train.rows()):
        combo = label_combo(inst, train.schema)
        if len(combo) >= 2:
            rows_by_combo[combo].append(i)
    kept = {c: r for c, r in rows_by_combo.items() if len(r) >= min_frequency}
    if not kept:
        raise EmptyGraph("no instance yields a label combination of two or more nodes")

    present = set().union(*kept)
    order = (NodeType.USER, NodeType.PHONE_PLACEMENT, NodeType.ACTIVITY)
    nodes = [k for t in order for k in sorted(k for k in present if k[0] is t)]
    node_index = {k: i for i, k in enumerate(nodes)}

    edges = sorted((tuple(sorted(node_index[k] for k in c)), c) for c in kept)
    edge_ids = [e for e, _ in edges]
    weights = np.array([len(kept[c]) for _, c in edges], dtype=np.float64)
    attrs = np.stack([_fsum_mean(train.features[kept[c]]) for _, c in edges])

    members: dict[int, list[int]] = defaultdict(list)
    for c, rows in kept.items():
        for k in c:
            members[node_index[k]].extend(rows)
    node_init = np.stack([_fsum_mean(train.features[sorted(members[v])]) for v in range(len(nodes))])

    named = {(NodeType.PHONE_PLACEMENT, n) for n in train.schema.pp_names}
    named |= {(NodeType.ACTIVITY, n) for n in train.schema.act_names}
    absent = tuple(sorted(n for t, n in named if (t, n) not in node_index))
    if absent:
        log.warning("labels never positive in train (no node, cannot be predicted): %s", ", ".join(absent))

    graph = Hypergraph(
        num_nodes=len(nodes),
        node_types=tuple(t for t, _ in nodes),
        hyperedges=tuple(edge_ids),
        edge_weights=weights,
        edge_attrs=attrs,
        node_names=tuple(n for _, n in nodes),
    )
    return GraphBundle(
        graph=graph,
        node_init=node_init,
        combo_index={e: j for j, e in enumerate(edge_ids)},
        node_index=node_index,
        schema=train.schema,
        absent_labels=absent,
    )


def bundle_from_graph(graph: Hypergraph, node_init: np.ndarray, schema: Schema) -> GraphBundle:
    """Reassemble a bundle from a stored graph (node names carry the mapping)."""
    if graph.node_names is None:
        raise ValueError("graph needs node names to rebuild a bundle")
    node_index = {(t, n): i for i, (t, n) in enumerate(zip(graph.node_types, graph.node_names))}
    labels = {(NodeType.PHONE_PLACEMENT, n) for n in schema.pp_names}
    labels |= {(NodeType.ACTIVITY, n) for n in schema.act_names}
    return GraphBundle(
        graph=graph,
        node_init=np.asarray(node_init, dtype=np.float64),
        combo_index={e: j for j, e in enumerate(graph.hyperedges)},
        node_index=node_index,
        schema=schema,
        absent_labels=tuple(sorted(n for t, n in labels if (t, n) not in node_index)),
    )


# -- on-disk artifacts ------------------------------------------------------------


def save_bundle(bundle: GraphBundle, out_dir) -> dict[str, Path]:
    """Write graph.hg, nodes.tsv (id/type/name manifest) and node_init.tsv."""
    out = Path(out_dir)
    paths = {
        "graph": out / "graph.hg",
        "nodes": out / "nodes.tsv",
        "node_init": out / "node_init.tsv",
    }
    hg.save(bundle.graph, paths["graph"])
    g = bundle.graph
    lines = ["id\ttype\tname"] + [
        f"{i}\t{t.value}\t{n}" for i, (t, n) in enumerate(zip(g.node_types, g.node_names))
    ]
    paths["nodes"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    rows = ["\t".join(repr(float(x)) for x in r) for r in bundle.node_init]
    paths["node_init"].write_text("\n".join(rows) + "\n", encoding="utf-8")
    return paths


def load_bundle(out_dir, schema: Schema) -> GraphBundle:
    out = Path(out_dir)
    graph = hg.load(out / "graph.hg")
    lines = (out / "node_init.tsv").read_text(encoding="utf-8").splitlines()
    try:
        node_init = np.array([[float(x) for x in ln.split("\t")] for ln in lines])
    except ValueError as exc:
        raise ParseError(0, "node_init", str(exc)) from None
    return bundle_from_graph(graph, node_init, schema)
