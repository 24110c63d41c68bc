"""Typed hypergraph with incidence, degree and convolution-operator helpers.

Sparse matrices are kept as canonical sorted (row, col, value) triplets.
Graphs here are small (tens of nodes), so the kernels favour clarity and
deterministic reduction order over raw speed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import IsolatedNode, ParseError, ShapeMismatch

FORMAT_HEADER = "# hhgnn-hypergraph v1"


class NodeType(enum.Enum):
    USER = "User"
    PHONE_PLACEMENT = "PhonePlacement"
    ACTIVITY = "Activity"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical COO matrix: entries sorted by (row, col), no duplicates."""

    rows: int
    cols: int
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray

    @classmethod
    def from_triplets(cls, rows: int, cols: int, r, c, v) -> "SparseMatrix":
        """Build a canonical matrix, summing duplicate (row, col) entries."""
        r = np.asarray(r, dtype=np.int64).ravel()
        c = np.asarray(c, dtype=np.int64).ravel()
        v = np.asarray(v, dtype=np.float64).ravel()
        if not (len(r) == len(c) == len(v)):
            raise ShapeMismatch("triplet arrays differ in length")
        if len(r) and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ShapeMismatch("triplet index out of range")
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if len(r):
            starts = np.flatnonzero(np.r_[True, (r[1:] != r[:-1]) | (c[1:] != c[:-1])])
            v = np.add.reduceat(v, starts)
            r, c = r[starts], c[starts]
        return cls(rows, cols, _frozen(r), _frozen(c), _frozen(v))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseMatrix":
        r, c = np.nonzero(a)
        return cls.from_triplets(a.shape[0], a.shape[1], r, c, a[r, c])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return len(self.val)

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(x)) for a, b, x in zip(self.row, self.col, self.val)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.row, self.col] = self.val
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_triplets(self.cols, self.rows, self.col, self.row, self.val)

    @property
    def T(self) -> "SparseMatrix":
        return self.transpose()

    def matmul(self, d: np.ndarray) -> np.ndarray:
        """Sparse @ dense. Output keeps the dense operand's dtype."""
        if d.ndim != 2 or d.shape[0] != self.cols:
            raise ShapeMismatch(f"cannot multiply {self.shape} by {d.shape}")
        out = np.zeros((self.rows, d.shape[1]), dtype=d.dtype)
        if self.nnz:
            np.add.at(out, self.row, self.val.astype(d.dtype)[:, None] * d[self.col])
        return out

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row, weights=self.val, minlength=self.rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row, other.row)
            and np.array_equal(self.col, other.col)
            and np.array_equal(self.val, other.val)
        )


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Undirected typed hypergraph with weighted, optionally attributed edges.

    Hyperedges are stored as sorted node-id tuples. ``node_names`` is an
    optional human-readable label per node and plays no part in the maths.
    """

    num_nodes: int
    node_types: tuple[NodeType, ...]
    hyperedges: tuple[tuple[int, ...], ...]
    edge_weights: np.ndarray
    edge_attrs: Optional[np.ndarray] = None
    node_names: Optional[tuple[str, ...]] = field(default=None)

    def __post_init__(self):
        edges = tuple(tuple(sorted(int(v) for v in e)) for e in self.hyperedges)
        object.__setattr__(self, "hyperedges", edges)
        object.__setattr__(self, "node_types", tuple(NodeType(t) for t in self.node_types))
        weights = np.array(self.edge_weights, dtype=np.float64).ravel()
        object.__setattr__(self, "edge_weights", _frozen(weights))
        if self.node_names is not None:
            object.__setattr__(self, "node_names", tuple(str(n) for n in self.node_names))
            if len(self.node_names) != self.num_nodes:
                raise ValueError("node_names length differs from num_nodes")

        if len(self.node_types) != self.num_nodes:
            raise ValueError("node_types length differs from num_nodes")
        if len(weights) != len(edges):
            raise ValueError("one weight per hyperedge required")
        for i, e in enumerate(edges):
            if len(e) < 2:
                raise ValueError(f"hyperedge {i} has fewer than 2 nodes")
            if len(set(e)) != len(e):
                raise ValueError(f"hyperedge {i} repeats a node")
            if e[0] < 0 or e[-1] >= self.num_nodes:
                raise ValueError(f"hyperedge {i} references a node outside [0, {self.num_nodes})")
        if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
            raise ValueError("edge weights must be finite and positive")
        if self.edge_attrs is not None:
            attrs = np.array(self.edge_attrs, dtype=np.float64)
            if attrs.ndim != 2 or attrs.shape[0] != len(edges):
                raise ValueError("edge_attrs must be a (num_edges, d_x) matrix")
            object.__setattr__(self, "edge_attrs", _frozen(attrs))

    @property
    def num_edges(self) -> int:
        return len(self.hyperedges)

    def nodes_of_type(self, t: NodeType) -> np.ndarray:
        return np.array([i for i, nt in enumerate(self.node_types) if nt is t], dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Hypergraph):
            return NotImplemented
        if (self.edge_attrs is None) != (other.edge_attrs is None):
            return False
        return (
            self.num_nodes == other.num_nodes
            and self.node_types == other.node_types
            and self.hyperedges == other.hyperedges
            and self.node_names == other.node_names
            and np.array_equal(self.edge_weights, other.edge_weights)
            and (self.edge_attrs is None or np.array_equal(self.edge_attrs, other.edge_attrs))
        )


def incidence_matrix(g: Hypergraph) -> SparseMatrix:
    """|V| x |E| membership matrix, entry (v, e) = 1 iff v is in e."""
    r = [v for e in g.hyperedges for v in e]
    c = [j for j, e in enumerate(g.hyperedges) for _ in e]
    return SparseMatrix.from_triplets(g.num_nodes, g.num_edges, r, c, np.ones(len(r)))


def node_degrees(g: Hypergraph) -> np.ndarray:
    deg = np.zeros(g.num_nodes)
    for e, w in zip(g.hyperedges, g.edge_weights):
        deg[list(e)] += w
    return deg


def edge_degrees(g: Hypergraph) -> np.ndarray:
    return np.array([len(e) for e in g.hyperedges], dtype=np.float64)


def conv_operator(g: Hypergraph) -> SparseMatrix:
    """Row-normalized propagation matrix D_V^-1 H W D_E^-1 H^T (|V| x |V|).

    Each hyperedge e contributes w(e)/|e| to every ordered pair of its
    members; rows are then divided by the node degree.
    """
    dv = node_degrees(g)
    isolated = np.flatnonzero(dv <= 0)
    if len(isolated):
        raise IsolatedNode(int(isolated[0]))
    rs, cs, vs = [], [], []
    for e, w in zip(g.hyperedges, g.edge_weights):
        idx = np.asarray(e, dtype=np.int64)
        rr, cc = np.meshgrid(idx, idx, indexing="ij")
        rs.append(rr.ravel())
        cs.append(cc.ravel())
        vs.append(np.full(rr.size, w / len(e)))
    if not rs:
        return SparseMatrix.from_triplets(g.num_nodes, g.num_nodes, [], [], [])
    r = np.concatenate(rs)
    c = np.concatenate(cs)
    v = np.concatenate(vs)
    summed = SparseMatrix.from_triplets(g.num_nodes, g.num_nodes, r, c, v)
    return SparseMatrix.from_triplets(
        g.num_nodes, g.num_nodes, summed.row, summed.col, summed.val / dv[summed.row]
    )


def clique_expand(g: Hypergraph) -> Hypergraph:
    """Replace each hyperedge by all its node pairs; repeated pairs add weights."""
    pair_weight: dict[tuple[int, int], float] = {}
    for e, w in zip(g.hyperedges, g.edge_weights):
        for pair in combinations(e, 2):
            pair_weight[pair] = pair_weight.get(pair, 0.0) + float(w)
    pairs = sorted(pair_weight)
    return Hypergraph(
        num_nodes=g.num_nodes,
        node_types=g.node_types,
        hyperedges=tuple(pairs),
        edge_weights=np.array([pair_weight[p] for p in pairs]),
        edge_attrs=None,
        node_names=g.node_names,
    )


# -- serialization -----------------------------------------------------------
#
# Text layout (tab separated, floats written with repr() so they round-trip):
#
#   # hhgnn-hypergraph v1
#   [nodes] <num_nodes>
#   <id> <type tag> <name or empty>
#   [hyperedges] <num_edges>
#   <space separated sorted node ids> <weight>
#   [edge_attrs] <num_edges> <d_x>          (section omitted when absent)
#   <edge index> <d_x space separated floats>


def dumps(g: Hypergraph) -> str:
    lines = [FORMAT_HEADER, f"[nodes]\t{g.num_nodes}"]
    names = g.node_names or ("",) * g.num_nodes
    for i, (t, name) in enumerate(zip(g.node_types, names)):
        lines.append(f"{i}\t{t.value}\t{name}")
    lines.append(f"[hyperedges]\t{g.num_edges}")
    for e, w in zip(g.hyperedges, g.edge_weights):
        lines.append(" ".join(map(str, e)) + f"\t{float(w)!r}")
    if g.edge_attrs is not None:
        lines.append(f"[edge_attrs]\t{g.num_edges}\t{g.edge_attrs.shape[1]}")
        for j, row in enumerate(g.edge_attrs):
            lines.append(f"{j}\t" + " ".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"


def loads(text: str) -> Hypergraph:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ParseError(1, "header", f"expected {FORMAT_HEADER!r}")
    pos = 1

    def section(name: str) -> list[str]:
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(pos + 1, name, "unexpected end of file")
        head = lines[pos].split("\t")
        if head[0] != f"[{name}]":
            raise ParseError(pos + 1, name, f"expected section [{name}]")
        pos += 1
        return head[1:]

    (n,) = map(int, section("nodes"))
    types, names = [], []
    for _ in range(n):
        parts = lines[pos].split("\t")
        if len(parts) != 3 or int(parts[0]) != len(types):
            raise ParseError(pos + 1, "nodes", "malformed node line")
        types.append(NodeType(parts[1]))
        names.append(parts[2])
        pos += 1
    (m,) = map(int, section("hyperedges"))
    edges, weights = [], []
    for _ in range(m):
        ids, w = lines[pos].split("\t")
        edges.append(tuple(int(x) for x in ids.split()))
        weights.append(float(w))
        pos += 1
    attrs = None
    if pos < len(lines) and lines[pos].startswith("[edge_attrs]"):
        m2, d = map(int, section("edge_attrs"))
        attrs = np.zeros((m2, d))
        for j in range(m2):
            idx, vals = lines[pos].split("\t")
            attrs[int(idx)] = [float(x) for x in vals.split()]
            pos += 1
    return Hypergraph(
        num_nodes=n,
        node_types=tuple(types),
        hyperedges=tuple(edges),
        edge_weights=np.array(weights),
        edge_attrs=attrs,
        node_names=tuple(names) if any(names) else None,
    )


def save(g: Hypergraph, path) -> None:
    Path(path).write_text(dumps(g), encoding="utf-8")


def load(path) -> Hypergraph:
    return loads(Path(path).read_text(encoding="utf-8"))
