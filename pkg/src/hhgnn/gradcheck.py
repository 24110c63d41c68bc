"""Finite-difference verification of the full model on a fixed toy graph."""

from __future__ import annotations

import numpy as np

from .builder import GraphBundle, build_graph
from .data import MISSING, NEG, POS, InstanceTable, Schema, compute_loss_weights
from .model import HHGNNConfig, Variant, make_variant
from .nn import gradcheck

TOY_SCHEMA = Schema(
    feature_names=("f0", "f1", "f2", "f3"),
    pp_names=("InPocket", "OnTable"),
    act_names=("Sitting", "Talking", "Walking"),
)

_P, _N, _M = POS, NEG, MISSING
# (user, InPocket, OnTable, Sitting, Talking, Walking)
_TOY_ROWS = [
    ("User1", _N, _P, _P, _P, _N),  # on table, sitting and talking
    ("User1", _N, _P, _P, _P, _M),
    ("User1", _P, _N, _N, _N, _P),
    ("User2", _N, _P, _P, _N, _N),
    ("User2", _P, _N, _M, _P, _P),
    ("User2", _N, _P, _N, _P, _N),
    ("User2", _M, _M, _M, _M, _M),
]


def toy_table(seed: int = 7) -> InstanceTable:
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(len(_TOY_ROWS), len(TOY_SCHEMA.feature_names)))
    labels = np.array([r[1:] for r in _TOY_ROWS], dtype=np.int8)
    return InstanceTable(TOY_SCHEMA, feats, labels, tuple(r[0] for r in _TOY_ROWS))


def toy_bundle() -> GraphBundle:
    """7 nodes (2 users, 2 placements, 3 activities) and 5 hyperedges."""
    return build_graph(toy_table())


def check_model(variant: Variant = Variant.FULL, eps: float = 1e-5, seed: int = 3) -> dict[str, float]:
    """Max relative gradient error per parameter, float64, dropout off."""
    table = toy_table()
    bundle = build_graph(table)
    weights = compute_loss_weights(table)
    cfg = HHGNNConfig(feature_dim=4, hidden_dim=3, num_blocks=2, dropout_rate=0.0)
    model = make_variant(variant, bundle, cfg, seed=seed, dtype=np.float64)
    x = table.features
    y = table.labels

    def loss_fn() -> float:
        return model.loss_and_grad(x, y, weights, training=False)

    return {name: gradcheck(loss_fn, [p], eps) for name, p in model.params.items()}


def run_all(eps: float = 1e-5) -> dict[str, dict[str, float]]:
    return {v.value: check_model(v, eps) for v in Variant}
