"""HHGNN network: stacked heterogeneity + hypergraph blocks and the CHAR head.

Forward passes cache what their backward needs; ``HHGNN.backward`` must be
called after the ``forward`` whose gradients it computes.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import hypergraph as hg
from . import nn
from .builder import GraphBundle, bundle_from_graph
from .data import POS, LossWeights, Schema
from .errors import NonFinite, ParseError, ShapeMismatch
from .hypergraph import SparseMatrix
from .nn import Param

# logit assigned to labels with no graph node; they are never predicted positive
ABSENT_LOGIT = -30.0
PROB_CLAMP = 1e-7


class Variant(str, enum.Enum):
    FULL = "full"
    HETERO_GCN = "hetero-gcn"
    HYPER_GCN = "hyper-gcn"
    ONE_LAYER = "one-layer"


@dataclass(frozen=True)
class HHGNNConfig:
    feature_dim: int
    hidden_dim: int = 64
    num_blocks: int = 2
    dropout_rate: float = 0.5
    leaky_slope: float = 0.01
    # pairwise (clique-expanded) graph instead of hyperedges
    clique_expand: bool = False
    # one linear map for all node types instead of one per type
    shared_type_map: bool = False

    def __post_init__(self):
        if self.num_blocks < 1 or self.hidden_dim < 1 or self.feature_dim < 1:
            raise ValueError("num_blocks, hidden_dim and feature_dim must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")


# -- layers ---------------------------------------------------------------------


def heterogeneity_forward(
    v_in: np.ndarray,
    maps: Sequence[tuple[Param, Param]],
    slices: Sequence[slice],
    slope: float,
) -> tuple[np.ndarray, tuple]:
    """Each node-type row block gets its own linear map and LeakyReLU."""
    if len(maps) != len(slices):
        raise ShapeMismatch("one (W, b) pair per node-type slice required")
    out_dim = maps[0][0].shape[1]
    z = np.empty((v_in.shape[0], out_dim), dtype=v_in.dtype)
    covered = 0
    for (w, b), s in zip(maps, slices):
        z[s] = nn.linear(v_in[s], w, b)
        covered += s.stop - s.start
    if covered != v_in.shape[0]:
        raise ShapeMismatch("node-type slices do not partition the rows")
    return nn.leaky_relu(z, slope), (v_in, z, maps, slices, slope)


def heterogeneity_backward(d_out: np.ndarray, cache: tuple) -> np.ndarray:
    v_in, z, maps, slices, slope = cache
    dz = nn.leaky_relu_backward(d_out, z, slope)
    dv = np.empty_like(v_in)
    for (w, b), s in zip(maps, slices):
        dv[s] = nn.linear_backward(dz[s], v_in[s], w, b)
    return dv


def hypergraph_forward(
    v_in: np.ndarray,
    op: SparseMatrix,
    theta: Param,
    slope: float,
    dropout_rate: float,
    training: bool,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, tuple]:
    """dropout(leaky_relu(L @ V_in @ Theta))."""
    lv = nn.sparse_dense_matmul(op, v_in)
    conv = nn.matmul(lv, theta.value)
    act = nn.leaky_relu(conv, slope)
    out, mask = nn.dropout(act, dropout_rate, training, rng)
    return out, (lv, conv, mask, theta, slope)


def hypergraph_backward(d_out: np.ndarray, cache: tuple, op_t: SparseMatrix) -> np.ndarray:
    lv, conv, mask, theta, slope = cache
    d_conv = nn.leaky_relu_backward(nn.dropout_backward(d_out, mask), conv, slope)
    d_lv, d_theta = nn.matmul_backward(d_conv, lv, theta.value)
    theta.grad += d_theta
    return op_t.matmul(d_lv)


def char_forward(
    x: np.ndarray,
    v_rep: np.ndarray,
    pp_nodes: np.ndarray,
    act_nodes: np.ndarray,
    pp_map: tuple[Param, Param],
    act_map: tuple[Param, Param],
    slope: float,
) -> tuple[tuple[np.ndarray, np.ndarray], tuple]:
    """Score each instance against PP and ACT node embeddings by inner product.

    Logit columns follow node order. User rows of ``v_rep`` are not read.
    """
    z_pp = nn.linear(x, *pp_map)
    z_act = nn.linear(x, *act_map)
    x_pp = nn.leaky_relu(z_pp, slope)
    x_act = nn.leaky_relu(z_act, slope)
    v_pp = v_rep[pp_nodes]
    v_act = v_rep[act_nodes]
    logits = (nn.matmul(x_pp, v_pp.T), nn.matmul(x_act, v_act.T))
    return logits, (x, z_pp, z_act, x_pp, x_act, v_pp, v_act, pp_nodes, act_nodes, pp_map, act_map, slope, v_rep.shape)


def char_backward(d_pp: np.ndarray, d_act: np.ndarray, cache: tuple) -> np.ndarray:
    x, z_pp, z_act, x_pp, x_act, v_pp, v_act, pp_nodes, act_nodes, pp_map, act_map, slope, shape = cache
    dv = np.zeros(shape, dtype=x_pp.dtype)
    for d_log, xx, zz, vv, nodes, (w, b) in (
        (d_pp, x_pp, z_pp, v_pp, pp_nodes, pp_map),
        (d_act, x_act, z_act, v_act, act_nodes, act_map),
    ):
        d_x, d_vt = nn.matmul_backward(d_log, xx, vv.T)
        dv[nodes] += d_vt.T
        nn.linear_backward(nn.leaky_relu_backward(d_x, zz, slope), x, w, b)
    return dv


# -- loss -----------------------------------------------------------------------


def weighted_bce_loss(
    logits: np.ndarray, targets: np.ndarray, weights: LossWeights
) -> tuple[float, np.ndarray]:
    """Weighted binary cross-entropy averaged over instances, summed over classes.

    ``logits`` and ``targets`` are (N, C) with classes in schema order
    (PP then ACT). Missing targets get weight 0. Probabilities are clamped to
    [1e-7, 1 - 1e-7] inside the logs; the returned gradient is w * (p - y) / N,
    which stays informative where the clamp saturates.
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    n = logits.shape[0]
    if n < 1:
        raise ValueError("loss needs at least one instance")
    omega = weights.instance_weights(targets)
    y = (targets == POS).astype(np.float64)
    p = nn.sigmoid(logits.astype(np.float64))
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -omega * (y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    loss = float(terms.sum() / n)
    grad = (omega * (p - y) / n).astype(logits.dtype)
    return loss, grad


# -- model ----------------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class HHGNN:
    """Heterogeneous hypergraph network over a fixed graph bundle."""

    def __init__(
        self,
        bundle: GraphBundle,
        cfg: HHGNNConfig,
        seed: int = 0,
        dtype=np.float32,
        variant: Variant = Variant.FULL,
    ):
        if bundle.node_init.shape[1] != cfg.feature_dim:
            raise ShapeMismatch(
                f"node_init has {bundle.node_init.shape[1]} features, config says {cfg.feature_dim}"
            )
        self.bundle = bundle
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.variant = Variant(variant)
        graph = hg.clique_expand(bundle.graph) if cfg.clique_expand else bundle.graph
        self.op = hg.conv_operator(graph)
        self.op_t = self.op.T
        self.slices = (
            [slice(0, bundle.graph.num_nodes)] if cfg.shared_type_map else bundle.type_slices()
        )
        self.pp_nodes = bundle.pp_nodes
        self.act_nodes = bundle.act_nodes
        self.pp_cols, self.act_cols = bundle.label_columns()
        self.num_pp = len(bundle.schema.pp_names)
        self.num_act = len(bundle.schema.act_names)
        self._dropout_rng = np.random.default_rng([seed, 1])
        self._cache = None
        self.params = self._init_params(np.random.default_rng([seed, 0]))

    def _init_params(self, rng: np.random.Generator) -> dict[str, Param]:
        cfg = self.cfg
        params: dict[str, Param] = {"V": Param(np.array(self.bundle.node_init, dtype=self.dtype))}
        type_names = ["shared"] if cfg.shared_type_map else ["user", "pp", "act"]
        d_in = cfg.feature_dim
        for blk in range(cfg.num_blocks):
            for t in type_names:
                params[f"block{blk}.het.{t}.W"] = Param(_glorot(rng, d_in, cfg.hidden_dim).astype(self.dtype))
                params[f"block{blk}.het.{t}.b"] = Param(np.zeros((1, cfg.hidden_dim), dtype=self.dtype))
            params[f"block{blk}.theta"] = Param(_glorot(rng, cfg.hidden_dim, cfg.hidden_dim).astype(self.dtype))
            d_in = cfg.hidden_dim
        for t in ("pp", "act"):
            params[f"char.{t}.W"] = Param(_glorot(rng, cfg.feature_dim, cfg.hidden_dim).astype(self.dtype))
            params[f"char.{t}.b"] = Param(np.zeros((1, cfg.hidden_dim), dtype=self.dtype))
        return params

    def block_maps(self, blk: int) -> list[tuple[Param, Param]]:
        types = ["shared"] if self.cfg.shared_type_map else ["user", "pp", "act"]
        p = self.params
        return [(p[f"block{blk}.het.{t}.W"], p[f"block{blk}.het.{t}.b"]) for t in types]

    def num_parameters(self, include_embeddings: bool = True) -> int:
        return sum(p.size for k, p in self.params.items() if include_embeddings or k != "V")

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def node_representations(self, training: bool = False) -> tuple[np.ndarray, list]:
        h = self.params["V"].value
        caches = []
        for blk in range(self.cfg.num_blocks):
            h, het_cache = heterogeneity_forward(h, self.block_maps(blk), self.slices, self.cfg.leaky_slope)
            h, conv_cache = hypergraph_forward(
                h,
                self.op,
                self.params[f"block{blk}.theta"],
                self.cfg.leaky_slope,
                self.cfg.dropout_rate,
                training,
                self._dropout_rng,
            )
            caches.append((het_cache, conv_cache))
        return h, caches

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Logits (n, |PP| + |ACT|) in schema column order."""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.cfg.feature_dim:
            raise ShapeMismatch(f"expected (n, {self.cfg.feature_dim}) input, got {x.shape}")
        v_rep, block_caches = self.node_representations(training)
        p = self.params
        (lp, la), char_cache = char_forward(
            x,
            v_rep,
            self.pp_nodes,
            self.act_nodes,
            (p["char.pp.W"], p["char.pp.b"]),
            (p["char.act.W"], p["char.act.b"]),
            self.cfg.leaky_slope,
        )
        out = np.full((x.shape[0], self.num_pp + self.num_act), ABSENT_LOGIT, dtype=self.dtype)
        out[:, self.pp_cols] = lp
        out[:, self.num_pp + self.act_cols] = la
        self._cache = (block_caches, char_cache)
        return out

    def backward(self, d_logits: np.ndarray) -> None:
        """Accumulate parameter gradients for the last forward pass."""
        if self._cache is None:
            raise RuntimeError("backward called without a forward pass")
        block_caches, char_cache = self._cache
        d_pp = d_logits[:, self.pp_cols]
        d_act = d_logits[:, self.num_pp + self.act_cols]
        dh = char_backward(d_pp, d_act, char_cache)
        for blk in reversed(range(self.cfg.num_blocks)):
            het_cache, conv_cache = block_caches[blk]
            dh = hypergraph_backward(dh, conv_cache, self.op_t)
            dh = heterogeneity_backward(dh, het_cache)
        self.params["V"].grad += dh

    def loss_and_grad(self, x: np.ndarray, targets: np.ndarray, weights: LossWeights, training: bool = False) -> float:
        self.zero_grad()
        logits = self.forward(x, training=training)
        loss, d_logits = weighted_bce_loss(logits, targets, weights)
        self.backward(d_logits)
        return loss

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Binary predictions: logit >= 0, i.e. probability >= 0.5."""
        return (self.forward(x, training=False) >= 0).astype(np.int8)

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ShapeMismatch("parameter names differ from the model's")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeMismatch(f"{k}: shape {v.shape} vs {self.params[k].shape}")
            self.params[k].value = np.array(v, dtype=self.dtype)
            self.params[k].zero_grad()


def argmax_pp(logits: np.ndarray, num_pp: int) -> np.ndarray:
    """Optional post-processing: exactly one positive phone placement per row."""
    pred = (logits >= 0).astype(np.int8)
    if num_pp:
        pred[:, :num_pp] = 0
        pred[np.arange(len(logits)), np.argmax(logits[:, :num_pp], axis=1)] = 1
    return pred


def variant_config(kind: Variant, cfg: HHGNNConfig) -> HHGNNConfig:
    kind = Variant(kind)
    if kind is Variant.FULL:
        return cfg
    if kind is Variant.HETERO_GCN:
        return replace(cfg, clique_expand=True)
    if kind is Variant.HYPER_GCN:
        return replace(cfg, shared_type_map=True)
    return replace(cfg, num_blocks=1)


def make_variant(
    kind: Variant, bundle: GraphBundle, cfg: HHGNNConfig, seed: int = 0, dtype=np.float32
) -> HHGNN:
    """Full model or one of the ablations: pairwise graph, shared type map, one block."""
    return HHGNN(bundle, variant_config(kind, cfg), seed=seed, dtype=dtype, variant=kind)


# -- optimisation -----------------------------------------------------------------


class Adam:
    def __init__(
        self,
        params: Sequence[Param],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.value -= update.astype(p.value.dtype)


def train_step(model: HHGNN, x: np.ndarray, targets: np.ndarray, weights: LossWeights, opt: Adam) -> float:
    """One optimiser step on the weighted BCE over a batch; returns the loss."""
    if len(x) == 0:
        raise ValueError("empty batch")
    loss = model.loss_and_grad(x, targets, weights, training=True)
    if not np.isfinite(loss):
        raise NonFinite(f"training loss is {loss}")
    opt.step()
    for p in model.params.values():
        nn.check_finite(p.value, "optimizer step")
    return loss


# -- checkpoints --------------------------------------------------------------------
#
# Binary layout, little endian:
#   magic b"HHGNNCKP" | u32 version | u32 header length | header JSON (utf-8)
#   then per parameter: u16 name length | name | u32 rows | u32 cols | float32 data
# The header echoes config, variant, seed, dims and embeds the graph text and
# schema so a checkpoint is evaluable on its own.

CKPT_MAGIC = b"HHGNNCKP"
CKPT_VERSION = 1


def save_checkpoint(model: HHGNN, path, extra: Optional[dict] = None) -> None:
    schema = model.bundle.schema
    header = {
        "version": CKPT_VERSION,
        "config": asdict(model.cfg),
        "variant": model.variant.value,
        "seed": model.seed,
        "num_nodes": model.bundle.graph.num_nodes,
        "feature_dim": model.cfg.feature_dim,
        "hidden_dim": model.cfg.hidden_dim,
        "schema": {
            "feature_names": list(schema.feature_names),
            "pp_names": list(schema.pp_names),
            "act_names": list(schema.act_names),
        },
        "graph": hg.dumps(model.bundle.graph),
        "params": list(model.params),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob]
    for name, p in model.params.items():
        raw = name.encode("utf-8")
        rows, cols = p.shape
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<II", rows, cols))
        parts.append(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[HHGNN, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CKPT_MAGIC):
        raise ParseError(0, "magic", f"{path} is not an HHGNN checkpoint")
    pos = len(CKPT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CKPT_VERSION:
        raise ParseError(0, "version", f"unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    state = {}
    for _ in header["params"]:
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        count = rows * cols
        state[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(rows, cols).astype(np.float32)
        pos += 4 * count
    schema = Schema(**{k: tuple(v) for k, v in header["schema"].items()})
    graph = hg.loads(header["graph"])
    bundle = bundle_from_graph(graph, state["V"].astype(np.float64), schema)
    cfg = HHGNNConfig(**header["config"])
    model = HHGNN(bundle, cfg, seed=header["seed"], dtype=np.float32, variant=Variant(header["variant"]))
    model.load_state(state)
    return model, header
