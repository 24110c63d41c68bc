import numpy as np
import pytest

from hhgnn import model as M
from hhgnn import nn
from hhgnn.builder import build_graph
from hhgnn.data import MISSING, NEG, POS, InstanceTable, LossWeights, Schema, compute_loss_weights, split
from hhgnn.gradcheck import check_model, toy_bundle, toy_table
from hhgnn.hypergraph import SparseMatrix
from hhgnn.model import HHGNN, Adam, HHGNNConfig, Variant
from hhgnn.nn import Param
from hhgnn.synth import SyntheticSpec, generate


def params(rng, d_in, d_out, n=3):
    return [(Param(rng.normal(size=(d_in, d_out))), Param(rng.normal(size=(1, d_out)))) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestHeterogeneity:
    SLICES = [slice(0, 2), slice(2, 4), slice(4, 7)]

    def test_identity_maps(self, rng):
        v = np.abs(rng.normal(size=(7, 3)))
        maps = [(Param(np.eye(3)), Param(np.zeros((1, 3)))) for _ in range(3)]
        out, _ = M.heterogeneity_forward(v, maps, self.SLICES, 0.01)
        assert np.array_equal(out, v)

    def test_zero_weights_give_bias(self, rng):
        v = rng.normal(size=(7, 3))
        maps = [(Param(np.zeros((3, 2))), Param(np.full((1, 2), float(k + 1)))) for k in range(3)]
        out, _ = M.heterogeneity_forward(v, maps, self.SLICES, 0.01)
        assert out[:2].tolist() == [[1.0, 1.0]] * 2
        assert out[4:].tolist() == [[3.0, 3.0]] * 3

    def test_per_slice_oracle(self, rng):
        v = rng.normal(size=(7, 4))
        maps = params(rng, 4, 5)
        out, _ = M.heterogeneity_forward(v, maps, self.SLICES, 0.2)
        for (w, b), s in zip(maps, self.SLICES):
            z = v[s] @ w.value + b.value
            np.testing.assert_allclose(out[s], np.where(z >= 0, z, 0.2 * z), atol=1e-12)

    def test_permutation_within_block(self, rng):
        v = rng.normal(size=(7, 4))
        maps = params(rng, 4, 5)
        perm = np.array([0, 1, 2, 3, 6, 4, 5])
        a, _ = M.heterogeneity_forward(v, maps, self.SLICES, 0.01)
        b, _ = M.heterogeneity_forward(v[perm], maps, self.SLICES, 0.01)
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_gradcheck(self, rng):
        v = Param(rng.normal(size=(7, 4)))
        maps = params(rng, 4, 3)
        r = rng.normal(size=(7, 3))

        def loss_fn():
            for w, b in maps:
                w.zero_grad()
                b.zero_grad()
            out, cache = M.heterogeneity_forward(v.value, maps, self.SLICES, 0.1)
            v.grad = M.heterogeneity_backward(r, cache)
            return float(np.sum(out * r))

        assert nn.gradcheck(loss_fn, [v] + [p for m in maps for p in m]) < 1e-6


class TestHypergraphLayer:
    def test_constant_rows_fixed_point(self, rng):
        op = SparseMatrix.from_dense(np.array([[0.5, 0.5, 0], [0.25, 0.5, 0.25], [0, 0.5, 0.5]]))
        v = np.tile([[1.0, 2.0]], (3, 1))
        out, _ = M.hypergraph_forward(v, op, Param(np.eye(2)), 0.01, 0.0, False)
        assert np.allclose(out, v)

    def test_two_node_average(self):
        op = SparseMatrix.from_dense(np.full((2, 2), 0.5))
        out, _ = M.hypergraph_forward(np.array([[1.0], [3.0]]), op, Param(np.eye(1)), 0.01, 0.0, False)
        assert out.tolist() == [[2.0], [2.0]]

    def test_dense_oracle_and_gradcheck(self, rng):
        a = rng.random((6, 6))
        a /= a.sum(axis=1, keepdims=True)
        op = SparseMatrix.from_dense(a)
        v = Param(rng.normal(size=(6, 3)))
        theta = Param(rng.normal(size=(3, 4)))
        out, _ = M.hypergraph_forward(v.value, op, theta, 0.1, 0.0, False)
        z = a @ v.value @ theta.value
        np.testing.assert_allclose(out, np.where(z >= 0, z, 0.1 * z), atol=1e-12)
        r = rng.normal(size=(6, 4))

        def loss_fn():
            theta.zero_grad()
            o, cache = M.hypergraph_forward(v.value, op, theta, 0.1, 0.0, False)
            v.grad = M.hypergraph_backward(r, cache, op.T)
            return float(np.sum(o * r))

        assert nn.gradcheck(loss_fn, [v, theta]) < 1e-6


class TestChar:
    def _maps(self, d_in, d):
        return (Param(np.eye(d_in, d)), Param(np.zeros((1, d)))), (Param(np.eye(d_in, d)), Param(np.zeros((1, d))))

    def test_orthonormal_embeddings_argmax(self):
        v = np.vstack([np.zeros((1, 3)), np.eye(3)])  # row 0 is a user
        pp_map, act_map = self._maps(3, 3)
        x = np.array([[0.0, 5.0, 0.0], [1.0, 0.0, 0.2]])
        (lp, la), _ = M.char_forward(x, v, np.array([1, 2]), np.array([3]), pp_map, act_map, 0.01)
        assert np.argmax(lp, axis=1).tolist() == [1, 0]
        assert la[:, 0].tolist() == [0.0, 0.2]

    def test_zero_input_zero_bias(self, rng):
        pp_map, act_map = self._maps(3, 3)
        (lp, la), _ = M.char_forward(np.zeros((2, 3)), rng.normal(size=(5, 3)), np.array([1]), np.array([2, 3]), pp_map, act_map, 0.01)
        assert not lp.any() and not la.any()

    def test_loop_oracle_and_gradcheck(self, rng):
        x = rng.normal(size=(4, 3))
        v = Param(rng.normal(size=(6, 2)))
        pp_nodes, act_nodes = np.array([1, 2]), np.array([3, 4, 5])
        pp_map, act_map = params(rng, 3, 2, 2)
        (lp, la), _ = M.char_forward(x, v.value, pp_nodes, act_nodes, pp_map, act_map, 0.05)
        for logits, nodes, (w, b) in ((lp, pp_nodes, pp_map), (la, act_nodes, act_map)):
            for i in range(4):
                z = x[i] @ w.value + b.value[0]
                h = np.where(z >= 0, z, 0.05 * z)
                for j, node in enumerate(nodes):
                    assert logits[i, j] == pytest.approx(sum(h[k] * v.value[node, k] for k in range(2)), abs=1e-12)
        r_pp, r_act = rng.normal(size=lp.shape), rng.normal(size=la.shape)

        def loss_fn():
            for p in (*pp_map, *act_map):
                p.zero_grad()
            (a, b), cache = M.char_forward(x, v.value, pp_nodes, act_nodes, pp_map, act_map, 0.05)
            v.grad = M.char_backward(r_pp, r_act, cache)
            return float(np.sum(a * r_pp) + np.sum(b * r_act))

        assert nn.gradcheck(loss_fn, [v, *pp_map, *act_map]) < 1e-6
        assert not v.grad[0].any()


def weights_for(names, pos, neg):
    return LossWeights(np.asarray(pos, float), np.asarray(neg, float), tuple(names))


class TestLoss:
    def test_all_missing_zero(self, rng):
        w = weights_for("ab", [1.0, 1.0], [1.0, 1.0])
        loss, grad = M.weighted_bce_loss(rng.normal(size=(3, 2)), np.full((3, 2), MISSING, np.int8), w)
        assert loss == 0.0 and not grad.any()

    def test_confident_correct_is_near_zero(self):
        w = weights_for("a", [1.0], [1.0])
        loss, _ = M.weighted_bce_loss(np.array([[30.0], [-30.0]]), np.array([[POS], [NEG]], np.int8), w)
        assert loss < 1e-6

    def test_scalar_loop_oracle(self, rng):
        logits = rng.normal(size=(5, 3)) * 2
        targets = rng.choice([POS, NEG, MISSING], size=(5, 3)).astype(np.int8)
        w = weights_for("abc", [2.0, 0.5, 1.0], [0.7, 1.5, 1.0])
        loss, grad = M.weighted_bce_loss(logits, targets, w)
        total = 0.0
        for i in range(5):
            for c in range(3):
                p = 1 / (1 + np.exp(-logits[i, c]))
                if targets[i, c] == POS:
                    total -= w.pos_weight[c] * np.log(p)
                    assert grad[i, c] == pytest.approx(w.pos_weight[c] * (p - 1) / 5, abs=1e-12)
                elif targets[i, c] == NEG:
                    total -= w.neg_weight[c] * np.log(1 - p)
                    assert grad[i, c] == pytest.approx(w.neg_weight[c] * p / 5, abs=1e-12)
                else:
                    assert grad[i, c] == 0
        assert loss == pytest.approx(total / 5, rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        targets = rng.choice([POS, NEG, MISSING], size=(4, 3)).astype(np.int8)
        w = weights_for("abc", [2.0, 0.5, 1.0], [0.7, 1.5, 1.0])
        z = Param(rng.normal(size=(4, 3)))

        def loss_fn():
            loss, z.grad = M.weighted_bce_loss(z.value, targets, w)
            return loss

        assert nn.gradcheck(loss_fn, [z]) < 1e-6


def small_cfg(**kw):
    base = dict(feature_dim=4, hidden_dim=5, num_blocks=2, dropout_rate=0.0)
    base.update(kw)
    return HHGNNConfig(**base)


class TestModel:
    def test_two_blocks_equal_manual_chaining(self):
        b = toy_bundle()
        m = HHGNN(b, small_cfg(), seed=1, dtype=np.float64)
        h = m.params["V"].value
        for blk in range(2):
            h, _ = M.heterogeneity_forward(h, m.block_maps(blk), b.type_slices(), 0.01)
            h, _ = M.hypergraph_forward(h, m.op, m.params[f"block{blk}.theta"], 0.01, 0.0, False)
        got, _ = m.node_representations()
        assert np.array_equal(got, h)

    def test_one_layer_equals_full_with_one_block(self):
        t = toy_table()
        b = toy_bundle()
        a = M.make_variant(Variant.ONE_LAYER, b, small_cfg(), seed=2)
        full = HHGNN(b, small_cfg(num_blocks=1), seed=2)
        assert np.array_equal(a.forward(t.features), full.forward(t.features))

    def test_eval_is_deterministic(self):
        t = toy_table()
        m = HHGNN(toy_bundle(), small_cfg(dropout_rate=0.5), seed=0)
        assert np.array_equal(m.forward(t.features), m.forward(t.features))

    def test_training_dropout_changes_output(self):
        t = toy_table()
        m = HHGNN(toy_bundle(), small_cfg(dropout_rate=0.5), seed=0)
        assert not np.array_equal(m.forward(t.features, training=True), m.forward(t.features, training=True))

    def test_logit_columns_follow_schema(self):
        t = toy_table()
        m = HHGNN(toy_bundle(), small_cfg(), seed=0)
        out = m.forward(t.features)
        assert out.shape == (len(t), 5)

    def test_hetero_gcn_equals_full_on_pairwise_graph(self):
        schema = Schema(("f0", "f1", "f2", "f3"), ("A",), ("B",))
        rng = np.random.default_rng(0)
        labels = np.array([[POS, NEG], [NEG, POS], [POS, NEG]], np.int8)
        t = InstanceTable(schema, rng.normal(size=(3, 4)), labels, ("u1", "u2", "u2"))
        b = build_graph(t)
        assert all(len(e) == 2 for e in b.graph.hyperedges)
        full = HHGNN(b, small_cfg(), seed=5)
        pair = M.make_variant(Variant.HETERO_GCN, b, small_cfg(), seed=5)
        np.testing.assert_allclose(pair.forward(t.features), full.forward(t.features), atol=1e-6)

    def test_hyper_gcn_has_fewer_parameters(self):
        b = toy_bundle()
        full = HHGNN(b, small_cfg(), seed=0)
        shared = M.make_variant(Variant.HYPER_GCN, b, small_cfg(), seed=0)
        assert shared.num_parameters() < full.num_parameters()

    def test_absent_label_gets_negative_logit(self):
        schema = Schema(("f0", "f1", "f2", "f3"), ("A", "Z"), ("B",))
        labels = np.array([[POS, NEG, POS], [POS, NEG, NEG]], np.int8)
        t = InstanceTable(schema, np.ones((2, 4)), labels, ("u", "u"))
        m = HHGNN(build_graph(t), small_cfg(), seed=0)
        assert np.all(m.forward(t.features)[:, 1] == M.ABSENT_LOGIT)
        assert np.all(m.predict(t.features)[:, 1] == 0)

    def test_shape_mismatch(self):
        m = HHGNN(toy_bundle(), small_cfg(), seed=0)
        with pytest.raises(Exception):
            m.forward(np.zeros((2, 3)))


@pytest.mark.parametrize("variant", list(Variant))
def test_full_model_gradcheck(variant):
    errors = check_model(variant)
    assert max(errors.values()) < 1e-4, errors


class TestTraining:
    def _setup(self, dtype=np.float32):
        t = toy_table()
        return t, HHGNN(toy_bundle(), small_cfg(), seed=0, dtype=dtype), compute_loss_weights(t)

    def test_zero_lr_is_noop(self):
        t, m, w = self._setup()
        before = m.state()
        M.train_step(m, t.features, t.labels, w, Adam(m.params.values(), lr=0.0))
        assert all(np.array_equal(before[k], m.params[k].value) for k in before)

    def test_single_instance_overfit(self):
        t, m, w = self._setup(np.float64)
        x, y = t.features[:1], t.labels[:1]
        opt = Adam(m.params.values(), lr=1e-2)
        for _ in range(200):
            loss = M.train_step(m, x, y, w, opt)
        assert loss < 1e-2

    def test_trajectory_deterministic(self):
        runs = []
        for _ in range(2):
            t, m, w = self._setup()
            opt = Adam(m.params.values(), lr=1e-2)
            runs.append([M.train_step(m, t.features, t.labels, w, opt) for _ in range(10)])
        assert runs[0] == runs[1]

    def test_weight_decay_shrinks_without_gradient(self):
        p = Param(np.ones((2, 2)))
        Adam([p], lr=0.1, weight_decay=1.0).step()
        assert np.all(p.value < 1.0)


def test_checkpoint_round_trip(tmp_path):
    t = toy_table()
    m = HHGNN(toy_bundle(), small_cfg(), seed=4)
    opt = Adam(m.params.values(), lr=1e-2)
    for _ in range(3):
        M.train_step(m, t.features, t.labels, compute_loss_weights(t), opt)
    M.save_checkpoint(m, tmp_path / "m.ckpt", extra={"epoch": 3})
    back, header = M.load_checkpoint(tmp_path / "m.ckpt")
    assert header["extra"] == {"epoch": 3} and header["variant"] == "full"
    assert np.array_equal(back.forward(t.features), m.forward(t.features))


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(Exception):
        M.load_checkpoint(tmp_path / "x")


def test_argmax_pp():
    logits = np.array([[-1.0, -2.0, 3.0], [0.5, 2.0, -1.0]])
    assert M.argmax_pp(logits, 2).tolist() == [[1, 0, 1], [0, 1, 0]]


@pytest.mark.parametrize("variant", list(Variant))
def test_loss_decreases_on_synthetic(variant):
    t = generate(SyntheticSpec(num_instances=300, d_x=8, num_users=4, seed=1))
    train, _, _ = split(t, seed=0)
    b = build_graph(train)
    w = compute_loss_weights(train)
    m = M.make_variant(variant, b, HHGNNConfig(feature_dim=8, hidden_dim=16, dropout_rate=0.0), seed=0)
    opt = Adam(m.params.values(), lr=1e-2)
    losses = [M.train_step(m, train.features, train.labels, w, opt) for _ in range(20)]
    assert losses[-1] < losses[0]
