import math

import numpy as np
import pytest

from teko.errors import DimensionMismatch, EmptyNeighborhood, MalformedRecord, MissingFile
from teko.hga_model import (
    GCN,
    HeteroGraphAttention,
    ModelParams,
    gcn_forward,
    load_checkpoint,
    masked_softmax,
    node_attention,
    project,
    save_checkpoint,
    standardize_columns,
    type_attention,
    type_embedding,
)
from teko.knowledge_embed import EntityFeatures
from teko.semantic_graph import HeteroGraph
from teko.synthetic import random_hetero_instance
from teko.training import SupervisedTask, grad_check


def hga(seed=0, n_doc=8, n_ent=4, **kw):
    graph, X, feats = random_hetero_instance(n_doc=n_doc, n_ent=n_ent, seed=seed)
    opts = dict(hidden=5, out_dim=3, dropout=0.0)
    opts.update(kw)
    return HeteroGraphAttention(graph, X, feats, **opts)


class TestReferenceOps:
    def test_project(self):
        F = np.arange(6.0).reshape(3, 2)
        assert np.array_equal(project(F, np.eye(2)), F)
        assert not project(np.zeros((3, 2)), np.ones((2, 4))).any()
        assert project(F, np.ones((2, 4))).shape == (3, 4)
        with pytest.raises(DimensionMismatch):
            project(F, np.ones((3, 4)))

    def test_type_embedding(self):
        assert np.array_equal(type_embedding([0.5], [[2.0, 2.0]]), [1.0, 1.0])
        assert np.array_equal(type_embedding([0.25, 0.25], [[4.0, 0.0], [0.0, 4.0]]), [1.0, 1.0])
        assert np.array_equal(type_embedding([], np.zeros((0, 2))), [0.0, 0.0])

    def test_type_attention(self):
        h = np.array([1.0])
        eta = {"DOC": np.array([0.0, 1.0]), "ENT": np.array([0.0, 1.0])}
        same = type_attention(h, {"DOC": np.array([0.3]), "ENT": np.array([0.3])}, eta)
        assert same == {"DOC": 0.5, "ENT": 0.5}
        assert type_attention(h, {"DOC": np.array([7.0])}, eta) == {"DOC": 1.0}
        a = type_attention(h, {"DOC": np.array([math.log(2)]), "ENT": np.array([0.0])}, eta)
        assert a["DOC"] == pytest.approx(2 / 3) and a["ENT"] == pytest.approx(1 / 3)

    def test_node_attention(self):
        gamma, alpha = np.array([0.4, -1.3]), {"DOC": 0.7}
        h = np.array([1.0])
        assert node_attention(h, [("j", np.array([2.0]), "DOC")], alpha, gamma) == {"j": 1.0}
        two = node_attention(h, [("a", np.array([3.0]), "DOC"), ("b", np.array([3.0]), "DOC")],
                             alpha, gamma)
        assert two == {"a": 0.5, "b": 0.5}
        with pytest.raises(EmptyNeighborhood):
            node_attention(h, [], alpha, gamma)

    def test_masked_softmax_shift_invariance(self):
        rng = np.random.default_rng(0)
        x, mask = rng.normal(size=(4, 5)), rng.random((4, 5)) < 0.6
        assert np.allclose(masked_softmax(x, mask), masked_softmax(x + 3.7, mask), atol=1e-15)
        assert np.all(masked_softmax(x, mask)[~mask] == 0)

    def test_standardize_columns(self):
        M = np.random.default_rng(0).normal(3, 2, size=(10, 3))
        Z = standardize_columns(M)
        assert np.allclose(Z.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(Z.std(axis=0), 1, atol=1e-12)
        assert np.array_equal(standardize_columns(np.ones((3, 2))), np.zeros((3, 2)))


class TestHGAForward:
    def test_shape_and_softmax_rows(self):
        model = hga()
        out = model.forward(model.init_params(0)).output
        assert out.shape == (12, 3)
        assert np.allclose(out[:8].sum(axis=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        model = hga()
        p = model.init_params(1)
        assert np.array_equal(model.forward(p).output, model.forward(p).output)

    def test_zero_inputs_uniform(self):
        graph, X, feats = random_hetero_instance(seed=2)
        zero = EntityFeatures(feats.entity_ids, np.zeros_like(feats.triplet),
                              np.zeros_like(feats.textual))
        model = HeteroGraphAttention(graph, np.zeros_like(X), zero, hidden=4, out_dim=3)
        assert np.allclose(model.forward(model.init_params(0)).output, 1 / 3, atol=1e-15)

    @pytest.mark.parametrize("seed", range(20))
    def test_attention_sums(self, seed):
        model = hga(seed)
        res = model.forward(model.init_params(seed))
        for alpha, beta in zip(res.alphas, res.betas):
            assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-9)
            assert np.allclose(beta.sum(axis=1), 1.0, atol=1e-9)

    def test_no_nonfinite_on_wide_inputs(self):
        graph, X, feats = random_hetero_instance(seed=4, feature_scale=10.0)
        model = HeteroGraphAttention(graph, X, feats, hidden=6, out_dim=2)
        assert np.all(np.isfinite(model.forward(model.init_params(0)).output))

    def test_permutation_equivariance(self):
        graph, X, feats = random_hetero_instance(n_doc=6, n_ent=4, seed=5)
        model = HeteroGraphAttention(graph, X, feats, hidden=4, out_dim=2)
        params = model.init_params(0)
        base = model.forward(params).output
        rng = np.random.default_rng(0)
        pd, pe = rng.permutation(6), rng.permutation(4)
        g2 = HeteroGraph(tuple(graph.doc_ids[i] for i in pd), tuple(graph.ent_ids[i] for i in pe),
                         graph.edges_dd, graph.edges_de, graph.edges_ee)
        f2 = EntityFeatures([feats.entity_ids[i] for i in pe], feats.triplet[pe],
                            feats.textual[pe])
        out = HeteroGraphAttention(g2, X[pd], f2, hidden=4, out_dim=2).forward(params).output
        perm = np.concatenate([pd, 6 + pe])
        assert np.allclose(out, base[perm], atol=1e-12)

    def test_locality(self):
        ids = tuple(f"d{i}" for i in range(5))
        path = frozenset((ids[i], ids[i + 1]) for i in range(4))
        graph = HeteroGraph(ids, (), path, frozenset(), frozenset())
        X = np.random.default_rng(0).normal(size=(5, 3))
        model = HeteroGraphAttention(graph, X, None, hidden=4, out_dim=2, layers=2)
        params = model.init_params(0)
        before = model.forward(params).output
        X2 = X.copy()
        X2[4] += 5.0
        after = HeteroGraphAttention(graph, X2, None, hidden=4, out_dim=2).forward(params).output
        assert np.array_equal(before[:2], after[:2])
        assert not np.array_equal(before[2], after[2])

    def test_dimension_checks(self):
        graph, X, feats = random_hetero_instance(seed=0)
        with pytest.raises(DimensionMismatch):
            HeteroGraphAttention(graph, X[:3], feats)
        model = HeteroGraphAttention(graph, X, feats, hidden=4, out_dim=2)
        params = model.init_params(0)
        params.arrays["W.0.DOC"] = np.zeros((2, 2))
        with pytest.raises(DimensionMismatch):
            model.forward(params)

    def test_dropout_needs_rng(self):
        model = hga(dropout=0.5)
        with pytest.raises(ValueError):
            model.forward(model.init_params(0), training=True)


class TestGradients:
    @pytest.mark.parametrize("placement", ["feature", "logit"])
    @pytest.mark.parametrize("fusion", ["gated", "concat"])
    def test_finite_differences(self, placement, fusion):
        model = hga(seed=7, alpha_placement=placement, fusion_mode=fusion, standardize=True)
        params = model.init_params(3)
        params.arrays["gate"] += np.random.default_rng(0).normal(size=params["gate"].shape)
        labels = np.array([0, 1, 2, 0, 1, 2, 0, 1] + [-1] * 4)
        task = SupervisedTask(labels, np.arange(6), np.array([6, 7]))
        report = grad_check(model, params, task)
        assert set(report) == {"W", "eta", "gamma", "gate"}
        for group, entry in report.items():
            assert entry["max_rel_error"] < 1e-4, group

    def test_gcn_finite_differences(self):
        graph, X, _ = random_hetero_instance(seed=1)
        model = GCN(graph, X, hidden=4, out_dim=3, dropout=0.0)
        task = SupervisedTask(np.array([0, 1, 2, 0, 1, 2, 0, 1]), np.arange(8), np.array([]))
        assert grad_check(model, model.init_params(0), task)["W"]["max_rel_error"] < 1e-4


class TestGCN:
    def test_isolated_identity(self):
        graph = HeteroGraph(("a",), (), frozenset(), frozenset(), frozenset())
        params = ModelParams({"W.0": np.eye(2)})
        out = gcn_forward(graph, np.array([[0.3, -0.7]]), params, head="linear")
        assert np.array_equal(out, [[0.3, -0.7]])

    def test_shape_and_determinism(self):
        graph, X, _ = random_hetero_instance(seed=1)
        model = GCN(graph, X, hidden=4, out_dim=3)
        a = model.forward(model.init_params(5)).output
        b = model.forward(GCN(graph, X, hidden=4, out_dim=3).init_params(5)).output
        assert a.shape == (8, 3) and np.array_equal(a, b)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        model = hga()
        params = model.init_params(0)
        params.arrays["gate"] = np.array([1 / 3, -2e-300, 7.0, np.pi])
        save_checkpoint(params, tmp_path / "c.txt")
        back = load_checkpoint(tmp_path / "c.txt")
        assert back.equals(params)
        assert back.meta["fusion"] == "gated" and back.meta["seed"] == 0

    def test_bad_files(self, tmp_path, write_text):
        with pytest.raises(MissingFile):
            load_checkpoint(tmp_path / "none.txt")
        with pytest.raises(MalformedRecord):
            load_checkpoint(write_text("hello\n", "x.txt"))
        with pytest.raises(MalformedRecord):
            load_checkpoint(write_text("teko-checkpoint v1\nvector a 3\n1 2\n", "y.txt"))
