import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import adjusted_rand_score, f1_score, normalized_mutual_info_score

from teko.errors import LengthMismatch, TooFewPoints
from teko.evaluation import (
    MetricsReport,
    classification_metrics,
    clustering_metrics,
    evaluate,
    kmeans,
    kmeans_run,
)

from helpers import brute_force_ari, brute_force_nmi

labels_st = st.lists(st.integers(0, 3), min_size=2, max_size=25)


def clouds(seed=0, k=3, per=10):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, 2)) * 100
    truth = np.repeat(np.arange(k), per)
    return centers[truth] + rng.uniform(-0.5, 0.5, size=(k * per, 2)), truth


class TestClassification:
    def test_identity(self):
        acc, f1, _ = classification_metrics([0, 1, 2], [0, 1, 2])
        assert acc == 1.0 and f1 == 1.0

    def test_arithmetic(self):
        acc, f1, table = classification_metrics([0, 0, 1], [0, 1, 1])
        assert acc == pytest.approx(2 / 3) and f1 == pytest.approx(2 / 3)
        assert table[0] == pytest.approx((0.5, 1.0, 2 / 3))
        assert table[1] == pytest.approx((1.0, 0.5, 2 / 3))

    def test_constant_predictor(self):
        acc, f1, _ = classification_metrics([0, 0, 0, 0], [0, 1, 0, 1])
        assert acc == 0.5 and f1 == pytest.approx(1 / 3)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            classification_metrics([0, 1], [0])

    @given(labels_st, st.randoms(use_true_random=False))
    def test_matches_reference_and_bounds(self, y, rnd):
        p = [rnd.randrange(4) for _ in y]
        acc, f1, _ = classification_metrics(p, y, num_classes=4)
        assert 0 <= acc <= 1 and 0 <= f1 <= 1
        ref = f1_score(y, p, labels=range(4), average="macro", zero_division=0)
        assert f1 == pytest.approx(ref, abs=1e-12)


class TestClustering:
    def test_relabeled_identity(self):
        assert clustering_metrics([0, 0, 1, 2], [5, 5, 3, 1]) == pytest.approx((1.0, 1.0))

    def test_single_cluster(self):
        assert clustering_metrics([0, 0, 0, 0], [0, 0, 1, 1])[0] == 0.0

    def test_pair_counting_example(self):
        a, b = [0, 0, 1, 1], [0, 1, 0, 1]
        assert clustering_metrics(a, b)[1] == pytest.approx(brute_force_ari(a, b), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            clustering_metrics([0, 1], [0, 1, 1])

    @given(labels_st, st.randoms(use_true_random=False))
    def test_matches_oracles(self, a, rnd):
        b = [rnd.randrange(3) for _ in a]
        nmi, ari = clustering_metrics(a, b)
        assert nmi == pytest.approx(brute_force_nmi(a, b), abs=1e-9)
        assert ari == pytest.approx(brute_force_ari(a, b), abs=1e-9)
        assert ari <= 1 + 1e-12
        assert nmi == pytest.approx(normalized_mutual_info_score(a, b, average_method="geometric"),
                                    abs=1e-9)
        assert ari == pytest.approx(adjusted_rand_score(a, b), abs=1e-9)

    @given(labels_st, st.permutations(range(4)), st.permutations(range(4)))
    def test_relabel_invariance(self, a, pa, pb):
        b = a[::-1]
        base = clustering_metrics(a, b)
        moved = clustering_metrics([pa[x] for x in a], [pb[x] for x in b])
        assert moved == pytest.approx(base, abs=1e-12)

    def test_random_partition_ari_near_zero(self):
        truth = np.repeat(np.arange(5), 10)
        aris = [clustering_metrics(np.random.default_rng(s).integers(0, 5, 50), truth)[1]
                for s in range(100)]
        assert -0.1 <= np.mean(aris) <= 0.1


class TestKMeans:
    @pytest.mark.parametrize("seed", range(5))
    def test_separated_clouds(self, seed):
        X, truth = clouds(seed)
        assert clustering_metrics(kmeans(X, 3, seed=seed), truth) == pytest.approx((1.0, 1.0))

    def test_k_one_and_k_n(self):
        X, _ = clouds()
        assert set(kmeans(X, 1)) == {0}
        res = kmeans_run(X[:6], 6)
        assert len(set(res.assignments)) == 6 and res.wcss == 0.0

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans(np.zeros((2, 2)), 3)

    @pytest.mark.parametrize("seed", range(5))
    def test_wcss_trace_non_increasing(self, seed):
        X = np.random.default_rng(seed).normal(size=(60, 3))
        trace = kmeans_run(X, 4, seed=seed, restarts=1).wcss_trace
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_deterministic(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        assert np.array_equal(kmeans(X, 3, seed=2), kmeans(X, 3, seed=2))


class TestReport:
    def test_single_seed_std_zero(self):
        out = np.eye(3)
        rep = evaluate({0: out}, np.array([0, 1, 2]), np.arange(3))
        assert rep.summary()["accuracy"] == (1.0, 0.0)

    def test_ten_seeds(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 3, 30)
        outs = {s: rng.random((30, 3)) for s in range(1, 11)}
        rep = evaluate(outs, labels, np.arange(30))
        vals = rep.per_seed["accuracy"]
        assert len(vals) == 10 and min(vals) <= rep.accuracy <= max(vals)

    def test_cluster_mode_uses_class_count(self):
        X, truth = clouds(k=4)
        rep = evaluate({0: X}, truth, np.arange(len(truth)), mode="cluster")
        assert rep.nmi == pytest.approx(1.0)

    def test_csv_and_dict(self, tmp_path):
        rep = MetricsReport("cluster")
        rep.add(0, {"nmi": 0.5, "ari": 0.25})
        rep.add(1, {"nmi": 0.7, "ari": 0.35})
        rep.to_csv(tmp_path / "m.csv")
        rows = (tmp_path / "m.csv").read_text().splitlines()
        assert rows[0] == "seed,nmi,ari" and rows[3].startswith("mean,")
        assert rep.to_dict()["summary"]["nmi"]["mean"] == pytest.approx(0.6)
        assert "nmi" in rep.format_table()
