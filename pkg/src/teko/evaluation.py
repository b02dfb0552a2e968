"""Classification and clustering metrics, k-means, and multi-seed reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch, TooFewPoints


def _pair(a, b, min_len=1):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    if len(a) != len(b) or len(a) < min_len:
        raise LengthMismatch(f"lengths {len(a)} and {len(b)} (need equal and >= {min_len})")
    return a, b


def classification_metrics(preds, labels, num_classes=None):
    """Accuracy, macro-F1 and a per-class ``(precision, recall, f1)`` table.

    Classes ``0 .. num_classes-1`` are scored; a class with no true and no
    predicted members scores F1 = 0.
    """
    preds, labels = _pair(preds, labels)
    preds, labels = preds.astype(np.int64), labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(max(preds.max(), labels.max())) + 1
    table = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        table.append((p, r, f1))
    accuracy = float(np.mean(preds == labels))
    macro_f1 = float(np.mean([row[2] for row in table])) if table else 0.0
    return accuracy, macro_f1, table


def _contingency(a, b):
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    M = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(M, (ai, bi), 1)
    return M


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def clustering_metrics(a, b):
    """NMI (geometric-mean normalization, natural logs) and ARI."""
    a, b = _pair(a, b, min_len=2)
    n = len(a)
    M = _contingency(a, b)
    ra, rb = M.sum(axis=1), M.sum(axis=0)
    ha, hb = _entropy(ra, n), _entropy(rb, n)
    nz = M > 0
    mi = float(np.sum(M[nz] / n * np.log(M[nz] * n / np.outer(ra, rb)[nz])))
    if M.shape[0] == M.shape[1] and np.count_nonzero(M) == M.shape[0] \
            and np.all(nz.sum(axis=1) == 1):
        nmi = 1.0  # identical up to relabeling
    elif ha == 0 or hb == 0:
        nmi = 0.0
    else:
        nmi = min(1.0, max(0.0, mi / math.sqrt(ha * hb)))

    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = float(np.sum(comb(M)))
    sum_a, sum_b = float(np.sum(comb(ra))), float(np.sum(comb(rb)))
    total = comb(n)
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        ari = 1.0
    else:
        ari = (sum_ij - expected) / (max_index - expected)
    return nmi, float(ari)


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    wcss_trace: list[float]


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _lloyd(X, centers, max_iter, tol):
    trace = []
    assign = None
    for _ in range(max_iter):
        d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(d, axis=1)
        trace.append(float(d[np.arange(len(X)), assign].sum()))
        new = centers.copy()
        for c in range(len(centers)):
            members = X[assign == c]
            if len(members):
                new[c] = members.mean(axis=0)
        shift = float(np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1))))
        centers = new
        if shift < tol:
            break
    d = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(d, axis=1)
    wcss = float(d[np.arange(len(X)), assign].sum())
    trace.append(wcss)
    return assign, centers, wcss, trace


def kmeans_run(X, k, seed=0, restarts=10, max_iter=300, tol=1e-8) -> KMeansResult:
    """k-means++ seeding then Lloyd iterations; best of ``restarts`` by WCSS.

    Restart ``r`` draws from ``default_rng([seed, r])`` so that restarts are
    independent of one another and of execution order.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("embeddings must be a 2-D array")
    if k < 1 or len(X) < k:
        raise TooFewPoints(f"need at least k={k} points, got {len(X)}")
    best = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng([seed, r])
        assign, centers, wcss, trace = _lloyd(X, _kmeans_pp(X, k, rng), max_iter, tol)
        if best is None or wcss < best.wcss:
            best = KMeansResult(assign, centers, wcss, trace)
    return best


def kmeans(X, k, seed=0, restarts=10) -> np.ndarray:
    return kmeans_run(X, k, seed, restarts).assignments


def mean_std(values):
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std


@dataclass
class MetricsReport:
    mode: str
    seeds: list[int] = field(default_factory=list)
    per_seed: dict[str, list[float]] = field(default_factory=dict)
    class_tables: list[list[tuple[float, float, float]]] = field(default_factory=list)

    METRICS = {"classify": ("accuracy", "macro_f1"), "cluster": ("nmi", "ari")}

    @property
    def metric_names(self):
        return self.METRICS[self.mode]

    def add(self, seed, values: dict, class_table=None):
        self.seeds.append(seed)
        for name in self.metric_names:
            self.per_seed.setdefault(name, []).append(float(values[name]))
        if class_table is not None:
            self.class_tables.append(class_table)

    def summary(self) -> dict[str, tuple[float, float]]:
        return {m: mean_std(self.per_seed.get(m, [])) for m in self.metric_names}

    def __getattr__(self, name):
        # accuracy / macro_f1 / nmi / ari read as seed means
        if name in ("accuracy", "macro_f1", "nmi", "ari"):
            per_seed = self.__dict__.get("per_seed", {})
            if name in per_seed:
                return mean_std(per_seed[name])[0]
        raise AttributeError(name)

    def to_csv(self, path) -> None:
        names = self.metric_names
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", *names])
            for i, s in enumerate(self.seeds):
                w.writerow([s, *(repr(self.per_seed[m][i]) for m in names)])
            summ = self.summary()
            w.writerow(["mean", *(repr(summ[m][0]) for m in names)])
            w.writerow(["std", *(repr(summ[m][1]) for m in names)])

    def to_dict(self) -> dict:
        return dict(mode=self.mode, seeds=list(self.seeds),
                    per_seed={k: list(v) for k, v in self.per_seed.items()},
                    summary={k: {"mean": m, "std": s} for k, (m, s) in self.summary().items()})

    def format_table(self) -> str:
        lines = [f"{'metric':<10} {'mean':>8} {'std':>8}   ({len(self.seeds)} seed(s))"]
        for name, (m, s) in self.summary().items():
            lines.append(f"{name:<10} {m:8.4f} {s:8.4f}")
        return "\n".join(lines)


def evaluate_outputs(outputs, labels, test_idx, mode="classify", num_classes=None,
                     seed=0, restarts=10) -> dict:
    """Metrics for one seed's model output.

    classify: argmax of the class rows at ``test_idx``.
    cluster: k-means with K = number of classes on the rows at ``test_idx``,
    scored against their labels.
    """
    outputs = np.asarray(outputs)
    labels = np.asarray(labels)
    idx = np.asarray(test_idx, dtype=np.int64)
    y = labels[idx]
    if num_classes is None:
        num_classes = int(y.max()) + 1
    if mode == "classify":
        acc, f1, table = classification_metrics(np.argmax(outputs[idx], axis=1), y, num_classes)
        return dict(accuracy=acc, macro_f1=f1, table=table)
    if mode == "cluster":
        assign = kmeans(outputs[idx], num_classes, seed=seed, restarts=restarts)
        nmi, ari = clustering_metrics(assign, y)
        return dict(nmi=nmi, ari=ari)
    raise ValueError(f"unknown evaluation mode {mode!r}")


def evaluate(outputs_by_seed: dict, labels, test_idx_by_seed, mode="classify",
             num_classes=None, restarts=10) -> MetricsReport:
    """Aggregate per-seed metrics into a :class:`MetricsReport`.

    ``test_idx_by_seed`` is either one index array shared by all seeds or a
    mapping from seed to index array.
    """
    report = MetricsReport(mode)
    for seed, out in outputs_by_seed.items():
        idx = test_idx_by_seed[seed] if isinstance(test_idx_by_seed, dict) else test_idx_by_seed
        vals = evaluate_outputs(out, labels, idx, mode, num_classes, seed, restarts)
        report.add(seed, vals, vals.get("table"))
    return report
